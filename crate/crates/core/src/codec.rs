//! Numeric vectors to and from the text the policy reads and writes.
//!
//! Five value encodings are supported. The default maps each dimension
//! linearly onto the integers `0..=resolution` after clamping to its range.
//! Integer modes round half away from zero.
//!
//! A history line is `obs tokens | action tokens`, tokens separated by single
//! spaces. The same bytes are used in prompts and in trajectory record
//! files (format tag [`FORMAT_VERSION`]).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::{Action, Observation};

pub const FORMAT_VERSION: &str = "p2w-v1";
pub const PAIR_SEPARATOR: &str = " | ";
pub const DEFAULT_RESOLUTION: u32 = 200;
const DECIMALS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum NormalizationMode {
    /// Original values, four decimals.
    Raw,
    /// Shifted by the range minimum, four decimals.
    Positive,
    /// Rounded to the nearest integer.
    Integer,
    /// Decimals discarded, then shifted by the truncated range minimum.
    TruncatePositiveInt,
    /// Linear map of the clamped range onto `0..=resolution`.
    PositiveInt,
}

impl NormalizationMode {
    pub const ALL: [NormalizationMode; 5] = [
        NormalizationMode::Raw,
        NormalizationMode::Positive,
        NormalizationMode::Integer,
        NormalizationMode::TruncatePositiveInt,
        NormalizationMode::PositiveInt,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NormalizationMode::Raw => "RAW",
            NormalizationMode::Positive => "POSITIVE",
            NormalizationMode::Integer => "INTEGER",
            NormalizationMode::TruncatePositiveInt => "TRUNCATE_POSITIVE_INT",
            NormalizationMode::PositiveInt => "POSITIVE_INT",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str().eq_ignore_ascii_case(s))
    }

    pub fn is_integer(self) -> bool {
        matches!(
            self,
            NormalizationMode::Integer | NormalizationMode::TruncatePositiveInt | NormalizationMode::PositiveInt
        )
    }

    /// Modes that clamp inputs to the declared range.
    fn clamps(self) -> bool {
        !matches!(self, NormalizationMode::Raw | NormalizationMode::Integer)
    }
}

impl std::fmt::Display for NormalizationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodecError {
    #[error("non-finite value {value} at dimension {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("expected {expected} values, got {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("invalid normalization spec: {0}")]
    InvalidSpec(String),
    #[error("token `{token}` at dimension {index} is not a valid {mode} value")]
    BadToken { token: String, index: usize, mode: NormalizationMode },
    #[error("token `{token}` at dimension {index} is outside the valid range")]
    TokenOutOfRange { token: String, index: usize },
    #[error("malformed response: found {found} of {expected} values")]
    MalformedResponse { raw: String, found: usize, expected: usize },
    #[error("response value `{token}` at dimension {index} is out of range")]
    OutOfRange { raw: String, token: String, index: usize },
    #[error("malformed record line: {0}")]
    BadLine(String),
}

impl CodecError {
    /// Raw model text carried by response-parsing errors.
    pub fn raw_text(&self) -> Option<&str> {
        match self {
            CodecError::MalformedResponse { raw, .. } | CodecError::OutOfRange { raw, .. } => Some(raw),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationSpec {
    pub mode: NormalizationMode,
    pub ranges: Vec<(f64, f64)>,
    pub resolution: u32,
}

/// Per-dimension text tokens.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedVector {
    pub tokens: Vec<String>,
}

impl TokenizedVector {
    pub fn dim(&self) -> usize {
        self.tokens.len()
    }

    pub fn join(&self) -> String {
        self.tokens.join(" ")
    }
}

fn format_decimal(x: f64) -> String {
    let s = format!("{x:.DECIMALS$}");
    // "-0.0000" would break the shifted modes' non-negativity; emit plain zero.
    if s.starts_with('-') && s[1..].bytes().all(|b| b == b'0' || b == b'.') {
        s[1..].to_string()
    } else {
        s
    }
}

/// Half of one unit in the last printed decimal.
const DECIMAL_SLACK: f64 = 0.5e-4;

impl NormalizationSpec {
    pub fn new(mode: NormalizationMode, ranges: Vec<(f64, f64)>, resolution: u32) -> Result<Self, CodecError> {
        let spec = Self { mode, ranges, resolution };
        spec.validate()?;
        Ok(spec)
    }

    pub fn positive_int(ranges: Vec<(f64, f64)>) -> Self {
        Self { mode: NormalizationMode::PositiveInt, ranges, resolution: DEFAULT_RESOLUTION }
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        if self.resolution < 2 {
            return Err(CodecError::InvalidSpec(format!("resolution {} < 2", self.resolution)));
        }
        for (i, &(lo, hi)) in self.ranges.iter().enumerate() {
            if !lo.is_finite() || !hi.is_finite() || !(lo < hi) {
                return Err(CodecError::InvalidSpec(format!("range {i} is ({lo}, {hi})")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.ranges.len()
    }

    /// Value granularity of dimension `i` in integer-mapped mode.
    pub fn quantization_step(&self, i: usize) -> f64 {
        let (lo, hi) = self.ranges[i];
        (hi - lo) / self.resolution as f64
    }

    fn check_dim(&self, n: usize) -> Result<(), CodecError> {
        if n != self.dim() {
            return Err(CodecError::DimMismatch { expected: self.dim(), actual: n });
        }
        Ok(())
    }

    /// Encodes one value; returns the token and whether it was clamped.
    fn encode(&self, i: usize, x: f64) -> Result<(String, bool), CodecError> {
        if !x.is_finite() {
            return Err(CodecError::NonFinite { index: i, value: x });
        }
        let (lo, hi) = self.ranges[i];
        let c = x.clamp(lo, hi);
        let saturated = self.mode.clamps() && c != x;
        let token = match self.mode {
            NormalizationMode::Raw => format_decimal(x),
            NormalizationMode::Positive => format_decimal(c - lo),
            NormalizationMode::Integer => (x.round() as i64).to_string(),
            NormalizationMode::TruncatePositiveInt => ((c.trunc() - lo.trunc()) as i64).to_string(),
            NormalizationMode::PositiveInt => {
                let k = ((c - lo) / (hi - lo) * self.resolution as f64).round();
                (k as u32).min(self.resolution).to_string()
            }
        };
        Ok((token, saturated))
    }

    /// Decodes one token; `None` means it is not a token of this mode.
    fn decode(&self, i: usize, token: &str) -> Result<f64, CodecError> {
        let (lo, hi) = self.ranges[i];
        let bad = || CodecError::BadToken { token: token.to_string(), index: i, mode: self.mode };
        let out_of_range = || CodecError::TokenOutOfRange { token: token.to_string(), index: i };
        if !is_number_token(token, self.mode.is_integer()) {
            return Err(bad());
        }
        match self.mode {
            NormalizationMode::Raw | NormalizationMode::Positive => {
                let v: f64 = token.parse().map_err(|_| bad())?;
                if !v.is_finite() {
                    return Err(out_of_range());
                }
                if self.mode == NormalizationMode::Raw {
                    return Ok(v);
                }
                if v < 0.0 || v > hi - lo + DECIMAL_SLACK {
                    return Err(out_of_range());
                }
                Ok(lo + v)
            }
            NormalizationMode::Integer => {
                let k: i64 = token.parse().map_err(|_| out_of_range())?;
                Ok(k as f64)
            }
            NormalizationMode::TruncatePositiveInt => {
                let k: i64 = token.parse().map_err(|_| out_of_range())?;
                let span = (hi.trunc() - lo.trunc()) as i64;
                if k < 0 || k > span {
                    return Err(out_of_range());
                }
                Ok(k as f64 + lo.trunc())
            }
            NormalizationMode::PositiveInt => {
                let k: i64 = token.parse().map_err(|_| out_of_range())?;
                if k < 0 || k > self.resolution as i64 {
                    return Err(out_of_range());
                }
                Ok(lo + k as f64 / self.resolution as f64 * (hi - lo))
            }
        }
    }
}

/// Encodes `x` dimension by dimension under `spec`.
pub fn normalize(x: &[f64], spec: &NormalizationSpec) -> Result<TokenizedVector, CodecError> {
    normalize_counting(x, spec).map(|(t, _)| t)
}

/// Like [`normalize`], also returning how many values were clamped.
pub fn normalize_counting(x: &[f64], spec: &NormalizationSpec) -> Result<(TokenizedVector, usize), CodecError> {
    spec.check_dim(x.len())?;
    let mut saturated = 0;
    let mut tokens = Vec::with_capacity(x.len());
    for (i, &v) in x.iter().enumerate() {
        let (t, s) = spec.encode(i, v)?;
        saturated += s as usize;
        tokens.push(t);
    }
    Ok((TokenizedVector { tokens }, saturated))
}

pub fn denormalize(tokens: &TokenizedVector, spec: &NormalizationSpec) -> Result<Vec<f64>, CodecError> {
    spec.check_dim(tokens.dim())?;
    tokens.tokens.iter().enumerate().map(|(i, t)| spec.decode(i, t)).collect()
}

/// The value a number becomes after a trip through text.
pub fn quantize(x: &[f64], spec: &NormalizationSpec) -> Result<Vec<f64>, CodecError> {
    denormalize(&normalize(x, spec)?, spec)
}

/// `-?digits` for integer modes, `-?digits(.digits)?` otherwise.
fn is_number_token(s: &str, integer: bool) -> bool {
    let body = s.strip_prefix('-').unwrap_or(s);
    let (int_part, frac) = match body.split_once('.') {
        Some((a, b)) => (a, Some(b)),
        None => (body, None),
    };
    if int_part.is_empty() || !int_part.bytes().all(|b| b.is_ascii_digit()) {
        return false;
    }
    match frac {
        None => true,
        Some(_) if integer => false,
        Some(f) => !f.is_empty() && f.bytes().all(|b| b.is_ascii_digit()),
    }
}

fn is_separator(c: char) -> bool {
    c.is_whitespace() || matches!(c, ',' | ';' | '[' | ']' | '(' | ')' | '{' | '}' | '"' | '\'' | '`')
}

/// Numeric tokens of the first run of at least `expected_dim` numbers in
/// free-form text. Words that are not numbers (prose, `|`) end a run.
fn first_numeric_run(text: &str, integer: bool, expected_dim: usize) -> Result<Vec<&str>, usize> {
    let mut run: Vec<&str> = Vec::new();
    let mut longest = 0;
    for word in text.split(is_separator).filter(|w| !w.is_empty()) {
        let candidate = if is_number_token(word, integer) {
            Some(word)
        } else {
            // A sentence-ending period after the last number.
            word.strip_suffix('.').filter(|w| is_number_token(w, integer))
        };
        match candidate {
            Some(tok) => {
                run.push(tok);
                if run.len() == expected_dim {
                    return Ok(run);
                }
            }
            None => {
                longest = longest.max(run.len());
                run.clear();
            }
        }
    }
    Err(longest.max(run.len()))
}

/// Extracts an action from untrusted model output.
///
/// Takes the first run of `expected_dim` numeric tokens, skipping prose,
/// commas and brackets, and decodes it under `spec`. Never panics.
pub fn parse_action_text(text: &str, spec: &NormalizationSpec, expected_dim: usize) -> Result<Action, CodecError> {
    spec.check_dim(expected_dim)?;
    let raw = || text.to_string();
    let tokens = first_numeric_run(text, spec.mode.is_integer(), expected_dim)
        .map_err(|found| CodecError::MalformedResponse { raw: raw(), found, expected: expected_dim })?;
    let mut values = Vec::with_capacity(expected_dim);
    for (i, tok) in tokens.iter().enumerate() {
        let v = spec.decode(i, tok).map_err(|_| CodecError::OutOfRange {
            raw: raw(),
            token: tok.to_string(),
            index: i,
        })?;
        values.push(v);
    }
    Ok(Action(values))
}

/// Observation and action specs sharing one mode and resolution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineCodec {
    pub obs: NormalizationSpec,
    pub action: NormalizationSpec,
}

impl LineCodec {
    pub fn new(
        mode: NormalizationMode,
        obs_ranges: Vec<(f64, f64)>,
        action_ranges: Vec<(f64, f64)>,
        resolution: u32,
    ) -> Result<Self, CodecError> {
        Ok(Self {
            obs: NormalizationSpec::new(mode, obs_ranges, resolution)?,
            action: NormalizationSpec::new(mode, action_ranges, resolution)?,
        })
    }

    pub fn mode(&self) -> NormalizationMode {
        self.obs.mode
    }

    pub fn resolution(&self) -> u32 {
        self.obs.resolution
    }

    pub fn encode_obs(&self, obs: &Observation) -> Result<String, CodecError> {
        Ok(normalize(&obs.0, &self.obs)?.join())
    }

    pub fn encode_action(&self, action: &Action) -> Result<String, CodecError> {
        Ok(normalize(&action.0, &self.action)?.join())
    }

    /// One history line, without a trailing newline.
    pub fn encode_pair(&self, obs: &Observation, action: &Action) -> Result<String, CodecError> {
        Ok(format!("{}{PAIR_SEPARATOR}{}", self.encode_obs(obs)?, self.encode_action(action)?))
    }

    /// Inverse of [`LineCodec::encode_pair`] up to quantization.
    pub fn decode_pair(&self, line: &str) -> Result<(Observation, Action), CodecError> {
        let (obs_text, act_text) = line
            .split_once(PAIR_SEPARATOR.trim())
            .ok_or_else(|| CodecError::BadLine(line.to_string()))?;
        let split = |s: &str| TokenizedVector { tokens: s.split_whitespace().map(str::to_string).collect() };
        let obs = denormalize(&split(obs_text), &self.obs)?;
        let act = denormalize(&split(act_text), &self.action)?;
        Ok((Observation(obs), Action(act)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(mode: NormalizationMode, lo: f64, hi: f64) -> NormalizationSpec {
        NormalizationSpec::new(mode, vec![(lo, hi)], 200).unwrap()
    }

    fn tok(x: f64, s: &NormalizationSpec) -> String {
        normalize(&[x], s).unwrap().tokens.remove(0)
    }

    #[test]
    fn positive_int_endpoints_and_midpoint() {
        let s = spec(NormalizationMode::PositiveInt, -1.0, 1.0);
        assert_eq!(tok(-1.0, &s), "0");
        assert_eq!(tok(1.0, &s), "200");
        assert_eq!(tok(0.0, &s), "100");
        assert_eq!(denormalize(&TokenizedVector { tokens: vec!["100".into()] }, &s).unwrap(), vec![0.0]);
    }

    #[test]
    fn positive_int_asymmetric_value() {
        // Grid oracle: the token whose decoded value is nearest to x.
        let s = spec(NormalizationMode::PositiveInt, -0.8, 0.8);
        let x = 0.2;
        let best = (0..=200)
            .min_by(|a, b| {
                let da = (-0.8 + *a as f64 / 200.0 * 1.6 - x).abs();
                let db = (-0.8 + *b as f64 / 200.0 * 1.6 - x).abs();
                da.partial_cmp(&db).unwrap()
            })
            .unwrap();
        assert_eq!(best, 125);
        assert_eq!(tok(x, &s), "125");
    }

    #[test]
    fn raw_formatting() {
        let s = spec(NormalizationMode::Raw, -1.0, 1.0);
        assert_eq!(tok(-0.5321, &s), "-0.5321");
        assert_eq!(tok(-0.00001, &s), "0.0000");
        assert_eq!(tok(3.5, &s), "3.5000");
    }

    #[test]
    fn other_modes() {
        let s = spec(NormalizationMode::Positive, -1.2, 1.2);
        assert_eq!(tok(0.0, &s), "1.2000");
        assert_eq!(tok(-5.0, &s), "0.0000");
        let s = spec(NormalizationMode::Integer, -2.4, -0.3);
        assert_eq!(tok(-1.5, &s), "-2");
        assert_eq!(tok(-1.4, &s), "-1");
        let s = spec(NormalizationMode::TruncatePositiveInt, -2.4, -0.3);
        // trunc(-1.9) = -1, trunc(-2.4) = -2  =>  1
        assert_eq!(tok(-1.9, &s), "1");
        assert_eq!(tok(-2.3, &s), "0");
        let s = spec(NormalizationMode::TruncatePositiveInt, -8.0, 8.0);
        assert_eq!(tok(3.7, &s), "11");
    }

    #[test]
    fn half_rounds_away_from_zero() {
        // (0.0025 + 1) / 2 * 200 is not exact in binary; use a range where it is.
        let s = spec(NormalizationMode::PositiveInt, 0.0, 400.0);
        assert_eq!(tok(1.0, &s), "1"); // 0.5 -> 1
        assert_eq!(tok(3.0, &s), "2"); // 1.5 -> 2
        let s = spec(NormalizationMode::Integer, -10.0, 10.0);
        assert_eq!(tok(-2.5, &s), "-3");
        assert_eq!(tok(2.5, &s), "3");
    }

    #[test]
    fn errors() {
        let s = spec(NormalizationMode::PositiveInt, -1.0, 1.0);
        assert!(matches!(normalize(&[f64::NAN], &s), Err(CodecError::NonFinite { .. })));
        assert!(matches!(normalize(&[0.0, 0.0], &s), Err(CodecError::DimMismatch { .. })));
        let t = TokenizedVector { tokens: vec!["201".into()] };
        assert!(matches!(denormalize(&t, &s), Err(CodecError::TokenOutOfRange { .. })));
        let t = TokenizedVector { tokens: vec!["-1".into()] };
        assert!(denormalize(&t, &s).is_err());
        let t = TokenizedVector { tokens: vec!["1.5".into()] };
        assert!(matches!(denormalize(&t, &s), Err(CodecError::BadToken { .. })));
        assert!(NormalizationSpec::new(NormalizationMode::Raw, vec![(1.0, 1.0)], 200).is_err());
        assert!(NormalizationSpec::new(NormalizationMode::Raw, vec![(0.0, 1.0)], 1).is_err());
    }

    #[test]
    fn parse_prose_and_brackets() {
        let s = NormalizationSpec::positive_int(vec![(-1.0, 1.0); 3]);
        let a = parse_action_text("The next action is: [95, 102, 88].", &s, 3).unwrap();
        assert!((a.0[0] - (-0.05)).abs() < 1e-12);
        assert!((a.0[1] - 0.02).abs() < 1e-12);
        assert!((a.0[2] - (-0.12)).abs() < 1e-12);
        // A lone step number does not start the run.
        let a = parse_action_text("Step 7: 100 100 100", &s, 3).unwrap();
        assert_eq!(a.0, vec![0.0; 3]);
        let a = parse_action_text("100 200 0 150", &s, 3).unwrap();
        assert_eq!(a.0, vec![0.0, 1.0, -1.0]);
    }

    #[test]
    fn parse_errors_carry_raw_text() {
        let s = NormalizationSpec::positive_int(vec![(-1.0, 1.0); 3]);
        let e = parse_action_text("sorry, I cannot", &s, 3).unwrap_err();
        assert!(matches!(e, CodecError::MalformedResponse { found: 0, expected: 3, .. }));
        assert_eq!(e.raw_text(), Some("sorry, I cannot"));
        let e = parse_action_text("1 2", &s, 3).unwrap_err();
        assert!(matches!(e, CodecError::MalformedResponse { found: 2, .. }));
        let e = parse_action_text("5 250 7", &s, 3).unwrap_err();
        assert!(matches!(e, CodecError::OutOfRange { index: 1, .. }));
        // Model name like A1 is not a number, and decimals are not integer tokens.
        assert!(parse_action_text("A1 1.5 2.5 3.5", &s, 3).is_err());
    }

    #[test]
    fn parse_decimal_modes() {
        let s = NormalizationSpec::new(NormalizationMode::Raw, vec![(-1.0, 1.0); 2], 200).unwrap();
        let a = parse_action_text("targets: -0.5321, 0.25", &s, 2).unwrap();
        assert_eq!(a.0, vec![-0.5321, 0.25]);
    }

    #[test]
    fn pair_line_roundtrip() {
        let codec = LineCodec::new(
            NormalizationMode::PositiveInt,
            vec![(-1.0, 1.0), (-2.0, 2.0)],
            vec![(0.0, 1.0)],
            200,
        )
        .unwrap();
        let line = codec.encode_pair(&Observation(vec![0.0, 2.0]), &Action(vec![0.5])).unwrap();
        assert_eq!(line, "100 200 | 100");
        let (o, a) = codec.decode_pair(&line).unwrap();
        assert_eq!(o.0, vec![0.0, 2.0]);
        assert_eq!(a.0, vec![0.5]);
        assert!(codec.decode_pair("100 200 100").is_err());
    }

    #[test]
    fn saturation_is_counted() {
        let s = NormalizationSpec::positive_int(vec![(-1.0, 1.0); 3]);
        let (t, n) = normalize_counting(&[-3.0, 0.0, 1.5], &s).unwrap();
        assert_eq!(t.join(), "0 100 200");
        assert_eq!(n, 2);
    }
}
