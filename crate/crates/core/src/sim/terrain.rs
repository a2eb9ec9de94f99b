use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Terrain settings as they appear in experiment configs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerrainConfig {
    /// Peak deviation from flat ground (m). Zero means flat.
    #[serde(default)]
    pub amplitude: f64,
    /// Fixed terrain seed; `None` derives one per trial from the master seed.
    #[serde(default)]
    pub seed: Option<u64>,
}

/// Piecewise-linear ground profile `h(x)` sampled from seeded noise.
#[derive(Clone, Debug, PartialEq)]
pub struct Terrain {
    amplitude: f64,
    spacing: f64,
    x_min: f64,
    heights: Vec<f64>,
}

const NODE_SPACING: f64 = 0.1;
const SPAN: (f64, f64) = (-10.0, 100.0);
/// Heights are ramped in over this distance around x = 0 so the robot starts on level ground.
const FLAT_START: f64 = 0.3;

impl Terrain {
    pub fn flat() -> Self {
        Self { amplitude: 0.0, spacing: NODE_SPACING, x_min: SPAN.0, heights: Vec::new() }
    }

    pub fn uneven(amplitude: f64, seed: u64) -> Self {
        if amplitude == 0.0 {
            return Self::flat();
        }
        let n = ((SPAN.1 - SPAN.0) / NODE_SPACING).ceil() as usize + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let heights = (0..n)
            .map(|i| {
                let x = SPAN.0 + i as f64 * NODE_SPACING;
                let ramp = ((x.abs() - FLAT_START) / FLAT_START).clamp(0.0, 1.0);
                amplitude * rng.random_range(-1.0..=1.0) * ramp
            })
            .collect();
        Self { amplitude, spacing: NODE_SPACING, x_min: SPAN.0, heights }
    }

    pub fn from_config(cfg: &TerrainConfig, fallback_seed: u64) -> Self {
        Self::uneven(cfg.amplitude, cfg.seed.unwrap_or(fallback_seed))
    }

    pub fn is_flat(&self) -> bool {
        self.heights.is_empty()
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    fn segment(&self, x: f64) -> Option<(usize, f64)> {
        if self.heights.len() < 2 {
            return None;
        }
        let u = (x - self.x_min) / self.spacing;
        if u < 0.0 || u >= (self.heights.len() - 1) as f64 {
            return None;
        }
        let i = u.floor() as usize;
        Some((i, u - i as f64))
    }

    pub fn height(&self, x: f64) -> f64 {
        match self.segment(x) {
            Some((i, f)) => self.heights[i] * (1.0 - f) + self.heights[i + 1] * f,
            None => 0.0,
        }
    }

    pub fn slope(&self, x: f64) -> f64 {
        match self.segment(x) {
            Some((i, _)) => (self.heights[i + 1] - self.heights[i]) / self.spacing,
            None => 0.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_is_zero_everywhere() {
        let t = Terrain::flat();
        for x in [-50.0, -1.0, 0.0, 3.3, 1e4] {
            assert_eq!(t.height(x), 0.0);
            assert_eq!(t.slope(x), 0.0);
        }
        assert_eq!(Terrain::uneven(0.0, 9), t);
    }

    #[test]
    fn uneven_is_seeded_bounded_and_continuous() {
        let a = Terrain::uneven(0.02, 7);
        let b = Terrain::uneven(0.02, 7);
        let c = Terrain::uneven(0.02, 8);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.height(0.0), 0.0);
        let mut x = -5.0;
        while x < 20.0 {
            let h = a.height(x);
            assert!(h.abs() <= 0.02 + 1e-12);
            assert!((a.height(x + 1e-7) - h).abs() < 1e-5);
            x += 0.013;
        }
    }
}
