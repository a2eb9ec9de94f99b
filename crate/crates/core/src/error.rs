use thiserror::Error;

/// Invalid model, layout, timing or experiment settings.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("{what}: expected length {expected}, got {actual}")]
    LengthMismatch { what: String, expected: usize, actual: usize },
    #[error("unknown observation segment `{0}`")]
    UnknownSegment(String),
    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },
}

impl ConfigError {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ConfigError::Invalid { field: field.into(), reason: reason.into() }
    }

    pub(crate) fn check_len(what: &str, expected: usize, actual: usize) -> Result<(), Self> {
        if expected != actual {
            return Err(ConfigError::LengthMismatch { what: what.to_string(), expected, actual });
        }
        Ok(())
    }
}
