use thiserror::Error;

/// Configuration, schema and file-format failures.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unknown predictor {0:?}")]
    UnknownPredictor(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<serde_json::Error> for ConfigError {
    fn from(e: serde_json::Error) -> Self {
        ConfigError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}
