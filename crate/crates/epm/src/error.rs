use thiserror::Error;

/// Errors produced by model fitting, prediction, and data handling.
#[derive(Debug, Error)]
pub enum EpmError {
    #[error("unresolved id: {0}")]
    UnresolvedId(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("encoding error: {0}")]
    Encoding(String),
    #[error("empty predictor matrix: {0}")]
    EmptyPredictors(String),
    #[error("singular system: {0}")]
    Singular(String),
    #[error("arity mismatch: expected {expected}, got {got}")]
    ArityMismatch { expected: usize, got: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("training error: {0}")]
    Training(String),
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("model format error: {0}")]
    Format(String),
    #[error("feature unavailable: {0}")]
    FeatureUnavailable(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

pub type Result<T> = std::result::Result<T, EpmError>;
