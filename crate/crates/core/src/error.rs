use thiserror::Error;

/// Errors raised across the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("input out of range: {0}")]
    Input(String),

    #[error("parameter coverage: {0}")]
    Coverage(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("gate feature version mismatch: model has {model}, extractor has {extractor}")]
    FeatureVersion { model: u32, extractor: u32 },

    #[error("data error: {0}")]
    Data(String),

    #[error("audit failed: {0}")]
    AuditFailed(String),

    #[error("gate checkpoint rejected: {0}")]
    GateRejected(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
