use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid search unit: {0}")]
    InvalidBpcsu(String),
    #[error("topology does not fit the layer: {0}")]
    TopologyMismatch(String),
    #[error("unsupported scheme: {0}")]
    UnsupportedScheme(String),
    #[error(transparent)]
    Perf(#[from] lutllm_perf::PerfError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SimError>;
