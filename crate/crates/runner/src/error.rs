use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("KV cache holds at most {capacity} entries, {needed} requested")]
    Capacity { needed: usize, capacity: usize },
    #[error("token {token} is outside the vocabulary of {vocab}")]
    Token { token: u32, vocab: usize },
    #[error("empty prompt")]
    EmptyPrompt,
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),
    #[error("unsupported scheme: {0}")]
    UnsupportedScheme(String),
    #[error("artifact: {0}")]
    Artifact(String),
    #[error(transparent)]
    Core(#[from] lutllm_core::Error),
    #[error(transparent)]
    Perf(#[from] lutllm_perf::PerfError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, RunnerError>;
