use std::io;

pub type Result<T, E = PerfError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum PerfError {
    #[error("invalid scheme: {0}")]
    InvalidScheme(String),

    #[error("no admissible search width S: {0}")]
    NoAdmissibleWidth(String),

    #[error("invalid hardware profile: {0}")]
    InvalidProfile(String),

    #[error("invalid model config: {0}")]
    InvalidModel(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
