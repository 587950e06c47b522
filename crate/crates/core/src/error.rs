use std::io;

use crate::scheme::SchemeKind;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("no vectors")]
    NoVectors,

    #[error("non-finite value")]
    NonFinite,

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("group/slice misalignment: {0}")]
    GroupSliceMisalignment(String),

    #[error("index {index} out of range for {bound} values")]
    IndexOutOfRange { index: usize, bound: usize },

    #[error("unsupported bit width {0}")]
    BitWidth(u32),

    #[error("scheme mismatch: expected {expected}, got {got}")]
    SchemeMismatch { expected: SchemeKind, got: SchemeKind },

    #[error("invalid scheme: {0}")]
    InvalidScheme(String),

    #[error("missing field: {0}")]
    MissingField(&'static str),

    #[error("artifact format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
