//! Desk-scale grouped-query-attention transformer (RoPE, SwiGLU, RMSNorm)
//! whose projections run either dense or through the lookup-table kernels.
//!
//! Attention, softmax, norms, the embedding and the output head are always
//! fp32. A model is read-only once built; each generation owns its
//! [`KvCache`], so concurrent generations over one model are safe.

pub mod cache;
pub mod error;
pub mod model;
pub mod ops;
pub mod quantize;
pub mod weights;

pub use cache::KvCache;
pub use error::{Result, RunnerError};
pub use model::{
    argmax, compare_paths, cosine, decode_along, ffn_forward, generate, generate_with_logits, greedy_agreement, PathReport,
    Site,
};
pub use ops::{apply_rope, attention_forward, rms_norm, silu, softmax};
pub use quantize::{collect_activations, desk_scheme, quantize_model, snap_to_codebooks};
pub use weights::{projection_shapes, LayerWeights, Linear, TransformerWeights, DEFAULT_GAIN, PROJECTIONS};
