//! Vector-quantized building blocks for memory-based matrix multiplication.
//!
//! The crate covers the offline half of the pipeline (codebook training,
//! weight index tables, 1D/2D lookup tables and their per-tensor INT8 form)
//! and the online half (the dense oracle plus the weight-VQ, activation-VQ
//! and co-quantized lookup kernels). [`container`] holds the on-disk
//! `LUTLLM01` artifact format shared by the CLI and the model runner.

pub mod codebook;
pub mod container;
pub mod error;
pub mod kernels;
pub mod lut;
pub mod matrix;
pub mod pack;
pub mod scheme;
pub mod weights;

pub use codebook::{chebyshev, nearest_centroid, train_codebook, Codebook, KMeansOptions, KMeansReport};
pub use container::{Container, DType, Manifest, TensorEntry};
pub use error::{Error, Result};
pub use kernels::{
    coquant_accumulators, dense_matmul, dequantize_acc, matmul_activation_vq, matmul_coquant,
    matmul_weight_vq, reconstruct, train_act_codebooks, AccumulatorState, QuantizedLinear, SizeBreakdown,
    Tables,
};
pub use lut::{build_lut1d, build_lut2d, quantize_table_int8, Lut1D, Lut2D, QuantizedTable, TableData};
pub use matrix::Matrix;
pub use pack::{pack_indices, unpack_indices};
pub use scheme::{SchemeConfig, SchemeKind};
pub use weights::{derive_seed, quantize_weights, GroupLayout, WeightIndexTable};
