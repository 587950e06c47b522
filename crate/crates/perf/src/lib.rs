//! Analytic latency and roofline model for lookup-table LLM inference.
//!
//! Every estimate is in cycles and keeps fractional intermediate values;
//! `log` is base 2 throughout. A linear layer costs `max(T_mem, T_lat)`:
//! off-chip loading overlaps on-chip work under double buffering.

pub mod bpcsu;
pub mod error;
pub mod hw;
pub mod latency;
pub mod model;
pub mod roofline;
pub mod transformer;

pub use bpcsu::{bpcsu_chain_length, bpcsu_lhs, bpcsu_rhs};
pub use error::{PerfError, Result};
pub use hw::HardwareProfile;
pub use latency::{
    activation_vq_latency, coquant_latency, linear_latency, scalar_baseline_latency, search_lat_at,
    step_terms, weight_vq_latency, LatencyEstimate, LayerShape, Precision,
};
pub use model::{AttentionShape, LayerWorkload, ModelConfig, Projection};
pub use roofline::{roofline_csv, roofline_points, RooflinePoint};
pub use transformer::{transformer_latency, workload_latency, Stage, TransformerEstimate};
