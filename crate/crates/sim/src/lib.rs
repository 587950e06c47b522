//! Cycle-approximate simulator of a lookup-table LLM accelerator: centroid
//! search units, cascaded lookup-accumulate engines, attention and norm
//! units, scheduled over exclusive resources with integer cycles.

pub mod bpcsu;
mod engine;
pub mod error;
pub mod schedule;
pub mod topology;
pub mod trace;

pub use bpcsu::{simulate_bpcsu, BpcsuConfig};
pub use error::{Result, SimError};
pub use schedule::{
    attention_buffer_bits, layer_reloads, simulate_end_to_end, simulate_layer_schedule, simulate_lutlinear, EndToEnd,
    ScheduleMode, SimOptions,
};
pub use topology::{projection_width, EngineTopology, SimConfig};
pub use trace::{Event, LayerSpan, Resource, SimTrace};
