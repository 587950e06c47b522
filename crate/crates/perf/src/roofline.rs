//! Roofline points over sequence-length sweeps.

use std::fmt::Write as _;

use lutllm_core::SchemeConfig;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::hw::HardwareProfile;
use crate::latency::{linear_latency, LayerShape};
use crate::model::ModelConfig;
use crate::transformer::{transformer_latency, Stage};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RooflinePoint {
    pub seq_len: usize,
    pub scheme: String,
    pub stage: Stage,
    pub cycles: f64,
    pub tokens_per_s: f64,
    /// Modeled ops per off-chip byte, whole model.
    pub intensity: f64,
    /// Ops per byte of the linear layers alone.
    pub linear_intensity: f64,
    /// Attained ops per cycle.
    pub throughput: f64,
    /// `min(compute roof, intensity * C)`.
    pub roof: f64,
}

/// Linear-layer ops per cycle once on-chip work dominates (very long inputs).
pub fn compute_roof(model: &ModelConfig, scheme: &SchemeConfig, hw: &HardwareProfile) -> Result<f64> {
    const LONG: usize = 1 << 16;
    let (mut ops, mut cycles) = (0.0, 0.0);
    for p in model.projections() {
        let shape = LayerShape::new(p.m, p.d, LONG);
        ops += shape.ops();
        cycles += linear_latency(&shape, scheme, hw)?.t_lat;
    }
    Ok(ops / cycles)
}

pub fn roof(compute_roof: f64, bandwidth: f64, intensity: f64) -> f64 {
    compute_roof.min(intensity * bandwidth)
}

/// Prefill points run `seq_len` prompt tokens; decode points generate one
/// token after a `seq_len`-token context; end-to-end generates `seq_len`
/// tokens after a `seq_len`-token prompt.
pub fn roofline_points(
    model: &ModelConfig,
    scheme: &SchemeConfig,
    hw: &HardwareProfile,
    seq_lens: &[usize],
    stage: Stage,
) -> Result<Vec<RooflinePoint>> {
    let top = compute_roof(model, scheme, hw)?;
    seq_lens
        .iter()
        .map(|&n| {
            let e = match stage {
                Stage::Prefill => transformer_latency(model, scheme, hw, n, 0, stage)?,
                Stage::Decode => transformer_latency(model, scheme, hw, n, 1, stage)?,
                Stage::End2end => transformer_latency(model, scheme, hw, n, n, stage)?,
            };
            let intensity = e.ops() / e.bytes();
            Ok(RooflinePoint {
                seq_len: n,
                scheme: scheme.kind.to_string(),
                stage,
                cycles: e.cycles,
                tokens_per_s: e.tokens_per_s,
                intensity,
                linear_intensity: e.layer.linear_ops / e.layer.linear_bytes,
                throughput: e.ops() / e.cycles,
                roof: roof(top, hw.bandwidth_bytes_per_cycle, intensity),
            })
        })
        .collect()
}

pub const CSV_HEADER: &str = "seq_len,scheme,stage,cycles,tokens_per_s,intensity";

pub fn roofline_csv(points: &[RooflinePoint]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for p in points {
        let _ = writeln!(
            out,
            "{},{},{},{:.0},{:.3},{:.6}",
            p.seq_len,
            p.scheme,
            p.stage,
            p.cycles.ceil(),
            p.tokens_per_s,
            p.intensity
        );
    }
    out
}
