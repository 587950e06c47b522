//! Per-linear-layer latency for every scheme.
//!
//! With `P = N_p b_p / t` lookup entries per cycle for `t`-bit tables and
//! `R(S) = (N_c - S c_a v / Op_fp32) Op_int8` accumulations per cycle left
//! after an `S`-wide centroid search:
//!
//! * weight VQ: `T_mem = (4MDc_w/Gv + MD log c_w / 8v) / C`,
//!   `T_lat = MD(log c_w / v + 32/Gv) / (N_p b_p) + MDL / min(N_c Op_fp32, N_p b_p / 32)`;
//! * activation VQ: `T_mem = (MDc_a/v + 4Dc_a/v) / C`,
//!   `T_tl(S) = SML / min(SM, P) + SML / min(SM, R(S), P)`;
//! * co-quantization: `T_mem = (MDc_ac_w/Gv + MD log c_w / 8v + 4Dc_a/v) / C`,
//!   `T_tl(S) = (SML/G) / min(SM/G, P) + SML / min(SM, R(S), P)`;
//!
//! and for both lookup schemes `T_lat = min_S (D/S) max(log c_a + L - 1, T_tl(S))`
//! over the divisors `S` of `D/v` that leave compute units for accumulation.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use lutllm_core::{SchemeConfig, SchemeKind};
use serde::{Deserialize, Serialize};

use crate::error::{PerfError, Result};
use crate::hw::HardwareProfile;

/// One matmul: an `M x D` weight against `L` tokens.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub m: usize,
    pub d: usize,
    pub l: usize,
}

impl LayerShape {
    pub fn new(m: usize, d: usize, l: usize) -> Self {
        LayerShape { m, d, l }
    }

    /// Multiply-accumulate count, two ops each.
    pub fn ops(&self) -> f64 {
        2.0 * self.m as f64 * self.d as f64 * self.l as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyEstimate {
    pub t_mem: f64,
    pub t_lat: f64,
    /// `max(t_mem, t_lat)`.
    pub overall: f64,
    /// Search width for the lookup schemes (`None` when nothing is searched).
    pub chosen_s: Option<usize>,
    /// Off-chip bytes behind `t_mem`.
    pub bytes: f64,
    /// Named components in cycles.
    pub terms: BTreeMap<String, f64>,
}

impl LatencyEstimate {
    fn new(t_mem: f64, t_lat: f64, chosen_s: Option<usize>, bytes: f64, terms: &[(&str, f64)]) -> Self {
        LatencyEstimate {
            t_mem,
            t_lat,
            overall: t_mem.max(t_lat),
            chosen_s,
            bytes,
            terms: terms.iter().map(|&(k, v)| (k.to_string(), v)).collect(),
        }
    }

    /// Overall latency rounded up to whole cycles.
    pub fn cycles(&self) -> u64 {
        self.overall.ceil() as u64
    }
}

/// Scalar baselines.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    Fp16,
    W4a8,
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::Fp16 => "fp16",
            Precision::W4a8 => "w4a8",
        })
    }
}

impl FromStr for Precision {
    type Err = PerfError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fp16" => Ok(Precision::Fp16),
            "w4a8" | "scalar_w4a8" => Ok(Precision::W4a8),
            other => Err(PerfError::InvalidScheme(format!("unknown precision {other:?}"))),
        }
    }
}

fn expect(cfg: &SchemeConfig, kind: SchemeKind) -> Result<()> {
    if cfg.kind != kind {
        return Err(PerfError::InvalidScheme(format!("expected {kind}, got {}", cfg.kind)));
    }
    cfg.validate().map_err(|e| PerfError::InvalidScheme(e.to_string()))
}

fn check_vectors(shape: &LayerShape, cfg: &SchemeConfig) -> Result<()> {
    if !shape.d.is_multiple_of(cfg.vector_len) {
        return Err(PerfError::InvalidScheme(format!("v = {} does not divide D = {}", cfg.vector_len, shape.d)));
    }
    Ok(())
}

pub fn weight_vq_latency(shape: &LayerShape, cfg: &SchemeConfig, hw: &HardwareProfile) -> Result<LatencyEstimate> {
    expect(cfg, SchemeKind::WeightVq)?;
    check_vectors(shape, cfg)?;
    let (m, d, l) = (shape.m as f64, shape.d as f64, shape.l as f64);
    let (g, v, c_w) = (cfg.group_size as f64, cfg.vector_len as f64, cfg.weight_centroids as f64);
    let log_cw = c_w.log2();
    let codebook_bytes = 4.0 * m * d * c_w / (g * v);
    let index_bytes = m * d * log_cw / (8.0 * v);
    let bytes = codebook_bytes + index_bytes;
    let t_mem = bytes / hw.bandwidth_bytes_per_cycle;
    let expand = m * d * (log_cw / v + 32.0 / (g * v)) / hw.port_bits();
    let mac = m * d * l / hw.fp32_rate().min(hw.port_bits() / 32.0);
    Ok(LatencyEstimate::new(
        t_mem,
        expand + mac,
        None,
        bytes,
        &[
            ("load_codebooks", codebook_bytes / hw.bandwidth_bytes_per_cycle),
            ("load_indices", index_bytes / hw.bandwidth_bytes_per_cycle),
            ("expand", expand),
            ("mac", mac),
        ],
    ))
}

/// Components of one search step at width `s`: (search, lookup, accumulate),
/// or `None` when the search leaves no units for accumulation.
pub fn step_terms(shape: &LayerShape, cfg: &SchemeConfig, hw: &HardwareProfile, s: usize) -> Option<(f64, f64, f64)> {
    let (m, l) = (shape.m as f64, shape.l as f64);
    let sf = s as f64;
    let (v, c_a) = (cfg.vector_len as f64, cfg.act_centroids as f64);
    let free_units = hw.compute_units - sf * c_a * v / hw.op_fp32;
    if free_units <= 0.0 {
        return None;
    }
    let acc_rate = free_units * hw.op_int8;
    let p = hw.port_bits() / cfg.table_bits as f64;
    let search = c_a.log2() + l - 1.0;
    let lookup = match cfg.kind {
        SchemeKind::Coquant => {
            let g = cfg.group_size as f64;
            (sf * m * l / g) / (sf * m / g).min(p)
        }
        _ => sf * m * l / (sf * m).min(p),
    };
    let accumulate = sf * m * l / (sf * m).min(acc_rate).min(p);
    Some((search, lookup, accumulate))
}

/// `(D/S) max(log c_a + L - 1, T_tl(S))`, or `None` when `S` is not
/// admissible (it does not divide `D/v` or leaves no accumulation units).
pub fn search_lat_at(shape: &LayerShape, cfg: &SchemeConfig, hw: &HardwareProfile, s: usize) -> Option<f64> {
    let slices = shape.d / cfg.vector_len;
    if s == 0 || !slices.is_multiple_of(s) {
        return None;
    }
    let (search, lookup, accumulate) = step_terms(shape, cfg, hw, s)?;
    Some(shape.d as f64 / s as f64 * search.max(lookup + accumulate))
}

fn lookup_latency(
    shape: &LayerShape,
    cfg: &SchemeConfig,
    hw: &HardwareProfile,
    bytes: &[(&str, f64)],
) -> Result<LatencyEstimate> {
    check_vectors(shape, cfg)?;
    let c = hw.bandwidth_bytes_per_cycle;
    let total: f64 = bytes.iter().map(|(_, b)| b).sum();
    let t_mem = total / c;
    let mut terms: Vec<(&str, f64)> = bytes.iter().map(|&(k, b)| (k, b / c)).collect();
    let slices = shape.d / cfg.vector_len;
    let mut best: Option<(usize, f64)> = None;
    for s in (1..=slices).filter(|s| slices.is_multiple_of(*s)) {
        if let Some(t) = search_lat_at(shape, cfg, hw, s) {
            if best.is_none_or(|(_, b)| t < b) {
                best = Some((s, t));
            }
        }
    }
    let (s, t_lat) = best.ok_or_else(|| {
        PerfError::NoAdmissibleWidth(format!(
            "even S = 1 needs {} compute units for the search",
            cfg.act_centroids * cfg.vector_len
        ))
    })?;
    if shape.l == 0 {
        return Ok(LatencyEstimate::new(t_mem, 0.0, None, total, &terms));
    }
    let (search, lookup, accumulate) = step_terms(shape, cfg, hw, s).expect("admissible");
    let steps = shape.d as f64 / s as f64;
    terms.extend([("search", steps * search), ("lookup", steps * lookup), ("accumulate", steps * accumulate)]);
    Ok(LatencyEstimate::new(t_mem, t_lat, Some(s), total, &terms))
}

fn table_bytes_per_entry(cfg: &SchemeConfig) -> f64 {
    cfg.table_bits as f64 / 8.0
}

pub fn activation_vq_latency(
    shape: &LayerShape,
    cfg: &SchemeConfig,
    hw: &HardwareProfile,
) -> Result<LatencyEstimate> {
    expect(cfg, SchemeKind::ActivationVq)?;
    let (m, d) = (shape.m as f64, shape.d as f64);
    let (v, c_a) = (cfg.vector_len as f64, cfg.act_centroids as f64);
    lookup_latency(
        shape,
        cfg,
        hw,
        &[("load_tables", m * d * c_a / v * table_bytes_per_entry(cfg)), ("load_codebooks", 4.0 * d * c_a / v)],
    )
}

pub fn coquant_latency(shape: &LayerShape, cfg: &SchemeConfig, hw: &HardwareProfile) -> Result<LatencyEstimate> {
    expect(cfg, SchemeKind::Coquant)?;
    let (m, d) = (shape.m as f64, shape.d as f64);
    let (g, v) = (cfg.group_size as f64, cfg.vector_len as f64);
    let (c_a, c_w) = (cfg.act_centroids as f64, cfg.weight_centroids as f64);
    lookup_latency(
        shape,
        cfg,
        hw,
        &[
            ("load_tables", m * d * c_a * c_w / (g * v) * table_bytes_per_entry(cfg)),
            ("load_indices", m * d * c_w.log2() / (8.0 * v)),
            ("load_codebooks", 4.0 * d * c_a / v),
        ],
    )
}

/// fp16: `2MD` bytes and `MDL` MACs at `min(N_c Op_fp32, N_p b_p / 16)`.
/// W4A8: `MD/2` bytes, one fp32 dequantization op per weight, then `MDL`
/// int8 MACs at `min(N_c Op_int8, N_p b_p / 4)`.
pub fn scalar_baseline_latency(shape: &LayerShape, precision: Precision, hw: &HardwareProfile) -> LatencyEstimate {
    let (m, d, l) = (shape.m as f64, shape.d as f64, shape.l as f64);
    let c = hw.bandwidth_bytes_per_cycle;
    match precision {
        Precision::Fp16 => {
            let bytes = 2.0 * m * d;
            let mac = m * d * l / hw.fp32_rate().min(hw.port_bits() / 16.0);
            LatencyEstimate::new(bytes / c, mac, None, bytes, &[("load_weights", bytes / c), ("mac", mac)])
        }
        Precision::W4a8 => {
            let bytes = m * d / 2.0;
            let dequant = m * d / hw.fp32_rate();
            let mac = m * d * l / (hw.compute_units * hw.op_int8).min(hw.port_bits() / 4.0);
            LatencyEstimate::new(
                bytes / c,
                dequant + mac,
                None,
                bytes,
                &[("load_weights", bytes / c), ("dequantize", dequant), ("mac", mac)],
            )
        }
    }
}

/// Latency under any scheme kind.
pub fn linear_latency(shape: &LayerShape, cfg: &SchemeConfig, hw: &HardwareProfile) -> Result<LatencyEstimate> {
    match cfg.kind {
        SchemeKind::WeightVq => weight_vq_latency(shape, cfg, hw),
        SchemeKind::ActivationVq => activation_vq_latency(shape, cfg, hw),
        SchemeKind::Coquant => coquant_latency(shape, cfg, hw),
        SchemeKind::Fp16 => Ok(scalar_baseline_latency(shape, Precision::Fp16, hw)),
        SchemeKind::ScalarW4a8 => Ok(scalar_baseline_latency(shape, Precision::W4a8, hw)),
    }
}
