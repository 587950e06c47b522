//! Search/lookup engine sizing and the simulator's config file.

use std::path::Path;

use lutllm_core::{SchemeConfig, SchemeKind};
use lutllm_perf::{
    bpcsu_chain_length, linear_latency, search_lat_at, HardwareProfile, LayerShape, ModelConfig, Projection,
};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// On-chip memory shared by table buffers and attention intermediates,
/// roughly the block, ultra and distributed RAM of a V80-class device.
pub const DEFAULT_ON_CHIP_BITS: u64 = 500_000_000;

/// Paired search units and lookup-accumulate engines. The engines form one
/// serial cascade in `cascade` order (empty means `0, 1, ..`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineTopology {
    pub num_bpcsu: usize,
    pub chain_len: usize,
    #[serde(default)]
    pub cascade: Vec<usize>,
    /// Double-buffered step tables.
    pub lut_buffer_bits: u64,
    pub row_register_bits: u64,
    pub index_register_bits: u64,
    pub accumulator_bits: u64,
    #[serde(default = "default_on_chip")]
    pub on_chip_bits: u64,
}

fn default_on_chip() -> u64 {
    DEFAULT_ON_CHIP_BITS
}

/// A hardware profile plus an optional `"topology"` object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    #[serde(flatten)]
    pub hw: HardwareProfile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topology: Option<EngineTopology>,
}

impl SimConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SimConfig = serde_json::from_str(text)?;
        cfg.hw.validate()?;
        if let Some(t) = &cfg.topology {
            t.validate()?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        SimConfig::from_json(&std::fs::read_to_string(path)?)
    }
}

fn mismatch<T>(msg: String) -> Result<T> {
    Err(SimError::TopologyMismatch(msg))
}

pub(crate) fn require_coquant(cfg: &SchemeConfig) -> Result<()> {
    if cfg.kind != SchemeKind::Coquant {
        return Err(SimError::UnsupportedScheme(format!("the datapath runs co-quantized layers, got {}", cfg.kind)));
    }
    cfg.validate().map_err(|e| SimError::UnsupportedScheme(e.to_string()))
}

/// Table plus index bits streamed per step at width `s` (`D / s` steps).
pub(crate) fn step_table_bits(shape: &LayerShape, cfg: &SchemeConfig, s: usize) -> u64 {
    let (m, d) = (shape.m as f64, shape.d as f64);
    let (g, v) = (cfg.group_size as f64, cfg.vector_len as f64);
    let (c_a, c_w) = (cfg.act_centroids as f64, cfg.weight_centroids as f64);
    let bytes = m * d * c_a * c_w / (g * v) * cfg.table_bits as f64 / 8.0 + m * d * c_w.log2() / (8.0 * v);
    (8.0 * bytes * s as f64 / d).ceil() as u64
}

/// Search width used for one projection: the fewest units that reach the
/// analytic optimum `max(T_mem, T_lat)`, at most `cap`. Memory-bound layers
/// thus avoid wide searches whose cascade only adds latency.
pub fn projection_width(shape: &LayerShape, cfg: &SchemeConfig, hw: &HardwareProfile, cap: usize) -> Result<usize> {
    if shape.l == 0 {
        return Ok(1);
    }
    let e = linear_latency(shape, cfg, hw)?;
    let slices = shape.d / cfg.vector_len;
    let mut best: Option<(usize, f64)> = None;
    for s in (1..=cap.min(slices)).filter(|s| slices.is_multiple_of(*s)) {
        if let Some(t) = search_lat_at(shape, cfg, hw, s) {
            let overall = t.max(e.t_mem);
            if overall <= e.overall * (1.0 + 1e-12) {
                return Ok(s);
            }
            if best.is_none_or(|(_, b)| overall < b) {
                best = Some((s, overall));
            }
        }
    }
    best.map(|(s, _)| s).ok_or_else(|| SimError::TopologyMismatch(format!("no admissible width <= {cap}")))
}

impl EngineTopology {
    /// Sized for a set of projections run at the given token counts: as many
    /// units as the widest projection uses, and the longest chain that still
    /// hides the search under every projection's table load at its width.
    pub fn for_projections(
        projections: &[Projection],
        cfg: &SchemeConfig,
        hw: &HardwareProfile,
        token_counts: &[usize],
    ) -> Result<Self> {
        require_coquant(cfg)?;
        let mut s_max = 1;
        let mut step_bits = 0;
        let mut acc_bits = 0;
        let mut chain_len = cfg.act_centroids;
        for p in projections {
            for &l in token_counts {
                let shape = LayerShape::new(p.m, p.d, l);
                let s = projection_width(&shape, cfg, hw, usize::MAX)?;
                s_max = s_max.max(s);
                // each active unit streams its share of the bandwidth
                let c_bits = 8.0 * hw.bandwidth_bytes_per_cycle / s as f64;
                chain_len = chain_len.min(bpcsu_chain_length(
                    p.m,
                    cfg.group_size,
                    cfg.weight_centroids,
                    cfg.act_centroids,
                    c_bits,
                ));
                step_bits = step_bits.max(step_table_bits(&shape, cfg, s));
                acc_bits = acc_bits.max(32 * (p.m * l.max(1)) as u64);
            }
        }
        Ok(EngineTopology {
            num_bpcsu: s_max,
            chain_len,
            cascade: Vec::new(),
            lut_buffer_bits: 2 * step_bits,
            row_register_bits: (s_max * cfg.weight_centroids) as u64 * cfg.table_bits as u64,
            index_register_bits: (s_max * cfg.group_size) as u64 * cfg.index_bits() as u64,
            accumulator_bits: acc_bits,
            on_chip_bits: DEFAULT_ON_CHIP_BITS,
        })
    }

    pub fn for_layer(shape: &LayerShape, cfg: &SchemeConfig, hw: &HardwareProfile) -> Result<Self> {
        EngineTopology::for_projections(&[Projection::new("linear", shape.m, shape.d)], cfg, hw, &[shape.l])
    }

    /// Sized for prefill of `prompt_len` tokens and single-token decode.
    pub fn for_model(model: &ModelConfig, cfg: &SchemeConfig, hw: &HardwareProfile, prompt_len: usize) -> Result<Self> {
        EngineTopology::for_projections(&model.projections(), cfg, hw, &[prompt_len.max(1), 1])
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_bpcsu == 0 {
            return mismatch("at least one search unit is required".into());
        }
        if !self.chain_len.is_power_of_two() {
            return mismatch(format!("chain length {} is not a power of two", self.chain_len));
        }
        if !self.cascade.is_empty() {
            let mut seen = vec![false; self.num_bpcsu];
            for &i in &self.cascade {
                if i >= self.num_bpcsu || std::mem::replace(&mut seen[i], true) {
                    return mismatch(format!("cascade {:?} is not one chain over {} engines", self.cascade, self.num_bpcsu));
                }
            }
            if self.cascade.len() != self.num_bpcsu {
                return mismatch(format!("cascade {:?} is not one chain over {} engines", self.cascade, self.num_bpcsu));
            }
        }
        Ok(())
    }

    /// Checks that a projection at width `s` fits the engines.
    pub(crate) fn check(&self, shape: &LayerShape, cfg: &SchemeConfig, s: usize) -> Result<()> {
        self.validate()?;
        if s > self.num_bpcsu {
            return mismatch(format!("width {s} exceeds {} search units", self.num_bpcsu));
        }
        if self.chain_len > cfg.act_centroids {
            return mismatch(format!("chain length {} exceeds c_a = {}", self.chain_len, cfg.act_centroids));
        }
        let need = 2 * step_table_bits(shape, cfg, s);
        if need > self.lut_buffer_bits {
            return mismatch(format!("{need} table bits per double-buffered step exceed {}", self.lut_buffer_bits));
        }
        Ok(())
    }

    /// Engine-side buffer bits (tables, registers, accumulator).
    pub fn linear_bits(&self) -> u64 {
        self.lut_buffer_bits + self.row_register_bits + self.index_register_bits + self.accumulator_bits
    }
}
