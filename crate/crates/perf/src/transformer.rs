//! Whole-model latency: per-layer linear costs plus fp32 attention and
//! nonlinear units, prefill over the prompt and token-by-token decode.
//!
//! Per layer and pass of `L` tokens over `kv` cached-plus-new entries:
//!
//! * linears: the sum of `max(T_mem, T_lat)` of each projection;
//! * attention: `max(2 h L kv d, k (h L kv + (h + h_kv) d L)) / (N_c Op_fp32)`,
//!   the larger of the QK/PV GEMMs and softmax plus RoPE at `k` ops per
//!   element on the same units;
//! * KV reads (decode only): `kv_bytes / C` for the cached entries;
//! * norms and gating run beside the linears, only their excess is exposed.
//!
//! Embedding lookup and the output head are outside the model.

use std::fmt;
use std::str::FromStr;

use lutllm_core::SchemeConfig;
use serde::{Deserialize, Serialize};

use crate::error::{PerfError, Result};
use crate::hw::HardwareProfile;
use crate::latency::{linear_latency, LayerShape};
use crate::model::{AttentionShape, LayerWorkload, ModelConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Prefill,
    Decode,
    End2end,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Prefill => "prefill",
            Stage::Decode => "decode",
            Stage::End2end => "end2end",
        })
    }
}

impl FromStr for Stage {
    type Err = PerfError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prefill" => Ok(Stage::Prefill),
            "decode" => Ok(Stage::Decode),
            "end2end" | "e2e" => Ok(Stage::End2end),
            other => Err(PerfError::InvalidModel(format!("unknown stage {other:?}"))),
        }
    }
}

/// Cost of one pass of one layer, in cycles (plus traffic and work).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PassCost {
    pub linear: f64,
    pub attention: f64,
    pub kv_load: f64,
    pub sfu_exposed: f64,
    /// Off-chip bytes read.
    pub bytes: f64,
    pub linear_bytes: f64,
    pub ops: f64,
    pub linear_ops: f64,
}

impl PassCost {
    pub fn total(&self) -> f64 {
        self.linear + self.attention + self.kv_load + self.sfu_exposed
    }

    fn add_scaled(&mut self, o: &PassCost, k: f64) {
        self.linear += k * o.linear;
        self.attention += k * o.attention;
        self.kv_load += k * o.kv_load;
        self.sfu_exposed += k * o.sfu_exposed;
        self.bytes += k * o.bytes;
        self.linear_bytes += k * o.linear_bytes;
        self.ops += k * o.ops;
        self.linear_ops += k * o.linear_ops;
    }
}

/// Attention cycles and ops for `l` queries over `kv` entries.
pub fn attention_cost(a: &AttentionShape, hw: &HardwareProfile, l: usize, kv: usize) -> (f64, f64) {
    let (h, hk, d) = (a.heads as f64, a.kv_heads as f64, a.head_dim as f64);
    let (l, kv) = (l as f64, kv as f64);
    let macs = 2.0 * h * l * kv * d;
    let sfu_elems = h * l * kv + (h + hk) * d * l;
    let cycles = (macs / hw.fp32_rate()).max(hw.sfu_ops_per_element * sfu_elems / hw.fp32_rate());
    (cycles, 2.0 * macs + hw.sfu_ops_per_element * sfu_elems)
}

pub fn kv_bytes_per_token(a: &AttentionShape) -> usize {
    2 * a.kv_heads * a.head_dim * 4
}

fn linear_part(w: &LayerWorkload, scheme: &SchemeConfig, hw: &HardwareProfile, l: usize) -> Result<PassCost> {
    let mut cost = PassCost::default();
    for p in &w.linears {
        let shape = LayerShape::new(p.m, p.d, l);
        let e = linear_latency(&shape, scheme, hw)?;
        cost.linear += e.overall;
        cost.linear_bytes += e.bytes;
        cost.linear_ops += shape.ops();
    }
    let sfu_ops = hw.sfu_ops_per_element * (w.sfu_elems_per_token * l) as f64;
    cost.sfu_exposed = (sfu_ops / hw.fp32_rate() - cost.linear).max(0.0);
    cost.bytes = cost.linear_bytes;
    cost.ops = cost.linear_ops + sfu_ops;
    Ok(cost)
}

fn with_attention(mut cost: PassCost, w: &LayerWorkload, hw: &HardwareProfile, l: usize, cached: usize) -> PassCost {
    if let Some(a) = &w.attention {
        if l > 0 {
            let (cycles, ops) = attention_cost(a, hw, l, cached + l);
            cost.attention = cycles;
            cost.ops += ops;
        }
        let kv_bytes = (cached * kv_bytes_per_token(a)) as f64;
        cost.kv_load = kv_bytes / hw.bandwidth_bytes_per_cycle;
        cost.bytes += kv_bytes;
    }
    cost
}

/// One layer pass: `l` new tokens, `cached` entries already in the KV cache.
pub fn layer_pass(
    w: &LayerWorkload,
    scheme: &SchemeConfig,
    hw: &HardwareProfile,
    l: usize,
    cached: usize,
) -> Result<PassCost> {
    Ok(with_attention(linear_part(w, scheme, hw, l)?, w, hw, l, cached))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformerEstimate {
    pub stage: Stage,
    pub prompt_len: usize,
    pub gen_len: usize,
    pub prefill_cycles: f64,
    pub decode_cycles: f64,
    /// Cycles of the requested stage.
    pub cycles: f64,
    /// Tokens of the stage per second: prompt tokens for prefill, generated
    /// tokens for decode, all tokens for end-to-end.
    pub tokens_per_s: f64,
    /// Per-layer cost summed over the passes of the requested stage.
    pub layer: PassCost,
    pub layers: usize,
}

impl TransformerEstimate {
    pub fn bytes(&self) -> f64 {
        self.layer.bytes * self.layers as f64
    }

    pub fn ops(&self) -> f64 {
        self.layer.ops * self.layers as f64
    }
}

/// Prefill of `prompt_len` tokens, then `gen_len` single-token decode passes;
/// decode pass `t` attends over `prompt_len + t + 1` entries.
pub fn workload_latency(
    w: &LayerWorkload,
    layers: usize,
    scheme: &SchemeConfig,
    hw: &HardwareProfile,
    prompt_len: usize,
    gen_len: usize,
    stage: Stage,
) -> Result<TransformerEstimate> {
    hw.validate()?;
    let prefill = layer_pass(w, scheme, hw, prompt_len, 0)?;
    let mut decode = PassCost::default();
    if gen_len > 0 {
        // linear terms do not depend on the cache length
        let linear = linear_part(w, scheme, hw, 1)?;
        for t in 0..gen_len {
            decode.add_scaled(&with_attention(linear, w, hw, 1, prompt_len + t), 1.0);
        }
    }
    let n = layers as f64;
    let (prefill_cycles, decode_cycles) = (n * prefill.total(), n * decode.total());
    let (cycles, tokens, layer) = match stage {
        Stage::Prefill => (prefill_cycles, prompt_len, prefill),
        Stage::Decode => (decode_cycles, gen_len, decode),
        Stage::End2end => {
            let mut both = prefill;
            both.add_scaled(&decode, 1.0);
            (prefill_cycles + decode_cycles, prompt_len + gen_len, both)
        }
    };
    let secs = hw.cycles_to_seconds(cycles);
    Ok(TransformerEstimate {
        stage,
        prompt_len,
        gen_len,
        prefill_cycles,
        decode_cycles,
        cycles,
        tokens_per_s: if secs > 0.0 { tokens as f64 / secs } else { 0.0 },
        layer,
        layers,
    })
}

pub fn transformer_latency(
    model: &ModelConfig,
    scheme: &SchemeConfig,
    hw: &HardwareProfile,
    prompt_len: usize,
    gen_len: usize,
    stage: Stage,
) -> Result<TransformerEstimate> {
    model.validate()?;
    workload_latency(&model.workload(), model.layers, scheme, hw, prompt_len, gen_len, stage)
}
