//! Layer and whole-model schedules.
//!
//! * `Hybrid`: the lookup engine runs projections one after another, each
//!   iterating tokens with its codebooks loaded once; attention and the gate
//!   consume its outputs in chunks as they become available.
//! * `Sequential`: every unit finishes an operation before its consumer
//!   starts, so attention keeps full intermediates on chip and the lookup
//!   engine loses the matching share of memory ports.
//! * `Dataflow`: projections emit partial outputs along the hidden dimension,
//!   so codebooks are reloaded per input slice and the search restarts for
//!   every token.

use std::fmt;
use std::str::FromStr;

use lutllm_core::SchemeConfig;
use lutllm_perf::transformer::kv_bytes_per_token;
use lutllm_perf::{AttentionShape, HardwareProfile, LayerShape, LayerWorkload, ModelConfig, Projection, Stage};
use serde::{Deserialize, Serialize};

use crate::engine::{ceil_cycles, part, run_linear, LinearPlan, LutBuffer, Sched};
use crate::error::{Result, SimError};
use crate::topology::{projection_width, require_coquant, EngineTopology};
use crate::trace::{LayerSpan, Resource, SimTrace};

/// KV write-out channel group: 4 channels of 256 bits.
pub const KV_WRITE_BYTES_PER_CYCLE: f64 = 128.0;
/// Upper bound on streamed chunks per attention or gate pass.
pub const MAX_CHUNKS: usize = 64;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    Dataflow,
    Sequential,
    #[default]
    Hybrid,
}

impl fmt::Display for ScheduleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScheduleMode::Dataflow => "dataflow",
            ScheduleMode::Sequential => "sequential",
            ScheduleMode::Hybrid => "hybrid",
        })
    }
}

impl FromStr for ScheduleMode {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dataflow" => Ok(ScheduleMode::Dataflow),
            "sequential" => Ok(ScheduleMode::Sequential),
            "hybrid" => Ok(ScheduleMode::Hybrid),
            other => Err(SimError::UnsupportedScheme(format!("unknown schedule mode {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimOptions {
    pub mode: ScheduleMode,
    /// Keep every event in the trace (large for big models).
    pub record_events: bool,
}

impl ScheduleMode {
    fn streams(self) -> bool {
        self != ScheduleMode::Sequential
    }
}

/// Bits of live attention intermediates for `l` queries over `kv` entries.
pub fn attention_buffer_bits(a: &AttentionShape, mode: ScheduleMode, l: usize, cached: usize) -> u64 {
    let (h, hk, d) = (a.heads as u64, a.kv_heads as u64, a.head_dim as u64);
    let (l, kv) = (l as u64, (cached + l) as u64);
    let words = if mode.streams() {
        let rows = l.div_ceil(l.clamp(1, MAX_CHUNKS as u64));
        // query and output rows, the chunk's scores, a KV window
        2 * rows * h * d + rows * h * kv + kv.min(MAX_CHUNKS as u64) * 2 * hk * d
    } else {
        // Q, K, V, scores and output of the pass plus the whole cache
        l * (h + 2 * hk) * d + h * l * kv + l * h * d + cached as u64 * 2 * hk * d
    };
    32 * words
}

/// Fraction of lookup ports left in sequential mode: on-chip memory held by
/// full attention intermediates is taken from the table buffers.
fn port_share(topo: &EngineTopology, a: Option<&AttentionShape>, l: usize, cached: usize) -> f64 {
    let Some(a) = a else { return 1.0 };
    let on_chip = topo.on_chip_bits as f64;
    let seq = attention_buffer_bits(a, ScheduleMode::Sequential, l, cached) as f64;
    let hyb = attention_buffer_bits(a, ScheduleMode::Hybrid, l, cached) as f64;
    ((on_chip - seq) / (on_chip - hyb)).clamp(0.5, 1.0)
}

/// Projections of a layer and their widths for one token count.
struct LayerLinears {
    shapes: Vec<(Projection, LayerShape, usize)>,
}

impl LayerLinears {
    fn new(w: &LayerWorkload, cfg: &SchemeConfig, hw: &HardwareProfile, topo: &EngineTopology, l: usize) -> Result<Self> {
        let mut shapes = Vec::with_capacity(w.linears.len());
        for p in &w.linears {
            let shape = LayerShape::new(p.m, p.d, l);
            let width = projection_width(&shape, cfg, hw, topo.num_bpcsu)?;
            shapes.push((p.clone(), shape, width));
        }
        Ok(LayerLinears { shapes })
    }

    fn plans(&self, cfg: &SchemeConfig, hw: &HardwareProfile, topo: &EngineTopology) -> Result<Vec<LinearPlan>> {
        self.shapes.iter().map(|(p, shape, width)| LinearPlan::new(&p.name, shape, cfg, hw, topo, *width)).collect()
    }
}

/// Everything one layer pass needs.
struct LayerPass<'a> {
    w: &'a LayerWorkload,
    mode: ScheduleMode,
    hw: &'a HardwareProfile,
    plans: Vec<LinearPlan>,
    l: usize,
    cached: usize,
}

impl LayerPass<'_> {
    fn sfu_cycles(&self, elems: usize) -> f64 {
        self.hw.sfu_ops_per_element * (elems * self.l) as f64 / self.hw.fp32_rate()
    }

    /// Runs the pass from `input` (cycle the layer input is ready); returns
    /// the cycle its output is ready.
    fn run(&self, sch: &mut Sched, buf: &mut LutBuffer, input: u64) -> u64 {
        let reload = self.mode == ScheduleMode::Dataflow;
        let streams = self.mode.streams();
        let plans = &self.plans;
        let hidden = self.w.linears.first().map_or(0, |p| p.d);
        let norm = ceil_cycles(self.sfu_cycles(hidden));
        let gate_elems = self.w.sfu_elems_per_token.saturating_sub(2 * hidden);
        let none = |_: usize| 0;

        let n1 = sch.run(Resource::SfuNorm, norm, input, || "norm1".into());
        let (ffn_from, ffn_input) = match (&self.w.attention, plans.len()) {
            (Some(a), n) if n >= 4 => {
                let q = run_linear(sch, buf, &plans[0], reload, n1, &none);
                let kv_bytes = (self.cached * kv_bytes_per_token(a)) as f64;
                let prefetch = ceil_cycles(kv_bytes / self.hw.bandwidth_bytes_per_cycle);
                sch.hbm_bytes += kv_bytes;
                let fetched = sch.run(Resource::Hbm, prefetch, 0, || "kv.prefetch".into());
                let k = run_linear(sch, buf, &plans[1], reload, n1, &none);
                let v = run_linear(sch, buf, &plans[2], reload, n1, &none);
                let write = ceil_cycles((self.l * kv_bytes_per_token(a)) as f64 / KV_WRITE_BYTES_PER_CYCLE);
                let written = sch.run(Resource::KvWrite, write, k.max(v), || "kv.write".into());
                let attended = self.attention(sch, a, q.max(k).max(v).max(fetched));
                let o_ready = if streams { attended } else { attended.max(written) };
                let o = run_linear(sch, buf, &plans[3], reload, o_ready, &none);
                let n2 = sch.run(Resource::SfuNorm, norm, o, || "norm2".into());
                (4, n2)
            }
            _ => (0, n1),
        };
        let ffn = &plans[ffn_from..];
        let Some((last, gated)) = ffn.split_last() else { return ffn_input };
        if gated.is_empty() {
            return run_linear(sch, buf, last, reload, ffn_input, &none);
        }
        let mut up = ffn_input;
        for p in gated {
            up = up.max(run_linear(sch, buf, p, reload, ffn_input, &none));
        }
        let total = self.sfu_cycles(gate_elems);
        let chunks = if streams { last.steps.min(MAX_CHUNKS) } else { 1 };
        let mut ends = Vec::with_capacity(chunks);
        for c in 0..chunks {
            ends.push(sch.run(Resource::SfuGate, part(total, c, chunks), up, || format!("gate[{c}]")));
        }
        // step k of the down projection reads the first (k + 1) / steps of
        // the gate output
        let steps = last.steps;
        let ready = |k: usize| ends[((k + 1) * chunks).div_ceil(steps) - 1];
        run_linear(sch, buf, last, reload, up, &ready)
    }

    /// Query-row chunks through QK, softmax/RoPE and PV units in a pipeline.
    fn attention(&self, sch: &mut Sched, a: &AttentionShape, ready: u64) -> u64 {
        if self.l == 0 {
            return ready;
        }
        let rate = self.hw.fp32_rate();
        let (h, hk, d) = (a.heads as f64, a.kv_heads as f64, a.head_dim as f64);
        let (l, kv) = (self.l as f64, (self.cached + self.l) as f64);
        // each GEMM unit has half of the fp32 compute units
        let gemm = h * l * kv * d / (rate / 2.0);
        let softmax = self.hw.sfu_ops_per_element * (h * l * kv + (h + hk) * d * l) / rate;
        let chunks = if self.mode.streams() { self.l.min(MAX_CHUNKS) } else { 1 };
        let mut end = ready;
        for c in 0..chunks {
            let qk = sch.run(Resource::AttnQk, part(gemm, c, chunks), ready, || format!("attn.qk[{c}]"));
            let sm = sch.run(Resource::Softmax, part(softmax, c, chunks), qk, || format!("attn.softmax[{c}]"));
            end = sch.run(Resource::AttnPv, part(gemm, c, chunks), sm, || format!("attn.pv[{c}]"));
        }
        end
    }
}

fn buffers(w: &LayerWorkload, topo: &EngineTopology, mode: ScheduleMode, l: usize, cached: usize) -> (u64, i64) {
    let attn = w.attention.as_ref().map_or(0, |a| attention_buffer_bits(a, mode, l, cached));
    // gate inputs are produced whole before the down projection consumes them
    let hidden = w.linears.first().map_or(0, |p| p.d) as u64;
    let ffn = w.linears.iter().skip(4).map(|p| p.m as u64).max().unwrap_or(0);
    let other = 32 * l as u64 * (hidden + 2 * ffn);
    let peak = topo.linear_bits() + attn + other;
    (peak, topo.on_chip_bits as i64 - (attn + other) as i64)
}

fn ports_for(hw: &HardwareProfile, topo: &EngineTopology, w: &LayerWorkload, mode: ScheduleMode, l: usize, cached: usize) -> HardwareProfile {
    let mut hw = hw.clone();
    if mode == ScheduleMode::Sequential {
        hw.n_ports *= port_share(topo, w.attention.as_ref(), l, cached);
    }
    hw
}

fn stage_of(l: usize, cached: usize) -> Stage {
    if l == 1 && cached > 0 {
        Stage::Decode
    } else {
        Stage::Prefill
    }
}

/// One co-quantized projection of `shape.l` tokens on `topo.num_bpcsu`
/// search units.
pub fn simulate_lutlinear(
    shape: &LayerShape,
    cfg: &SchemeConfig,
    hw: &HardwareProfile,
    topo: &EngineTopology,
    record_events: bool,
) -> Result<SimTrace> {
    require_coquant(cfg)?;
    hw.validate()?;
    let plan = LinearPlan::new("linear", shape, cfg, hw, topo, topo.num_bpcsu)?;
    let mut sch = Sched::new(record_events, stage_of(shape.l, 0));
    run_linear(&mut sch, &mut LutBuffer::default(), &plan, false, 0, &|_| 0);
    let mut trace = sch.into_trace();
    trace.peak_buffer_bits = topo.linear_bits();
    trace.linear_available_bits = topo.on_chip_bits as i64;
    Ok(trace)
}

/// One pass of one layer: `l` new tokens over `kv_len` cached entries.
#[allow(clippy::too_many_arguments)]
pub fn simulate_layer_schedule(
    mode: ScheduleMode,
    w: &LayerWorkload,
    cfg: &SchemeConfig,
    hw: &HardwareProfile,
    topo: &EngineTopology,
    l: usize,
    kv_len: usize,
    record_events: bool,
) -> Result<SimTrace> {
    require_coquant(cfg)?;
    hw.validate()?;
    let linears = LayerLinears::new(w, cfg, hw, topo, l)?;
    let port_hw = ports_for(hw, topo, w, mode, l, kv_len);
    let pass = LayerPass { w, mode, hw, plans: linears.plans(cfg, &port_hw, topo)?, l, cached: kv_len };
    let stage = stage_of(l, kv_len);
    let mut sch = Sched::new(record_events, stage);
    let end = pass.run(&mut sch, &mut LutBuffer::default(), 0);
    let mut trace = sch.into_trace();
    trace.layers.push(LayerSpan { stage, pass: 0, layer: 0, start: 0, end });
    (trace.peak_buffer_bits, trace.linear_available_bits) = buffers(w, topo, mode, l, kv_len);
    Ok(trace)
}

/// Dataflow-mode codebook reloads of one layer pass and their cycles each.
pub fn layer_reloads(w: &LayerWorkload, cfg: &SchemeConfig, hw: &HardwareProfile, topo: &EngineTopology, l: usize) -> Result<Vec<(usize, u64)>> {
    let linears = LayerLinears::new(w, cfg, hw, topo, l)?;
    Ok(linears.plans(cfg, hw, topo)?.iter().map(|p| (p.reload_count(), p.reload_cycles())).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EndToEnd {
    pub trace: SimTrace,
    pub prompt_len: usize,
    pub gen_len: usize,
    pub prefill_cycles: u64,
    pub decode_cycles: u64,
    /// Prompt plus generated tokens over the whole run.
    pub tokens_per_s: f64,
    pub decode_tokens_per_s: f64,
    pub decode_bytes: f64,
    /// Decode bytes over `C` times the cycles from the first decode event
    /// (or the end of prefill, if earlier) to the end.
    pub decode_bandwidth_utilization: f64,
}

/// Prefill over the prompt, then `gen_len` single-token decode passes.
pub fn simulate_end_to_end(
    model: &ModelConfig,
    cfg: &SchemeConfig,
    hw: &HardwareProfile,
    topo: &EngineTopology,
    prompt_len: usize,
    gen_len: usize,
    opts: SimOptions,
) -> Result<EndToEnd> {
    require_coquant(cfg)?;
    hw.validate()?;
    model.validate()?;
    let w = model.workload();
    let mut sch = Sched::new(opts.record_events, Stage::Prefill);
    let mut buf = LutBuffer::default();
    let mut spans = Vec::new();
    let mut peak = (0u64, i64::MAX);
    let mut track = |p: (u64, i64)| {
        peak.0 = peak.0.max(p.0);
        peak.1 = peak.1.min(p.1);
    };
    let mut x = 0;
    if prompt_len > 0 {
        let linears = LayerLinears::new(&w, cfg, hw, topo, prompt_len)?;
        let port_hw = ports_for(hw, topo, &w, opts.mode, prompt_len, 0);
        let pass = LayerPass { w: &w, mode: opts.mode, hw, plans: linears.plans(cfg, &port_hw, topo)?, l: prompt_len, cached: 0 };
        track(buffers(&w, topo, opts.mode, prompt_len, 0));
        for layer in 0..model.layers {
            let start = x;
            x = pass.run(&mut sch, &mut buf, x);
            spans.push(LayerSpan { stage: Stage::Prefill, pass: 0, layer, start, end: x });
        }
    }
    let prefill_cycles = x;
    let prefill_bytes = sch.hbm_bytes;
    sch.stage = Stage::Decode;
    if gen_len > 0 {
        let linears = LayerLinears::new(&w, cfg, hw, topo, 1)?;
        let base = linears.plans(cfg, hw, topo)?;
        for t in 0..gen_len {
            let cached = prompt_len + t;
            let plans = if opts.mode == ScheduleMode::Sequential {
                linears.plans(cfg, &ports_for(hw, topo, &w, opts.mode, 1, cached), topo)?
            } else {
                base.clone()
            };
            let pass = LayerPass { w: &w, mode: opts.mode, hw, plans, l: 1, cached };
            track(buffers(&w, topo, opts.mode, 1, cached));
            for layer in 0..model.layers {
                let start = x;
                x = pass.run(&mut sch, &mut buf, x);
                spans.push(LayerSpan { stage: Stage::Decode, pass: t + 1, layer, start, end: x });
            }
        }
    }
    let decode_bytes = sch.hbm_bytes - prefill_bytes;
    // decode loads may be prefetched before the prompt's last layer ends
    let decode_window = sch.end - sch.decode_start.unwrap_or(sch.end).min(prefill_cycles);
    let mut trace = sch.into_trace();
    trace.layers = spans;
    (trace.peak_buffer_bits, trace.linear_available_bits) = peak;
    let total = trace.total_cycles;
    let decode_cycles = total - prefill_cycles;
    let secs = |c: u64| hw.cycles_to_seconds(c as f64);
    let rate = |n: usize, c: u64| if c > 0 { n as f64 / secs(c) } else { 0.0 };
    Ok(EndToEnd {
        prompt_len,
        gen_len,
        prefill_cycles,
        decode_cycles,
        tokens_per_s: rate(prompt_len + gen_len, total),
        decode_tokens_per_s: rate(gen_len, decode_cycles),
        decode_bytes,
        decode_bandwidth_utilization: if decode_window > 0 {
            decode_bytes / (decode_window as f64 * hw.bandwidth_bytes_per_cycle)
        } else {
            0.0
        },
        trace,
    })
}
