//! List scheduler over exclusive resources and the lookup-linear engine.
//!
//! Every event goes to one resource, starts when both the resource and its
//! inputs are ready, and holds the resource for an integer number of cycles.
//! Events on a resource run in issue order.

use lutllm_core::SchemeConfig;
use lutllm_perf::{step_terms, HardwareProfile, LayerShape, Stage};

use crate::bpcsu::BpcsuConfig;
use crate::error::{Result, SimError};
use crate::topology::EngineTopology;
use crate::trace::{Event, Resource, SimTrace};

/// `ceil` that ignores floating-point dust just above an integer.
pub(crate) fn ceil_cycles(x: f64) -> u64 {
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r.max(0.0) as u64
    } else {
        x.ceil().max(0.0) as u64
    }
}

/// Duration of part `i` of `n` equal parts of `total` cycles; the parts sum
/// to `ceil(total)`.
pub(crate) fn part(total: f64, i: usize, n: usize) -> u64 {
    let at = |k: usize| ceil_cycles(total * k as f64 / n as f64);
    at(i + 1) - at(i)
}

pub(crate) struct Sched {
    free: [u64; Resource::ALL.len()],
    busy: [u64; Resource::ALL.len()],
    record: bool,
    events: Vec<Event>,
    pub stage: Stage,
    pub end: u64,
    pub hbm_bytes: f64,
    pub reloads: u64,
    /// First cycle any decode-stage event occupies a resource.
    pub decode_start: Option<u64>,
}

impl Sched {
    pub fn new(record: bool, stage: Stage) -> Self {
        Sched {
            free: [0; Resource::ALL.len()],
            busy: [0; Resource::ALL.len()],
            record,
            events: Vec::new(),
            stage,
            end: 0,
            hbm_bytes: 0.0,
            reloads: 0,
            decode_start: None,
        }
    }

    /// Issues an event; returns its end cycle. Empty events take no slot.
    pub fn run(&mut self, r: Resource, dur: u64, ready: u64, op: impl FnOnce() -> String) -> u64 {
        if dur == 0 {
            return ready;
        }
        let i = r.index();
        let start = self.free[i].max(ready);
        let end = start + dur;
        self.free[i] = end;
        self.busy[i] += dur;
        self.end = self.end.max(end);
        if self.stage == Stage::Decode {
            self.decode_start = Some(self.decode_start.map_or(start, |s| s.min(start)));
        }
        if self.record {
            self.events.push(Event { resource: r, op: op(), start, end, stage: self.stage });
        }
        end
    }

    pub fn into_trace(self) -> SimTrace {
        SimTrace {
            events: self.events,
            total_cycles: self.end,
            hbm_bytes: self.hbm_bytes,
            busy: Resource::ALL.iter().map(|&r| (r, self.busy[r.index()])).filter(|&(_, b)| b > 0).collect(),
            codebook_reloads: self.reloads,
            ..Default::default()
        }
    }
}

/// Byte stream over the table channels with cumulative rounding.
struct Stream {
    c: f64,
    bytes: f64,
    cycles: u64,
}

impl Stream {
    fn take(&mut self, bytes: f64) -> u64 {
        self.bytes += bytes;
        let at = ceil_cycles(self.bytes / self.c);
        let d = at - self.cycles;
        self.cycles = at;
        d
    }
}

/// Codebook register sets per search unit; codebooks are fetched up to
/// `CODEBOOK_SLOTS - 1` steps ahead so the chain latency stays hidden.
pub(crate) const CODEBOOK_SLOTS: usize = 4;

/// Double-buffered step slots of the table buffer, shared by consecutive
/// projections so the next one can prefetch.
#[derive(Default)]
pub(crate) struct LutBuffer {
    slots: [u64; 2],
    next: usize,
    /// Codebook registers, freed once the step's tokens entered the search.
    codebooks: [u64; CODEBOOK_SLOTS],
    next_codebook: usize,
}

impl LutBuffer {
    fn load_codebook(&mut self, sch: &mut Sched, stream: &mut Stream, bytes: f64, op: impl FnOnce() -> String) -> (usize, u64) {
        let slot = self.next_codebook;
        self.next_codebook = (slot + 1) % CODEBOOK_SLOTS;
        let dur = stream.take(bytes);
        sch.hbm_bytes += bytes;
        (slot, sch.run(Resource::Hbm, dur, self.codebooks[slot], op))
    }
}

/// One projection prepared for the engine.
#[derive(Clone, Debug)]
pub(crate) struct LinearPlan {
    pub name: String,
    pub tokens: usize,
    pub steps: usize,
    pub tiles: usize,
    c: f64,
    codebook_bytes: f64,
    stream_bytes: f64,
    /// Search unit occupancy per step: one token enters per cycle, and the
    /// next step's tokens follow behind with their own codebook.
    search_issue: u64,
    /// Cycles from the last token entering to its index leaving the tree.
    search_latency: u64,
    /// Occupancy per step when every token refills the chains.
    search_unpipelined: u64,
    psum_total: f64,
    drain: u64,
    reloads: usize,
    reload_bytes: f64,
}

impl LinearPlan {
    /// `hw` sets the bandwidth and the port budget for table lookup;
    /// `width` is the number of active search units.
    pub fn new(
        name: &str,
        shape: &LayerShape,
        cfg: &SchemeConfig,
        hw: &HardwareProfile,
        topo: &EngineTopology,
        width: usize,
    ) -> Result<Self> {
        crate::topology::require_coquant(cfg)?;
        let slices = shape.d / cfg.vector_len;
        if !shape.d.is_multiple_of(cfg.vector_len) || width == 0 || !slices.is_multiple_of(width) {
            return Err(SimError::TopologyMismatch(format!(
                "width {width} does not divide the {slices} input slices of {name}"
            )));
        }
        topo.check(shape, cfg, width)?;
        let bpcsu = BpcsuConfig::new(cfg.act_centroids, topo.chain_len)?;
        let (m, d) = (shape.m as f64, shape.d as f64);
        let (g, v) = (cfg.group_size as f64, cfg.vector_len as f64);
        let (c_a, c_w) = (cfg.act_centroids as f64, cfg.weight_centroids as f64);
        let steps = shape.d / width;
        let psum_total = if shape.l == 0 {
            0.0
        } else {
            let (_, lookup, accumulate) = step_terms(shape, cfg, hw, width).ok_or_else(|| {
                SimError::TopologyMismatch(format!("width {width} leaves no units to accumulate {name}"))
            })?;
            steps as f64 * (lookup + accumulate)
        };
        Ok(LinearPlan {
            name: name.to_string(),
            tokens: shape.l,
            steps,
            tiles: (256 / steps).clamp(1, 16),
            c: hw.bandwidth_bytes_per_cycle,
            codebook_bytes: 4.0 * d * c_a / v,
            stream_bytes: m * d * c_a * c_w / (g * v) * cfg.table_bits as f64 / 8.0 + m * d * c_w.log2() / (8.0 * v),
            search_issue: shape.l as u64,
            search_latency: bpcsu.depth() - 1,
            search_unpipelined: bpcsu.depth() * shape.l as u64,
            psum_total,
            // row extraction, expansion and add, cascade through the chain,
            // dequantization
            drain: 2 + (width as u64 - 1) + 1,
            reloads: slices,
            reload_bytes: 4.0 * c_a * v,
        })
    }

    /// Cycles of one blocking codebook reload.
    pub fn reload_cycles(&self) -> u64 {
        ceil_cycles(self.reload_bytes / self.c)
    }

    pub fn reload_count(&self) -> usize {
        self.reloads
    }
}

/// Runs one projection. Step `k` may not search before `step_ready(k)`
/// (its input slice). With `reload`, codebooks cannot be prefetched: each
/// input slice reloads its codebook after the previous step finished, and
/// the search restarts for every token. Returns the cycle the outputs are
/// dequantized (or, without tokens, the cycle the loads finish).
pub(crate) fn run_linear(
    sch: &mut Sched,
    buf: &mut LutBuffer,
    p: &LinearPlan,
    reload: bool,
    input_ready: u64,
    step_ready: &dyn Fn(usize) -> u64,
) -> u64 {
    let mut stream = Stream { c: p.c, bytes: 0.0, cycles: 0 };
    let tile_bytes = p.stream_bytes / (p.steps * p.tiles) as f64;
    let step_cb = p.codebook_bytes / p.steps as f64;
    let mut prev_end = input_ready;
    let mut loads_end = 0;
    let mut tile_end = vec![0u64; p.tiles];
    let mut ahead = std::collections::VecDeque::new();
    if !reload {
        for k in 0..p.steps.min(CODEBOOK_SLOTS - 1) {
            ahead.push_back(buf.load_codebook(sch, &mut stream, step_cb, || format!("{}.codebook[{k}]", p.name)));
        }
    }
    for k in 0..p.steps {
        let slot = buf.next;
        buf.next ^= 1;
        let load_ready = buf.slots[slot];
        let (cb_slot, cb_end) = if reload {
            let n = p.reloads * (k + 1) / p.steps - p.reloads * k / p.steps;
            let mut t = load_ready.max(prev_end);
            for r in 0..n {
                let dur = stream.take(p.reload_bytes);
                sch.hbm_bytes += p.reload_bytes;
                sch.reloads += 1;
                t = sch.run(Resource::Hbm, dur, t, || format!("{}.reload[{k}.{r}]", p.name));
            }
            (None, t)
        } else {
            let (slot, end) = ahead.pop_front().expect("prefetched codebook");
            let next = k + CODEBOOK_SLOTS - 1;
            if next < p.steps {
                ahead.push_back(buf.load_codebook(sch, &mut stream, step_cb, || format!("{}.codebook[{next}]", p.name)));
            }
            (Some(slot), end)
        };
        for (j, end) in tile_end.iter_mut().enumerate() {
            let dur = stream.take(tile_bytes);
            sch.hbm_bytes += tile_bytes;
            *end = sch.run(Resource::Hbm, dur, load_ready, || format!("{}.tables[{k}.{j}]", p.name));
            loads_end = loads_end.max(*end);
        }
        loads_end = loads_end.max(cb_end);
        if p.tokens == 0 {
            buf.slots[slot] = loads_end;
            if let Some(c) = cb_slot {
                buf.codebooks[c] = cb_end;
            }
            continue;
        }
        let ready = cb_end.max(input_ready).max(step_ready(k));
        // psum starts with the first token's index and cannot finish before
        // the last one's
        let (first, last) = if reload {
            let end = sch.run(Resource::Bpcsu, p.search_unpipelined, ready, || format!("{}.search[{k}]", p.name));
            (end, end)
        } else {
            let issued = sch.run(Resource::Bpcsu, p.search_issue, ready, || format!("{}.search[{k}]", p.name));
            if let Some(c) = cb_slot {
                buf.codebooks[c] = issued;
            }
            (issued - p.search_issue + p.search_latency + 1, issued + p.search_latency)
        };
        let mut end = first;
        for (j, &t) in tile_end.iter().enumerate() {
            let dur = part(p.psum_total, k * p.tiles + j, p.steps * p.tiles);
            let mut at = first.max(t).max(end);
            if j + 1 == p.tiles {
                at = at.max(last.saturating_sub(dur));
            }
            end = sch.run(Resource::Psum, dur, at, || format!("{}.psum[{k}.{j}]", p.name));
        }
        buf.slots[slot] = end;
        prev_end = end;
    }
    if p.tokens == 0 {
        return loads_end;
    }
    sch.run(Resource::Dequant, p.drain, prev_end, || format!("{}.drain", p.name))
}
