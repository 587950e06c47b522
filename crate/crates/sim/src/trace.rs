//! Simulation traces: timed events per resource, per-layer spans and
//! buffer accounting, with JSON-lines and CSV export.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use lutllm_perf::Stage;
use serde::{Deserialize, Serialize};

/// Modeled ports and engines. Each executes one event at a time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resource {
    /// Off-chip channels for tables, indices, codebooks and KV prefetch.
    Hbm,
    Bpcsu,
    Psum,
    /// Accumulator drain and dequantizer.
    Dequant,
    AttnQk,
    Softmax,
    AttnPv,
    /// RMSNorm unit.
    SfuNorm,
    /// SwiGLU unit.
    SfuGate,
    /// Separate channel group for KV write-out.
    KvWrite,
}

impl Resource {
    pub const ALL: [Resource; 10] = [
        Resource::Hbm,
        Resource::Bpcsu,
        Resource::Psum,
        Resource::Dequant,
        Resource::AttnQk,
        Resource::Softmax,
        Resource::AttnPv,
        Resource::SfuNorm,
        Resource::SfuGate,
        Resource::KvWrite,
    ];

    pub(crate) fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Resource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
        f.write_str(&s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub resource: Resource,
    pub op: String,
    pub start: u64,
    pub end: u64,
    pub stage: Stage,
}

/// One layer pass: prefill is pass 0, decode pass `t` is `t + 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpan {
    pub stage: Stage,
    pub pass: usize,
    pub layer: usize,
    pub start: u64,
    pub end: u64,
}

impl LayerSpan {
    pub fn cycles(&self) -> u64 {
        self.end - self.start
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    /// Empty unless events were recorded.
    pub events: Vec<Event>,
    pub layers: Vec<LayerSpan>,
    pub total_cycles: u64,
    /// Off-chip bytes read over the table channels.
    pub hbm_bytes: f64,
    /// Busy cycles per resource.
    pub busy: BTreeMap<Resource, u64>,
    /// Codebook loads that could not be hidden behind other work.
    pub codebook_reloads: u64,
    /// Peak bits of live on-chip tensors.
    pub peak_buffer_bits: u64,
    /// On-chip bits left for table lookup after attention intermediates.
    pub linear_available_bits: i64,
}

impl SimTrace {
    pub fn busy_cycles(&self, r: Resource) -> u64 {
        self.busy.get(&r).copied().unwrap_or(0)
    }

    pub fn stage_events(&self, stage: Stage) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(move |e| e.stage == stage)
    }

    /// First pair of overlapping events on one resource, if any.
    pub fn overlap(&self) -> Option<(&Event, &Event)> {
        let mut by_res: BTreeMap<Resource, Vec<&Event>> = BTreeMap::new();
        for e in &self.events {
            by_res.entry(e.resource).or_default().push(e);
        }
        for evs in by_res.values_mut() {
            evs.sort_by_key(|e| (e.start, e.end));
            for w in evs.windows(2) {
                if w[1].start < w[0].end {
                    return Some((w[0], w[1]));
                }
            }
        }
        None
    }

    /// One JSON object `{resource, op, start, end, stage}` per line.
    pub fn write_jsonl(&self, mut w: impl Write) -> std::io::Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Per-layer spans followed by per-resource busy cycles.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("kind,stage,pass,layer,name,start,end,cycles\n");
        for s in &self.layers {
            out += &format!("layer,{},{},{},,{},{},{}\n", s.stage, s.pass, s.layer, s.start, s.end, s.cycles());
        }
        for (r, b) in &self.busy {
            out += &format!("resource,,,,{r},,,{b}\n");
        }
        out += &format!("total,,,,,0,{},{}\n", self.total_cycles, self.total_cycles);
        out
    }
}
