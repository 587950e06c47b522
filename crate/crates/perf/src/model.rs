//! Transformer shapes: grouped-query attention plus a gated FFN.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{PerfError, Result};

/// Decoder-only GQA transformer hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(default)]
    pub name: String,
    /// D: hidden size.
    pub hidden: usize,
    /// h: query heads.
    pub heads: usize,
    /// g: query heads sharing one key/value head.
    pub kv_group: usize,
    /// d: head dimension.
    pub head_dim: usize,
    pub ffn_hidden: usize,
    pub layers: usize,
    pub vocab: usize,
    #[serde(default = "default_rope_base")]
    pub rope_base: f64,
    #[serde(default = "default_norm_eps")]
    pub norm_eps: f64,
}

fn default_rope_base() -> f64 {
    10000.0
}

fn default_norm_eps() -> f64 {
    1e-6
}

/// A weight matrix `m x d` (outputs x inputs).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Projection {
    pub name: String,
    pub m: usize,
    pub d: usize,
}

impl Projection {
    pub fn new(name: &str, m: usize, d: usize) -> Self {
        Projection { name: name.to_string(), m, d }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionShape {
    pub heads: usize,
    pub kv_heads: usize,
    pub head_dim: usize,
}

/// What one layer executes: linear projections in order, optional attention,
/// and the per-token element count of the other nonlinear units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerWorkload {
    pub linears: Vec<Projection>,
    pub attention: Option<AttentionShape>,
    /// Elements per token through norms and the FFN gate.
    pub sfu_elems_per_token: usize,
}

const QWEN3_1_7B: &str = include_str!("../configs/qwen3-1.7b.json");
const DESK: &str = include_str!("../configs/desk.json");

impl ModelConfig {
    /// Qwen-3-1.7B-like shape: D = 2048, 16 heads of 128, 8 KV heads,
    /// FFN 6144, 28 layers.
    pub fn qwen3_1_7b() -> Self {
        serde_json::from_str(QWEN3_1_7B).expect("bundled config parses")
    }

    /// Small model for end-to-end runs on a CPU.
    pub fn desk() -> Self {
        serde_json::from_str(DESK).expect("bundled config parses")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ModelConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        ModelConfig::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PerfError::InvalidModel(m));
        if [self.hidden, self.heads, self.kv_group, self.head_dim, self.ffn_hidden, self.layers, self.vocab]
            .contains(&0)
        {
            return bad("all sizes must be positive".into());
        }
        if self.heads * self.head_dim != self.hidden {
            return bad(format!("head_dim {} x heads {} != hidden {}", self.head_dim, self.heads, self.hidden));
        }
        if !self.heads.is_multiple_of(self.kv_group) {
            return bad(format!("kv_group {} does not divide heads {}", self.kv_group, self.heads));
        }
        Ok(())
    }

    pub fn kv_heads(&self) -> usize {
        self.heads / self.kv_group
    }

    /// Width of K (and V): `(h/g) d`.
    pub fn kv_dim(&self) -> usize {
        self.kv_heads() * self.head_dim
    }

    /// Projections of one layer in execution order.
    pub fn projections(&self) -> Vec<Projection> {
        let (dm, q, kv, f) = (self.hidden, self.heads * self.head_dim, self.kv_dim(), self.ffn_hidden);
        vec![
            Projection::new("q", q, dm),
            Projection::new("k", kv, dm),
            Projection::new("v", kv, dm),
            Projection::new("o", dm, q),
            Projection::new("w1", f, dm),
            Projection::new("w2", f, dm),
            Projection::new("w3", dm, f),
        ]
    }

    pub fn attention(&self) -> AttentionShape {
        AttentionShape { heads: self.heads, kv_heads: self.kv_heads(), head_dim: self.head_dim }
    }

    pub fn workload(&self) -> LayerWorkload {
        LayerWorkload {
            linears: self.projections(),
            attention: Some(self.attention()),
            // two RMSNorms plus the SiLU gate and its product
            sfu_elems_per_token: 2 * self.hidden + self.ffn_hidden,
        }
    }

    /// fp32 KV bytes per layer per cached token.
    pub fn kv_bytes_per_token(&self) -> usize {
        2 * self.kv_dim() * 4
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qwen_shapes() {
        let cfg = ModelConfig::qwen3_1_7b();
        cfg.validate().unwrap();
        let shapes: Vec<(usize, usize)> = cfg.projections().iter().map(|p| (p.m, p.d)).collect();
        assert_eq!(
            shapes,
            vec![(2048, 2048), (1024, 2048), (1024, 2048), (2048, 2048), (6144, 2048), (6144, 2048), (2048, 6144)]
        );
        assert_eq!(cfg.kv_heads(), 8);
    }

    #[test]
    fn desk_is_valid() {
        let cfg = ModelConfig::desk();
        cfg.validate().unwrap();
        assert_eq!(cfg.kv_dim(), 64);
    }

    #[test]
    fn rejects_inconsistent_heads() {
        let mut cfg = ModelConfig::desk();
        cfg.head_dim = 30;
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::desk();
        cfg.kv_group = 3;
        assert!(cfg.validate().is_err());
    }
}
