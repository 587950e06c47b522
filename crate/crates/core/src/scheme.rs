use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    WeightVq,
    ActivationVq,
    Coquant,
    ScalarW4a8,
    Fp16,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 5] = [
        SchemeKind::WeightVq,
        SchemeKind::ActivationVq,
        SchemeKind::Coquant,
        SchemeKind::ScalarW4a8,
        SchemeKind::Fp16,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SchemeKind::WeightVq => "weight_vq",
            SchemeKind::ActivationVq => "activation_vq",
            SchemeKind::Coquant => "coquant",
            SchemeKind::ScalarW4a8 => "scalar_w4a8",
            SchemeKind::Fp16 => "fp16",
        }
    }

    pub fn uses_weight_codebooks(self) -> bool {
        matches!(self, SchemeKind::WeightVq | SchemeKind::Coquant)
    }

    pub fn uses_activation_codebooks(self) -> bool {
        matches!(self, SchemeKind::ActivationVq | SchemeKind::Coquant)
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SchemeKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidScheme(format!("unknown scheme kind {s:?}")))
    }
}

/// Quantization hyperparameters of one scheme.
///
/// `table_bits` is the precision of the deployed lookup tables: 8 (per-tensor
/// affine uint8), 4 (modeled by the latency model only) or 32 (fp32 tables,
/// kept unquantized; useful for exactness checks).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemeConfig {
    pub kind: SchemeKind,
    /// G: vectors per weight quantization group.
    pub group_size: usize,
    /// v: vector length.
    pub vector_len: usize,
    /// c_w: centroids per weight codebook.
    pub weight_centroids: usize,
    /// c_a: centroids per activation codebook.
    pub act_centroids: usize,
    pub table_bits: u32,
}

impl SchemeConfig {
    pub fn new(
        kind: SchemeKind,
        group_size: usize,
        vector_len: usize,
        weight_centroids: usize,
        act_centroids: usize,
    ) -> Self {
        SchemeConfig { kind, group_size, vector_len, weight_centroids, act_centroids, table_bits: 8 }
    }

    /// G = 512, v = 2, c_w = 16, c_a = 64 with INT8 tables.
    pub fn qwen_coquant() -> Self {
        SchemeConfig::new(SchemeKind::Coquant, 512, 2, 16, 64)
    }

    pub fn with_kind(self, kind: SchemeKind) -> Self {
        SchemeConfig { kind, ..self }
    }

    pub fn with_table_bits(self, table_bits: u32) -> Self {
        SchemeConfig { table_bits, ..self }
    }

    /// Storage width of one weight centroid index.
    pub fn index_bits(&self) -> u32 {
        log2_ceil(self.weight_centroids).max(1)
    }

    /// Checks the scheme's own invariants, independent of a layer shape.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidScheme(msg));
        if self.vector_len == 0 || self.group_size == 0 {
            return bad("vector length and group size must be positive".into());
        }
        if self.kind.uses_weight_codebooks()
            && (!self.weight_centroids.is_power_of_two() || self.weight_centroids > 256) {
                return bad(format!("c_w = {} must be a power of two <= 256", self.weight_centroids));
            }
        if self.kind.uses_activation_codebooks() && !self.act_centroids.is_power_of_two() {
            return bad(format!("c_a = {} must be a power of two", self.act_centroids));
        }
        if !matches!(self.table_bits, 4 | 8 | 32) {
            return bad(format!("table_bits = {} must be 4, 8 or 32", self.table_bits));
        }
        Ok(())
    }

    /// Checks the scheme against an `m x d` weight matrix.
    pub fn validate_for(&self, m: usize, d: usize) -> Result<()> {
        self.validate()?;
        if m == 0 || d == 0 {
            return Err(Error::Shape(format!("empty weight matrix {m}x{d}")));
        }
        if !d.is_multiple_of(self.vector_len) {
            return Err(Error::Shape(format!(
                "v = {} does not divide D = {d}",
                self.vector_len
            )));
        }
        if self.kind.uses_weight_codebooks() && self.group_size > m {
            return Err(Error::GroupSliceMisalignment(format!(
                "G = {} vectors exceeds the M = {m} vectors of one channel slice",
                self.group_size
            )));
        }
        Ok(())
    }
}

/// ceil(log2(n)) for n >= 1.
pub fn log2_ceil(n: usize) -> u32 {
    assert!(n >= 1);
    usize::BITS - (n - 1).leading_zeros()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log2_ceil_values() {
        assert_eq!(log2_ceil(1), 0);
        assert_eq!(log2_ceil(2), 1);
        assert_eq!(log2_ceil(8), 3);
        assert_eq!(log2_ceil(9), 4);
        assert_eq!(log2_ceil(16), 4);
    }

    #[test]
    fn scheme_kind_roundtrips_through_str() {
        for kind in SchemeKind::ALL {
            assert_eq!(kind.as_str().parse::<SchemeKind>().unwrap(), kind);
        }
        assert!("int3".parse::<SchemeKind>().is_err());
    }

    #[test]
    fn validation() {
        let cfg = SchemeConfig::qwen_coquant();
        cfg.validate_for(2048, 2048).unwrap();
        assert!(cfg.validate_for(2048, 2047).is_err());
        assert!(matches!(cfg.validate_for(256, 2048), Err(Error::GroupSliceMisalignment(_))));
        let bad = SchemeConfig { act_centroids: 48, ..cfg };
        assert!(bad.validate().is_err());
        assert!(cfg.with_table_bits(16).validate().is_err());
        assert_eq!(cfg.index_bits(), 4);
    }
}
