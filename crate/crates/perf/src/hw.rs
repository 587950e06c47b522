//! Device constants.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{PerfError, Result};

fn default_sfu_ops() -> f64 {
    5.0
}

/// Accelerator constants. Rates are per cycle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HardwareProfile {
    #[serde(default)]
    pub name: String,
    pub freq_mhz: f64,
    /// C: off-chip bytes per cycle available for tables, indices and codebooks.
    pub bandwidth_bytes_per_cycle: f64,
    /// N_p: on-chip memory ports.
    pub n_ports: f64,
    /// b_p: bits per port access.
    pub bits_per_port: f64,
    /// N_c: compute units.
    pub compute_units: f64,
    pub op_fp32: f64,
    pub op_int8: f64,
    /// fp32 operations per element for softmax, RoPE, norms and gating.
    #[serde(default = "default_sfu_ops")]
    pub sfu_ops_per_element: f64,
}

const V80: &str = include_str!("../profiles/v80.json");

impl HardwareProfile {
    /// The worked-example device: 16 ports of 32 bits, 256 fp32 units, C = 64.
    pub fn paper_example() -> Self {
        HardwareProfile {
            name: "worked-example".into(),
            freq_mhz: 1.0,
            bandwidth_bytes_per_cycle: 64.0,
            n_ports: 16.0,
            bits_per_port: 32.0,
            compute_units: 256.0,
            op_fp32: 1.0,
            op_int8: 1.0,
            sfu_ops_per_element: 5.0,
        }
    }

    /// Bundled V80-class profile (227 MHz, 32 x 256-bit table channels).
    pub fn v80() -> Self {
        serde_json::from_str(V80).expect("bundled profile parses")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let hw: HardwareProfile = serde_json::from_str(text)?;
        hw.validate()?;
        Ok(hw)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        HardwareProfile::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("freq_mhz", self.freq_mhz),
            ("bandwidth_bytes_per_cycle", self.bandwidth_bytes_per_cycle),
            ("n_ports", self.n_ports),
            ("bits_per_port", self.bits_per_port),
            ("compute_units", self.compute_units),
            ("op_fp32", self.op_fp32),
            ("op_int8", self.op_int8),
            ("sfu_ops_per_element", self.sfu_ops_per_element),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(PerfError::InvalidProfile(format!("{name} must be positive, got {value}")));
            }
        }
        Ok(())
    }

    /// N_p * b_p: on-chip bits per cycle.
    pub fn port_bits(&self) -> f64 {
        self.n_ports * self.bits_per_port
    }

    /// N_c * Op_fp32.
    pub fn fp32_rate(&self) -> f64 {
        self.compute_units * self.op_fp32
    }

    pub fn cycles_to_seconds(&self, cycles: f64) -> f64 {
        cycles / (self.freq_mhz * 1e6)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_profile_is_valid() {
        let hw = HardwareProfile::v80();
        hw.validate().unwrap();
        assert_eq!(hw.freq_mhz, 227.0);
        // 32 channels x 256 bits
        assert_eq!(hw.bandwidth_bytes_per_cycle, 32.0 * 256.0 / 8.0);
    }

    #[test]
    fn rejects_non_positive_fields() {
        let mut hw = HardwareProfile::paper_example();
        hw.n_ports = 0.0;
        assert!(hw.validate().is_err());
        assert!(HardwareProfile::from_json("{\"freq_mhz\": 1}").is_err());
    }
}
