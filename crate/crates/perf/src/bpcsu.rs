//! Chain-length sizing for the parallel centroid search unit.
//!
//! A search unit splits the `c_a` distance PEs into `c_a / l` chains of
//! length `l` followed by a `log(c_a / l)`-deep reduction tree. The chains
//! are as long as possible while the search still hides under the table
//! load of the same step:
//!
//! `(8 c_a c_w M / G + log(c_w) M) / C >= 32 c_a / C + l + log(c_a / l)`
//!
//! with `C` in bits per cycle.

/// Table and index load time of one step, in cycles.
pub fn bpcsu_lhs(m: usize, g: usize, c_w: usize, c_a: usize, c_bits: f64) -> f64 {
    let (m, g, c_w, c_a) = (m as f64, g as f64, c_w as f64, c_a as f64);
    (8.0 * c_a * c_w * m / g + c_w.log2() * m) / c_bits
}

/// Codebook load plus search latency with chain length `l`.
pub fn bpcsu_rhs(c_a: usize, l: usize, c_bits: f64) -> f64 {
    32.0 * c_a as f64 / c_bits + l as f64 + (c_a as f64 / l as f64).log2()
}

/// Largest power-of-two `l <= c_a` satisfying the overlap inequality, or 1.
pub fn bpcsu_chain_length(m: usize, g: usize, c_w: usize, c_a: usize, c_bits: f64) -> usize {
    let lhs = bpcsu_lhs(m, g, c_w, c_a, c_bits);
    let mut l = c_a.max(1).next_power_of_two();
    if l > c_a {
        l /= 2;
    }
    while l > 1 {
        if bpcsu_rhs(c_a, l, c_bits) <= lhs {
            return l;
        }
        l /= 2;
    }
    1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_configuration() {
        assert_eq!(bpcsu_lhs(2048, 512, 16, 64, 2048.0), 20.0);
        assert_eq!(bpcsu_rhs(64, 16, 2048.0), 19.0);
        assert_eq!(bpcsu_rhs(64, 32, 2048.0), 34.0);
        assert_eq!(bpcsu_chain_length(2048, 512, 16, 64, 2048.0), 16);
    }

    #[test]
    fn unbounded_bandwidth_falls_back_to_one() {
        assert_eq!(bpcsu_chain_length(2048, 512, 16, 64, f64::INFINITY), 1);
    }

    #[test]
    fn full_chain_needs_load_time_of_at_least_c_a() {
        // l = c_a leaves no reduction tree: rhs = 32 c_a / C + c_a
        let c = 2048.0;
        assert_eq!(bpcsu_rhs(64, 64, c), 1.0 + 64.0);
        assert_eq!(bpcsu_chain_length(1 << 16, 512, 16, 64, c), 64);
    }
}
