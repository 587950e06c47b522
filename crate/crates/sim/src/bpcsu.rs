//! Centroid search unit: `c_a / l` chains of `l` distance PEs, then a
//! `log(c_a / l)`-deep reduction tree over the chain minima.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BpcsuConfig {
    pub chain_len: usize,
    pub num_chains: usize,
    pub reduction_depth: usize,
}

impl BpcsuConfig {
    /// Splits `c_a` distance PEs into chains of length `l`.
    pub fn new(c_a: usize, chain_len: usize) -> Result<Self> {
        if !c_a.is_power_of_two() || !chain_len.is_power_of_two() || chain_len > c_a {
            return Err(SimError::InvalidBpcsu(format!("chain length {chain_len} for {c_a} centroids")));
        }
        let num_chains = c_a / chain_len;
        Ok(BpcsuConfig { chain_len, num_chains, reduction_depth: num_chains.trailing_zeros() as usize })
    }

    pub fn centroids(&self) -> usize {
        self.chain_len * self.num_chains
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.chain_len.is_power_of_two()
            && self.num_chains.is_power_of_two()
            && self.reduction_depth == self.num_chains.trailing_zeros() as usize;
        if ok {
            Ok(())
        } else {
            Err(SimError::InvalidBpcsu(format!("{self:?}")))
        }
    }

    /// Pipeline depth seen by a single vector.
    pub fn depth(&self) -> u64 {
        (self.chain_len + self.reduction_depth) as u64
    }
}

/// Cycles to search `num_vectors` vectors streamed one per cycle.
///
/// Every vector is broadcast to all chains; stage `i` of a chain can take a
/// new vector each cycle once the previous vector has left it.
pub fn simulate_bpcsu(cfg: &BpcsuConfig, num_vectors: usize) -> Result<u64> {
    cfg.validate()?;
    if num_vectors == 0 {
        return Err(SimError::InvalidBpcsu("at least one vector is required".into()));
    }
    let stages = cfg.depth() as usize;
    // leave[s] = cycle at which the latest vector leaves stage s
    let mut leave = vec![0u64; stages];
    for i in 0..num_vectors as u64 {
        let mut t = i; // issue cycle
        for slot in leave.iter_mut() {
            t = t.max(*slot) + 1;
            *slot = t;
        }
    }
    Ok(leave.last().copied().unwrap_or(num_vectors as u64 - 1))
}
