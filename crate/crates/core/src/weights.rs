//! Weight vector quantization: grouping, per-group codebooks and the packed
//! centroid index table.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codebook::{train_codebook, Codebook};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::pack::{pack_indices, unpack_indices};
use crate::scheme::SchemeConfig;

/// Layout of weight groups over an `m x d` matrix cut into length-`v` vectors.
///
/// A group is `group_size` consecutive vectors along the output dimension
/// inside one channel slice, so every group pairs with exactly one activation
/// codebook. When `group_size` does not divide `m` the last group of each
/// slice is short.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupLayout {
    pub m: usize,
    pub d: usize,
    pub vector_len: usize,
    pub group_size: usize,
}

impl GroupLayout {
    pub fn new(m: usize, d: usize, vector_len: usize, group_size: usize) -> Result<Self> {
        if vector_len == 0 || !d.is_multiple_of(vector_len) {
            return Err(Error::Shape(format!("v = {vector_len} does not divide D = {d}")));
        }
        if group_size == 0 || group_size > m {
            return Err(Error::GroupSliceMisalignment(format!(
                "G = {group_size} vectors cannot sit inside one slice of M = {m} vectors"
            )));
        }
        Ok(GroupLayout { m, d, vector_len, group_size })
    }

    pub fn for_scheme(m: usize, d: usize, cfg: &SchemeConfig) -> Result<Self> {
        GroupLayout::new(m, d, cfg.vector_len, cfg.group_size)
    }

    #[inline]
    pub fn slices(&self) -> usize {
        self.d / self.vector_len
    }

    #[inline]
    pub fn groups_per_slice(&self) -> usize {
        self.m.div_ceil(self.group_size)
    }

    #[inline]
    pub fn num_groups(&self) -> usize {
        self.slices() * self.groups_per_slice()
    }

    #[inline]
    pub fn group_of(&self, row: usize, slice: usize) -> usize {
        slice * self.groups_per_slice() + row / self.group_size
    }

    #[inline]
    pub fn slice_of(&self, group: usize) -> usize {
        group / self.groups_per_slice()
    }

    /// Output rows covered by `group`.
    pub fn rows_of(&self, group: usize) -> std::ops::Range<usize> {
        let start = (group % self.groups_per_slice()) * self.group_size;
        start..(start + self.group_size).min(self.m)
    }

    /// Number of length-v vectors in the matrix.
    #[inline]
    pub fn num_vectors(&self) -> usize {
        self.m * self.slices()
    }
}

/// Packed weight centroid indices, row-major over (output row, channel slice).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightIndexTable {
    pub layout: GroupLayout,
    pub bit_width: u32,
    pub packed: Vec<u8>,
}

impl WeightIndexTable {
    pub fn from_indices(layout: GroupLayout, bit_width: u32, indices: &[u32]) -> Result<Self> {
        if indices.len() != layout.num_vectors() {
            return Err(Error::LengthMismatch { expected: layout.num_vectors(), got: indices.len() });
        }
        Ok(WeightIndexTable { layout, bit_width, packed: pack_indices(indices, bit_width)? })
    }

    pub fn indices(&self) -> Result<Vec<u32>> {
        unpack_indices(&self.packed, self.bit_width, self.layout.num_vectors())
    }

    pub fn byte_len(&self) -> usize {
        self.packed.len()
    }

    #[inline]
    pub fn position(&self, row: usize, slice: usize) -> usize {
        row * self.layout.slices() + slice
    }
}

/// Stream-specific seed so that each group trains independently of the
/// order in which groups are processed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub const DEFAULT_KMEANS_ITERS: usize = 25;

/// Per-group k-means codebooks and the packed index table for `w`.
pub fn quantize_weights(
    w: &Matrix,
    cfg: &SchemeConfig,
    seed: u64,
) -> Result<(Vec<Codebook>, WeightIndexTable)> {
    if !cfg.kind.uses_weight_codebooks() {
        return Err(Error::InvalidScheme(format!("{} has no weight codebooks", cfg.kind)));
    }
    let (m, d) = w.shape();
    cfg.validate_for(m, d)?;
    if !w.is_finite() {
        return Err(Error::NonFinite);
    }
    let layout = GroupLayout::for_scheme(m, d, cfg)?;
    let v = layout.vector_len;

    let per_group: Vec<(Codebook, Vec<(usize, u32)>)> = (0..layout.num_groups())
        .into_par_iter()
        .map(|g| {
            let slice = layout.slice_of(g);
            let rows = layout.rows_of(g);
            let vectors = Matrix::from_fn(rows.len(), v, |r, k| w.vector(rows.start + r, slice, v)[k]);
            let cb = train_codebook(
                &vectors,
                cfg.weight_centroids,
                DEFAULT_KMEANS_ITERS,
                derive_seed(seed, g as u64),
            )?;
            let assigned = rows
                .map(|row| (row * layout.slices() + slice, cb.nearest(w.vector(row, slice, v)) as u32))
                .collect();
            Ok((cb, assigned))
        })
        .collect::<Result<_>>()?;

    let mut indices = vec![0u32; layout.num_vectors()];
    let mut codebooks = Vec::with_capacity(per_group.len());
    for (cb, assigned) in per_group {
        for (pos, idx) in assigned {
            indices[pos] = idx;
        }
        codebooks.push(cb);
    }
    let table = WeightIndexTable::from_indices(layout, cfg.index_bits(), &indices)?;
    Ok((codebooks, table))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheme::SchemeKind;

    #[test]
    fn layout_groups_stay_in_slice() {
        let l = GroupLayout::new(10, 6, 2, 4).unwrap();
        assert_eq!(l.slices(), 3);
        assert_eq!(l.groups_per_slice(), 3);
        assert_eq!(l.num_groups(), 9);
        assert_eq!(l.rows_of(2), 8..10);
        assert_eq!(l.group_of(9, 2), 8);
        assert_eq!(l.slice_of(8), 2);
        assert!(matches!(GroupLayout::new(4, 6, 2, 8), Err(Error::GroupSliceMisalignment(_))));
    }

    #[test]
    fn packed_length_matches_bit_budget() {
        let cfg = SchemeConfig::new(SchemeKind::WeightVq, 8, 2, 16, 4);
        let w = Matrix::from_fn(32, 8, |r, c| ((r * 3 + c) % 5) as f32);
        let (cbs, table) = quantize_weights(&w, &cfg, 1).unwrap();
        assert_eq!(cbs.len(), 4 * 4);
        // ceil(M * (D/v) * log2(c_w) / 8)
        assert_eq!(table.byte_len(), (32 * 4 * 4usize).div_ceil(8));
        assert!(table.indices().unwrap().iter().all(|&i| i < 16));
    }

    #[test]
    fn figure_vector_maps_to_index_zero() {
        // group codebook [(2,3), (5,1)] and weight vector (1,3)
        let cb = Codebook::from_rows(&[vec![2.0, 3.0], vec![5.0, 1.0]]).unwrap();
        assert_eq!(cb.nearest(&[1.0, 3.0]), 0);
    }

    #[test]
    fn few_distinct_vectors_reconstruct_exactly() {
        let cfg = SchemeConfig::new(SchemeKind::WeightVq, 4, 2, 4, 4);
        let vals = [[1.0, 3.0], [2.0, 3.0], [5.0, 1.0], [-0.25, 7.5]];
        let w = Matrix::from_fn(8, 4, |r, c| vals[(r + c / 2) % 4][c % 2]);
        let (cbs, table) = quantize_weights(&w, &cfg, 9).unwrap();
        let idx = table.indices().unwrap();
        for r in 0..8 {
            for s in 0..2 {
                let g = table.layout.group_of(r, s);
                let k = idx[table.position(r, s)] as usize;
                assert_eq!(cbs[g].centroid(k), w.vector(r, s, 2));
            }
        }
    }

    #[test]
    fn rejects_activation_only_scheme() {
        let cfg = SchemeConfig::new(SchemeKind::ActivationVq, 4, 2, 4, 4);
        assert!(quantize_weights(&Matrix::zeros(8, 4), &cfg, 0).is_err());
    }
}
