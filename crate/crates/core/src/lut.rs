//! Pre-computed dot-product tables and their per-tensor INT8 form.

use serde::{Deserialize, Serialize};

use crate::codebook::Codebook;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::weights::GroupLayout;

/// Affine uint8 tensor: `value ~= scale * (q - zero_point)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantizedTable {
    pub q: Vec<u8>,
    pub scale: f32,
    pub zero_point: f32,
}

impl QuantizedTable {
    #[inline]
    pub fn dequantize_entry(&self, i: usize) -> f32 {
        (self.scale as f64 * (self.q[i] as f64 - self.zero_point as f64)) as f32
    }

    pub fn dequantize(&self) -> Vec<f32> {
        (0..self.q.len()).map(|i| self.dequantize_entry(i)).collect()
    }
}

/// Per-tensor zero-point quantization to unsigned 8 bits.
///
/// `s = (max - min) / 255` (1 when the range is degenerate), `z = -min / s`,
/// `q = clamp(round(x / s + z), 0, 255)`.
pub fn quantize_table_int8(values: &[f32]) -> Result<QuantizedTable> {
    if values.is_empty() {
        return Err(Error::Shape("empty table".into()));
    }
    if values.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite);
    }
    let (lo, hi) = values
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let scale = if hi > lo { ((hi as f64 - lo as f64) / 255.0) as f32 } else { 1.0 };
    let zero_point = (-(lo as f64) / scale as f64) as f32;
    let (s, z) = (scale as f64, zero_point as f64);
    let q = values
        .iter()
        .map(|&x| (x as f64 / s + z).round().clamp(0.0, 255.0) as u8)
        .collect();
    Ok(QuantizedTable { q, scale, zero_point })
}

/// Table entries, either full precision or deployed uint8.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TableData {
    F32(Vec<f32>),
    U8(QuantizedTable),
}

impl TableData {
    pub fn len(&self) -> usize {
        match self {
            TableData::F32(v) => v.len(),
            TableData::U8(t) => t.q.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Size of the table as stored.
    pub fn byte_len(&self) -> usize {
        match self {
            TableData::F32(v) => 4 * v.len(),
            TableData::U8(t) => t.q.len(),
        }
    }

    pub fn quantized(&self) -> Result<TableData> {
        match self {
            TableData::F32(v) => Ok(TableData::U8(quantize_table_int8(v)?)),
            TableData::U8(_) => Ok(self.clone()),
        }
    }

    pub fn to_f32(&self) -> Vec<f32> {
        match self {
            TableData::F32(v) => v.clone(),
            TableData::U8(t) => t.dequantize(),
        }
    }
}

#[inline]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = 0f32;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// 1D tables: for every weight vector (m, d'), its dot products with the
/// `c_a` centroids of slice d'. Entry `(m * slices + d') * c_a + j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lut1D {
    pub m: usize,
    pub slices: usize,
    pub act_centroids: usize,
    pub data: TableData,
}

impl Lut1D {
    #[inline]
    pub fn offset(&self, row: usize, slice: usize) -> usize {
        (row * self.slices + slice) * self.act_centroids
    }

    pub fn byte_len(&self) -> usize {
        self.data.byte_len()
    }

    pub fn quantized(&self) -> Result<Lut1D> {
        Ok(Lut1D { data: self.data.quantized()?, ..self.clone() })
    }
}

pub fn build_lut1d(w: &Matrix, act_codebooks: &[Codebook]) -> Result<Lut1D> {
    let (m, d) = w.shape();
    let first = act_codebooks.first().ok_or(Error::MissingField("activation codebooks"))?;
    let v = first.vector_len();
    let c_a = first.size();
    if d % v != 0 || act_codebooks.len() != d / v {
        return Err(Error::Shape(format!(
            "{} activation codebooks of length {v} do not tile D = {d}",
            act_codebooks.len()
        )));
    }
    if act_codebooks.iter().any(|cb| cb.vector_len() != v || cb.size() != c_a) {
        return Err(Error::Shape("activation codebooks differ in shape".into()));
    }
    let slices = d / v;
    let mut data = Vec::with_capacity(m * slices * c_a);
    for row in 0..m {
        for (slice, cb) in act_codebooks.iter().enumerate() {
            let wv = w.vector(row, slice, v);
            data.extend(cb.iter().map(|c| dot(wv, c)));
        }
    }
    Ok(Lut1D { m, slices, act_centroids: c_a, data: TableData::F32(data) })
}

/// 2D tables: one `c_a x c_w` table per weight group,
/// entry `(g * c_a + i) * c_w + j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lut2D {
    pub layout: GroupLayout,
    pub act_centroids: usize,
    pub weight_centroids: usize,
    pub data: TableData,
}

impl Lut2D {
    #[inline]
    pub fn row_offset(&self, group: usize, act_index: usize) -> usize {
        (group * self.act_centroids + act_index) * self.weight_centroids
    }

    pub fn num_groups(&self) -> usize {
        self.layout.num_groups()
    }

    pub fn byte_len(&self) -> usize {
        self.data.byte_len()
    }

    pub fn quantized(&self) -> Result<Lut2D> {
        Ok(Lut2D { data: self.data.quantized()?, ..self.clone() })
    }
}

pub fn build_lut2d(
    weight_codebooks: &[Codebook],
    act_codebooks: &[Codebook],
    layout: &GroupLayout,
) -> Result<Lut2D> {
    if layout.group_size > layout.m {
        return Err(Error::GroupSliceMisalignment(format!(
            "group of {} vectors spans more than one slice of {} rows",
            layout.group_size, layout.m
        )));
    }
    if weight_codebooks.len() != layout.num_groups() {
        return Err(Error::LengthMismatch { expected: layout.num_groups(), got: weight_codebooks.len() });
    }
    if act_codebooks.len() != layout.slices() {
        return Err(Error::LengthMismatch { expected: layout.slices(), got: act_codebooks.len() });
    }
    let v = layout.vector_len;
    let c_a = act_codebooks[0].size();
    let c_w = weight_codebooks[0].size();
    if act_codebooks.iter().any(|cb| cb.vector_len() != v || cb.size() != c_a)
        || weight_codebooks.iter().any(|cb| cb.vector_len() != v || cb.size() != c_w)
    {
        return Err(Error::Shape("codebooks differ in vector length or size".into()));
    }
    let mut data = Vec::with_capacity(layout.num_groups() * c_a * c_w);
    for (g, wcb) in weight_codebooks.iter().enumerate() {
        let acb = &act_codebooks[layout.slice_of(g)];
        for a in acb.iter() {
            data.extend(wcb.iter().map(|w| dot(a, w)));
        }
    }
    Ok(Lut2D { layout: *layout, act_centroids: c_a, weight_centroids: c_w, data: TableData::F32(data) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lut1d_figure_entries() {
        let w = Matrix::from_rows(&[vec![1.0, 3.0]]).unwrap();
        let cb = Codebook::from_rows(&[vec![6.0, 2.0], vec![4.0, 5.0]]).unwrap();
        let lut = build_lut1d(&w, &[cb]).unwrap();
        assert_eq!(lut.data, TableData::F32(vec![12.0, 19.0]));
    }

    #[test]
    fn lut1d_zero_weights() {
        let w = Matrix::zeros(2, 2);
        let cb = Codebook::from_rows(&[vec![6.0, 2.0], vec![4.0, 5.0]]).unwrap();
        assert!(build_lut1d(&w, &[cb]).unwrap().data.to_f32().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn lut2d_figure_entry() {
        let layout = GroupLayout::new(1, 2, 2, 1).unwrap();
        let act = Codebook::from_rows(&[vec![6.0, 2.0], vec![4.0, 5.0]]).unwrap();
        let wcb = Codebook::from_rows(&[vec![2.0, 3.0], vec![1.0, -3.0]]).unwrap();
        let lut = build_lut2d(&[wcb], &[act], &layout).unwrap();
        let t = lut.data.to_f32();
        assert_eq!(t[lut.row_offset(0, 0)], 18.0);
        // (6,2) . (1,-3) = 0: orthogonal pair
        assert_eq!(t[lut.row_offset(0, 0) + 1], 0.0);
    }

    #[test]
    fn lut2d_rejects_bad_counts() {
        let layout = GroupLayout::new(2, 2, 2, 1).unwrap();
        let cb = Codebook::from_rows(&[vec![1.0, 0.0]]).unwrap();
        assert!(build_lut2d(&[cb.clone()], &[cb.clone()], &layout).is_err());
        let wide = GroupLayout { m: 2, d: 2, vector_len: 2, group_size: 4 };
        assert!(matches!(
            build_lut2d(&[cb.clone()], &[cb], &wide),
            Err(Error::GroupSliceMisalignment(_))
        ));
    }

    #[test]
    fn int8_constant_table() {
        let t = quantize_table_int8(&[7.0; 5]).unwrap();
        assert_eq!(t.scale, 1.0);
        assert!(t.q.iter().all(|&q| q == t.q[0]));
        assert!(t.dequantize().iter().all(|&x| x == 7.0));
    }

    #[test]
    fn int8_aligned_range() {
        let t = quantize_table_int8(&[0.0, 255.0]).unwrap();
        assert_eq!(t.q, vec![0, 255]);
        assert_eq!(t.scale, 1.0);
        assert_eq!(t.zero_point, 0.0);
    }

    #[test]
    fn int8_symmetric_range_within_half_step() {
        let vals = [-1.0f32, 0.0, 1.0];
        let t = quantize_table_int8(&vals).unwrap();
        let half = t.scale as f64 / 2.0;
        for (i, &x) in vals.iter().enumerate() {
            let deq = t.scale as f64 * (t.q[i] as f64 - t.zero_point as f64);
            assert!((deq - x as f64).abs() <= half, "entry {i}: {deq} vs {x}");
        }
        assert_eq!(t.q[0], 0);
        assert_eq!(t.q[2], 255);
    }

    #[test]
    fn int8_rejects_bad_input() {
        assert!(quantize_table_int8(&[]).is_err());
        assert!(matches!(quantize_table_int8(&[1.0, f32::INFINITY]), Err(Error::NonFinite)));
    }
}
