//! Matrix-multiplication paths: the dense oracle, weight-VQ (reconstruct then
//! multiply), activation-VQ over 1D tables and co-quantization over 2D tables.
//!
//! Lookup paths over uint8 tables accumulate raw q-values in `i32` and
//! dequantize once per output with `s * (acc - n * z)`; fp32 tables are summed
//! in ascending slice order. Tokens are processed in parallel, each output is
//! reduced serially, so results do not depend on the thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codebook::{train_codebook, Codebook};
use crate::error::{Error, Result};
use crate::lut::{build_lut1d, build_lut2d, Lut1D, Lut2D, TableData};
use crate::matrix::Matrix;
use crate::scheme::{SchemeConfig, SchemeKind};
use crate::weights::{derive_seed, quantize_weights, WeightIndexTable, DEFAULT_KMEANS_ITERS};

/// `Y[l][m] = sum_d X[l][d] * W[m][d]`, summed in ascending `d`.
pub fn dense_matmul(x: &Matrix, w: &Matrix) -> Result<Matrix> {
    if x.cols() != w.cols() {
        return Err(Error::Shape(format!(
            "X is {}x{} but W is {}x{}",
            x.rows(),
            x.cols(),
            w.rows(),
            w.cols()
        )));
    }
    let m = w.rows();
    let mut out = vec![0f32; x.rows() * m];
    out.par_chunks_mut(m.max(1)).enumerate().for_each(|(l, y)| {
        let xr = x.row(l);
        for (mi, slot) in y.iter_mut().enumerate() {
            let mut acc = 0f32;
            for (a, b) in xr.iter().zip(w.row(mi)) {
                acc += a * b;
            }
            *slot = acc;
        }
    });
    Matrix::from_vec(x.rows(), m, out)
}

/// `s * (acc - n * z)`, evaluated in f64.
#[inline]
pub fn dequantize_acc(acc: i32, n: usize, s: f32, z: f32) -> f32 {
    (s as f64 * (acc as f64 - n as f64 * z as f64)) as f32
}

/// Integer accumulators of one token: one entry per output row, each the sum
/// of `terms` uint8 table entries.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AccumulatorState {
    pub acc: Vec<i32>,
    pub terms: usize,
}

impl AccumulatorState {
    pub fn dequantize(&self, scale: f32, zero_point: f32) -> Vec<f32> {
        self.acc.iter().map(|&a| dequantize_acc(a, self.terms, scale, zero_point)).collect()
    }
}

/// Lookup tables of a quantized layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Tables {
    OneD(Lut1D),
    TwoD(Lut2D),
}

impl Tables {
    pub fn data(&self) -> &TableData {
        match self {
            Tables::OneD(t) => &t.data,
            Tables::TwoD(t) => &t.data,
        }
    }

    pub fn byte_len(&self) -> usize {
        self.data().byte_len()
    }
}

/// Byte footprint of a quantized layer, split by component.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeBreakdown {
    pub weight_indices: usize,
    pub weight_codebooks: usize,
    pub act_codebooks: usize,
    pub tables: usize,
}

impl SizeBreakdown {
    pub fn total(&self) -> usize {
        self.weight_indices + self.weight_codebooks + self.act_codebooks + self.tables
    }
}

/// One linear layer in quantized form. Which optional fields are present is
/// fixed by `scheme.kind`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantizedLinear {
    pub scheme: SchemeConfig,
    pub m: usize,
    pub d: usize,
    pub weight_indices: Option<WeightIndexTable>,
    pub weight_codebooks: Option<Vec<Codebook>>,
    pub act_codebooks: Option<Vec<Codebook>>,
    pub tables: Option<Tables>,
}

/// One codebook per channel slice, trained on the activation samples of that
/// slice.
pub fn train_act_codebooks(samples: &Matrix, v: usize, c_a: usize, seed: u64) -> Result<Vec<Codebook>> {
    let d = samples.cols();
    if v == 0 || !d.is_multiple_of(v) {
        return Err(Error::Shape(format!("v = {v} does not divide D = {d}")));
    }
    (0..d / v)
        .into_par_iter()
        .map(|s| {
            let vecs = Matrix::from_fn(samples.rows(), v, |r, k| samples.vector(r, s, v)[k]);
            train_codebook(&vecs, c_a, DEFAULT_KMEANS_ITERS, derive_seed(seed ^ 0xA5A5_0000, s as u64))
        })
        .collect()
}

impl QuantizedLinear {
    /// Quantizes `w` (`M x D`) under `cfg`. Activation codebooks are trained
    /// on `act_samples` (`n x D`), which the activation-VQ and co-quant
    /// schemes require.
    pub fn quantize(w: &Matrix, act_samples: Option<&Matrix>, cfg: &SchemeConfig, seed: u64) -> Result<Self> {
        let act = if cfg.kind.uses_activation_codebooks() {
            let samples = act_samples.ok_or(Error::MissingField("activation samples"))?;
            if samples.cols() != w.cols() {
                return Err(Error::LengthMismatch { expected: w.cols(), got: samples.cols() });
            }
            Some(train_act_codebooks(samples, cfg.vector_len, cfg.act_centroids, seed)?)
        } else {
            None
        };
        QuantizedLinear::with_act_codebooks(w, act, cfg, seed)
    }

    /// Like [`QuantizedLinear::quantize`] with caller-supplied activation
    /// codebooks.
    pub fn with_act_codebooks(
        w: &Matrix,
        act_codebooks: Option<Vec<Codebook>>,
        cfg: &SchemeConfig,
        seed: u64,
    ) -> Result<Self> {
        let (m, d) = w.shape();
        cfg.validate_for(m, d)?;
        if !w.is_finite() {
            return Err(Error::NonFinite);
        }
        let finish = |t: TableData| -> Result<TableData> {
            match cfg.table_bits {
                32 => Ok(t),
                8 => t.quantized(),
                b => Err(Error::InvalidScheme(format!("{b}-bit tables are not executable"))),
            }
        };
        let need_act = || act_codebooks.clone().ok_or(Error::MissingField("activation codebooks"));
        let q = match cfg.kind {
            SchemeKind::WeightVq => {
                let (cbs, idx) = quantize_weights(w, cfg, seed)?;
                QuantizedLinear {
                    scheme: *cfg,
                    m,
                    d,
                    weight_indices: Some(idx),
                    weight_codebooks: Some(cbs),
                    act_codebooks: None,
                    tables: None,
                }
            }
            SchemeKind::ActivationVq => {
                let act = need_act()?;
                let mut lut = build_lut1d(w, &act)?;
                lut.data = finish(lut.data)?;
                QuantizedLinear {
                    scheme: *cfg,
                    m,
                    d,
                    weight_indices: None,
                    weight_codebooks: None,
                    act_codebooks: Some(act),
                    tables: Some(Tables::OneD(lut)),
                }
            }
            SchemeKind::Coquant => {
                let act = need_act()?;
                let (cbs, idx) = quantize_weights(w, cfg, seed)?;
                let mut lut = build_lut2d(&cbs, &act, &idx.layout)?;
                lut.data = finish(lut.data)?;
                QuantizedLinear {
                    scheme: *cfg,
                    m,
                    d,
                    weight_indices: Some(idx),
                    weight_codebooks: Some(cbs),
                    act_codebooks: Some(act),
                    tables: Some(Tables::TwoD(lut)),
                }
            }
            other => {
                return Err(Error::InvalidScheme(format!("{other} is not a lookup-table scheme")));
            }
        };
        q.check()?;
        Ok(q)
    }

    /// Verifies that exactly the fields required by the scheme are present
    /// and that every index is in range.
    pub fn check(&self) -> Result<()> {
        let kind = self.scheme.kind;
        let v = self.scheme.vector_len;
        if v == 0 || !self.d.is_multiple_of(v) {
            return Err(Error::Shape(format!("v = {v} does not divide D = {}", self.d)));
        }
        let slices = self.d / v;
        let want_w = kind.uses_weight_codebooks();
        let want_a = kind.uses_activation_codebooks();
        if self.weight_indices.is_some() != want_w || self.weight_codebooks.is_some() != want_w {
            return Err(Error::InvalidScheme(format!("{kind}: weight codebook fields do not match the scheme")));
        }
        if self.act_codebooks.is_some() != want_a || self.tables.is_some() != want_a {
            return Err(Error::InvalidScheme(format!("{kind}: activation fields do not match the scheme")));
        }
        if let (Some(idx), Some(cbs)) = (&self.weight_indices, &self.weight_codebooks) {
            let layout = idx.layout;
            if layout.m != self.m || layout.d != self.d || layout.vector_len != v {
                return Err(Error::Shape("index table layout disagrees with the layer shape".into()));
            }
            if cbs.len() != layout.num_groups() {
                return Err(Error::LengthMismatch { expected: layout.num_groups(), got: cbs.len() });
            }
            let indices = idx.indices()?;
            for (pos, &i) in indices.iter().enumerate() {
                let g = layout.group_of(pos / slices, pos % slices);
                if i as usize >= cbs[g].size() {
                    return Err(Error::IndexOutOfRange { index: i as usize, bound: cbs[g].size() });
                }
            }
        }
        if let Some(act) = &self.act_codebooks {
            if act.len() != slices {
                return Err(Error::LengthMismatch { expected: slices, got: act.len() });
            }
        }
        match (&self.tables, kind) {
            (None, _) => {}
            (Some(Tables::OneD(t)), SchemeKind::ActivationVq) => {
                if t.m != self.m || t.slices != slices {
                    return Err(Error::Shape("1D table shape disagrees with the layer".into()));
                }
            }
            (Some(Tables::TwoD(t)), SchemeKind::Coquant) => {
                if t.layout.m != self.m || t.layout.d != self.d {
                    return Err(Error::Shape("2D table shape disagrees with the layer".into()));
                }
            }
            _ => return Err(Error::InvalidScheme(format!("{kind}: wrong table kind"))),
        }
        Ok(())
    }

    pub fn slices(&self) -> usize {
        self.d / self.scheme.vector_len
    }

    pub fn sizes(&self) -> SizeBreakdown {
        let cb_bytes = |cbs: &Option<Vec<Codebook>>| {
            cbs.as_ref().map_or(0, |c| c.iter().map(|cb| 4 * cb.as_slice().len()).sum())
        };
        SizeBreakdown {
            weight_indices: self.weight_indices.as_ref().map_or(0, |i| i.byte_len()),
            weight_codebooks: cb_bytes(&self.weight_codebooks),
            act_codebooks: cb_bytes(&self.act_codebooks),
            tables: self.tables.as_ref().map_or(0, |t| t.byte_len()),
        }
    }

    fn expect(&self, kind: SchemeKind) -> Result<()> {
        if self.scheme.kind != kind {
            return Err(Error::SchemeMismatch { expected: kind, got: self.scheme.kind });
        }
        Ok(())
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.d {
            return Err(Error::LengthMismatch { expected: self.d, got: x.cols() });
        }
        Ok(())
    }

    /// Nearest activation centroid per (token, slice), row-major.
    pub fn activation_indices(&self, x: &Matrix) -> Result<Vec<u32>> {
        let act = self.act_codebooks.as_ref().ok_or(Error::MissingField("activation codebooks"))?;
        self.check_input(x)?;
        let v = self.scheme.vector_len;
        let slices = self.slices();
        let mut out = vec![0u32; x.rows() * slices];
        out.par_chunks_mut(slices).enumerate().for_each(|(l, row)| {
            for (s, slot) in row.iter_mut().enumerate() {
                *slot = act[s].nearest(x.vector(l, s, v)) as u32;
            }
        });
        Ok(out)
    }

    /// Replaces every activation vector by its nearest centroid.
    pub fn snap_activations(&self, x: &Matrix) -> Result<Matrix> {
        let act = self.act_codebooks.as_ref().ok_or(Error::MissingField("activation codebooks"))?;
        let idx = self.activation_indices(x)?;
        let v = self.scheme.vector_len;
        let slices = self.slices();
        Ok(Matrix::from_fn(x.rows(), self.d, |l, c| {
            let s = c / v;
            act[s].centroid(idx[l * slices + s] as usize)[c % v]
        }))
    }

    /// Runs the path selected by the scheme.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        match self.scheme.kind {
            SchemeKind::WeightVq => matmul_weight_vq(x, self),
            SchemeKind::ActivationVq => matmul_activation_vq(x, self),
            SchemeKind::Coquant => matmul_coquant(x, self),
            other => Err(Error::InvalidScheme(format!("{other} is not a lookup-table scheme"))),
        }
    }

    /// Folds `add(acc, position)` over the table entries each (token, output)
    /// pair reads, in ascending slice order.
    fn lookup<T, F>(&self, x: &Matrix, zero: T, add: F) -> Result<Vec<Vec<T>>>
    where
        T: Copy + Send + Sync,
        F: Fn(T, usize) -> T + Sync,
    {
        self.check_input(x)?;
        let act_idx = self.activation_indices(x)?;
        let slices = self.slices();
        let m = self.m;
        match self.tables.as_ref().ok_or(Error::MissingField("lookup tables"))? {
            Tables::OneD(t) => Ok((0..x.rows())
                .into_par_iter()
                .map(|l| {
                    let a = &act_idx[l * slices..(l + 1) * slices];
                    (0..m)
                        .map(|mi| {
                            let mut acc = zero;
                            for (s, &i) in a.iter().enumerate() {
                                acc = add(acc, t.offset(mi, s) + i as usize);
                            }
                            acc
                        })
                        .collect()
                })
                .collect()),
            Tables::TwoD(t) => {
                let widx = self
                    .weight_indices
                    .as_ref()
                    .ok_or(Error::MissingField("weight indices"))?
                    .indices()?;
                let layout = t.layout;
                Ok((0..x.rows())
                    .into_par_iter()
                    .map(|l| {
                        let a = &act_idx[l * slices..(l + 1) * slices];
                        (0..m)
                            .map(|mi| {
                                let mut acc = zero;
                                for (s, &i) in a.iter().enumerate() {
                                    let g = layout.group_of(mi, s);
                                    let j = widx[mi * slices + s] as usize;
                                    acc = add(acc, t.row_offset(g, i as usize) + j);
                                }
                                acc
                            })
                            .collect()
                    })
                    .collect())
            }
        }
    }

    /// Integer accumulators per token for uint8 tables.
    pub fn accumulators(&self, x: &Matrix) -> Result<Vec<AccumulatorState>> {
        let TableData::U8(t) = self.tables.as_ref().ok_or(Error::MissingField("lookup tables"))?.data() else {
            return Err(Error::InvalidScheme("accumulators need uint8 tables".into()));
        };
        let rows = self.lookup(x, 0i32, |acc, p| acc + t.q[p] as i32)?;
        let terms = self.slices();
        Ok(rows.into_iter().map(|acc| AccumulatorState { acc, terms }).collect())
    }

    fn lookup_matmul(&self, x: &Matrix) -> Result<Matrix> {
        let data = self.tables.as_ref().ok_or(Error::MissingField("lookup tables"))?.data();
        let rows: Vec<Vec<f32>> = match data {
            TableData::F32(t) => self.lookup(x, 0f32, |acc, p| acc + t[p])?,
            TableData::U8(t) => self
                .accumulators(x)?
                .into_iter()
                .map(|a| a.dequantize(t.scale, t.zero_point))
                .collect(),
        };
        Matrix::from_vec(x.rows(), self.m, rows.concat())
    }
}

/// Weight matrix rebuilt from centroids and indices.
pub fn reconstruct(q: &QuantizedLinear) -> Result<Matrix> {
    let idx = q.weight_indices.as_ref().ok_or(Error::MissingField("weight indices"))?;
    let cbs = q.weight_codebooks.as_ref().ok_or(Error::MissingField("weight codebooks"))?;
    let layout = idx.layout;
    let v = layout.vector_len;
    let slices = layout.slices();
    let indices = idx.indices()?;
    let mut w = Matrix::zeros(layout.m, layout.d);
    for row in 0..layout.m {
        let out = w.row_mut(row);
        for s in 0..slices {
            let cb = &cbs[layout.group_of(row, s)];
            let i = indices[row * slices + s] as usize;
            if i >= cb.size() {
                return Err(Error::IndexOutOfRange { index: i, bound: cb.size() });
            }
            out[s * v..(s + 1) * v].copy_from_slice(cb.centroid(i));
        }
    }
    Ok(w)
}

pub fn matmul_weight_vq(x: &Matrix, q: &QuantizedLinear) -> Result<Matrix> {
    q.expect(SchemeKind::WeightVq)?;
    q.check_input(x)?;
    dense_matmul(x, &reconstruct(q)?)
}

pub fn matmul_activation_vq(x: &Matrix, q: &QuantizedLinear) -> Result<Matrix> {
    q.expect(SchemeKind::ActivationVq)?;
    q.lookup_matmul(x)
}

pub fn matmul_coquant(x: &Matrix, q: &QuantizedLinear) -> Result<Matrix> {
    q.expect(SchemeKind::Coquant)?;
    q.lookup_matmul(x)
}

/// Per-token int32 accumulators of the co-quantized path.
pub fn coquant_accumulators(x: &Matrix, q: &QuantizedLinear) -> Result<Vec<AccumulatorState>> {
    q.expect(SchemeKind::Coquant)?;
    q.accumulators(x)
}
