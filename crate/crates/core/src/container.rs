//! `LUTLLM01` artifact container.
//!
//! Layout: the 8 magic bytes `LUTLLM01`, a little-endian `u64` manifest
//! length, the UTF-8 JSON manifest, then the raw little-endian tensor
//! payloads. Manifest offsets are relative to the start of the payload area.
//! Packed index tensors use the [`crate::pack`] bit layout.

use std::io::{Read, Write};
use std::path::Path;

use half::f16;
use serde::{Deserialize, Serialize};

use crate::codebook::Codebook;
use crate::error::{Error, Result};
use crate::kernels::{QuantizedLinear, Tables};
use crate::lut::{Lut1D, Lut2D, QuantizedTable, TableData};
use crate::matrix::Matrix;
use crate::pack::packed_len;
use crate::scheme::SchemeConfig;
use crate::weights::{GroupLayout, WeightIndexTable};

pub const MAGIC: &[u8; 8] = b"LUTLLM01";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DType {
    F32,
    F16,
    U8,
    /// Bit-packed unsigned indices; the width is in `bit_width`.
    Packed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub nbytes: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zero_point: Option<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bit_width: Option<u32>,
}

impl TensorEntry {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<SchemeConfig>,
    /// Free-form model description (the runner stores its config here).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<serde_json::Value>,
    pub tensors: Vec<TensorEntry>,
}

/// In-memory container: manifest plus the concatenated payloads.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    pub manifest: Manifest,
    payload: Vec<u8>,
}

impl Container {
    pub fn new(scheme: Option<SchemeConfig>) -> Self {
        Container { manifest: Manifest { scheme, ..Manifest::default() }, payload: Vec::new() }
    }

    pub fn payload_len(&self) -> usize {
        self.payload.len()
    }

    pub fn entry(&self, name: &str) -> Option<&TensorEntry> {
        self.manifest.tensors.iter().find(|t| t.name == name)
    }

    fn require(&self, name: &str) -> Result<&TensorEntry> {
        self.entry(name).ok_or_else(|| Error::Format(format!("tensor {name:?} not found")))
    }

    fn push(&mut self, mut entry: TensorEntry, bytes: &[u8]) -> Result<()> {
        if self.entry(&entry.name).is_some() {
            return Err(Error::Format(format!("duplicate tensor {:?}", entry.name)));
        }
        entry.offset = self.payload.len() as u64;
        entry.nbytes = bytes.len() as u64;
        self.payload.extend_from_slice(bytes);
        self.manifest.tensors.push(entry);
        Ok(())
    }

    fn bytes_of(&self, e: &TensorEntry) -> Result<&[u8]> {
        let start = e.offset as usize;
        let end = start
            .checked_add(e.nbytes as usize)
            .filter(|&end| end <= self.payload.len())
            .ok_or_else(|| Error::Format(format!("tensor {:?} runs past the payload", e.name)))?;
        Ok(&self.payload[start..end])
    }

    fn entry_template(name: &str, dtype: DType, shape: &[usize]) -> TensorEntry {
        TensorEntry {
            name: name.to_string(),
            dtype,
            shape: shape.to_vec(),
            offset: 0,
            nbytes: 0,
            scale: None,
            zero_point: None,
            bit_width: None,
        }
    }

    pub fn put_f32(&mut self, name: &str, shape: &[usize], values: &[f32]) -> Result<()> {
        check_numel(name, shape, values.len())?;
        let bytes: Vec<u8> = values.iter().flat_map(|x| x.to_le_bytes()).collect();
        self.push(Self::entry_template(name, DType::F32, shape), &bytes)
    }

    /// Stores values rounded to IEEE half precision.
    pub fn put_f16(&mut self, name: &str, shape: &[usize], values: &[f32]) -> Result<()> {
        check_numel(name, shape, values.len())?;
        let bytes: Vec<u8> = values.iter().flat_map(|&x| f16::from_f32(x).to_le_bytes()).collect();
        self.push(Self::entry_template(name, DType::F16, shape), &bytes)
    }

    pub fn put_u8(&mut self, name: &str, shape: &[usize], table: &QuantizedTable) -> Result<()> {
        check_numel(name, shape, table.q.len())?;
        let mut e = Self::entry_template(name, DType::U8, shape);
        e.scale = Some(table.scale);
        e.zero_point = Some(table.zero_point);
        self.push(e, &table.q)
    }

    pub fn put_packed(&mut self, name: &str, shape: &[usize], bit_width: u32, packed: &[u8]) -> Result<()> {
        let count: usize = shape.iter().product();
        if packed.len() != packed_len(count, bit_width) {
            return Err(Error::LengthMismatch { expected: packed_len(count, bit_width), got: packed.len() });
        }
        let mut e = Self::entry_template(name, DType::Packed, shape);
        e.bit_width = Some(bit_width);
        self.push(e, packed)
    }

    pub fn put_matrix(&mut self, name: &str, m: &Matrix, dtype: DType) -> Result<()> {
        match dtype {
            DType::F32 => self.put_f32(name, &[m.rows(), m.cols()], m.as_slice()),
            DType::F16 => self.put_f16(name, &[m.rows(), m.cols()], m.as_slice()),
            other => Err(Error::Format(format!("matrices are stored as f32 or f16, not {other:?}"))),
        }
    }

    /// Float tensor values (f16 payloads are widened).
    pub fn get_f32(&self, name: &str) -> Result<(Vec<usize>, Vec<f32>)> {
        let e = self.require(name)?;
        let bytes = self.bytes_of(e)?;
        let values: Vec<f32> = match e.dtype {
            DType::F32 => bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect(),
            DType::F16 => bytes.chunks_exact(2).map(|b| f16::from_le_bytes([b[0], b[1]]).to_f32()).collect(),
            other => return Err(Error::Format(format!("tensor {name:?} is {other:?}, not a float tensor"))),
        };
        check_numel(name, &e.shape, values.len())?;
        Ok((e.shape.clone(), values))
    }

    pub fn get_matrix(&self, name: &str) -> Result<Matrix> {
        let (shape, values) = self.get_f32(name)?;
        match shape[..] {
            [r, c] => Matrix::from_vec(r, c, values),
            _ => Err(Error::Format(format!("tensor {name:?} has shape {shape:?}, not a matrix"))),
        }
    }

    pub fn get_u8(&self, name: &str) -> Result<(Vec<usize>, QuantizedTable)> {
        let e = self.require(name)?;
        if e.dtype != DType::U8 {
            return Err(Error::Format(format!("tensor {name:?} is {:?}, not u8", e.dtype)));
        }
        let q = self.bytes_of(e)?.to_vec();
        check_numel(name, &e.shape, q.len())?;
        let scale = e.scale.ok_or(Error::MissingField("scale"))?;
        let zero_point = e.zero_point.ok_or(Error::MissingField("zero_point"))?;
        Ok((e.shape.clone(), QuantizedTable { q, scale, zero_point }))
    }

    pub fn get_packed(&self, name: &str) -> Result<(Vec<usize>, u32, Vec<u8>)> {
        let e = self.require(name)?;
        if e.dtype != DType::Packed {
            return Err(Error::Format(format!("tensor {name:?} is {:?}, not packed", e.dtype)));
        }
        let bits = e.bit_width.ok_or(Error::MissingField("bit_width"))?;
        Ok((e.shape.clone(), bits, self.bytes_of(e)?.to_vec()))
    }

    fn put_table(&mut self, name: &str, shape: &[usize], data: &TableData) -> Result<()> {
        match data {
            TableData::F32(v) => self.put_f32(name, shape, v),
            TableData::U8(t) => self.put_u8(name, shape, t),
        }
    }

    fn get_table(&self, name: &str) -> Result<TableData> {
        match self.require(name)?.dtype {
            DType::U8 => Ok(TableData::U8(self.get_u8(name)?.1)),
            _ => Ok(TableData::F32(self.get_f32(name)?.1)),
        }
    }

    fn put_codebooks(&mut self, name: &str, cbs: &[Codebook]) -> Result<()> {
        let first = cbs.first().ok_or(Error::MissingField("codebooks"))?;
        let values: Vec<f32> = cbs.iter().flat_map(|cb| cb.as_slice().iter().copied()).collect();
        self.put_f32(name, &[cbs.len(), first.size(), first.vector_len()], &values)
    }

    fn get_codebooks(&self, name: &str) -> Result<Vec<Codebook>> {
        let (shape, values) = self.get_f32(name)?;
        let [n, c, v] = shape[..] else {
            return Err(Error::Format(format!("codebook tensor {name:?} has shape {shape:?}")));
        };
        (0..n).map(|i| Codebook::new(v, values[i * c * v..(i + 1) * c * v].to_vec())).collect()
    }

    /// Stores a quantized layer under `prefix.*`.
    pub fn put_linear(&mut self, prefix: &str, q: &QuantizedLinear) -> Result<()> {
        let v = q.scheme.vector_len;
        let shape_name = format!("{prefix}.shape");
        self.put_f32(&shape_name, &[2], &[q.m as f32, q.d as f32])?;
        if let Some(idx) = &q.weight_indices {
            self.put_packed(&format!("{prefix}.weight_indices"), &[q.m, q.d / v], idx.bit_width, &idx.packed)?;
        }
        if let Some(cbs) = &q.weight_codebooks {
            self.put_codebooks(&format!("{prefix}.weight_codebooks"), cbs)?;
        }
        if let Some(cbs) = &q.act_codebooks {
            self.put_codebooks(&format!("{prefix}.act_codebooks"), cbs)?;
        }
        match &q.tables {
            Some(Tables::OneD(t)) => {
                self.put_table(&format!("{prefix}.tables"), &[t.m, t.slices, t.act_centroids], &t.data)?
            }
            Some(Tables::TwoD(t)) => self.put_table(
                &format!("{prefix}.tables"),
                &[t.num_groups(), t.act_centroids, t.weight_centroids],
                &t.data,
            )?,
            None => {}
        }
        Ok(())
    }

    /// Reads back a layer written by [`Container::put_linear`].
    pub fn get_linear(&self, prefix: &str, scheme: &SchemeConfig) -> Result<QuantizedLinear> {
        let (_, dims) = self.get_f32(&format!("{prefix}.shape"))?;
        let (m, d) = match dims[..] {
            [m, d] => (m as usize, d as usize),
            _ => return Err(Error::Format(format!("{prefix}.shape must hold two values"))),
        };
        let kind = scheme.kind;
        let layout = GroupLayout::for_scheme(m, d, scheme);
        let weight_indices = if kind.uses_weight_codebooks() {
            let (_, bits, packed) = self.get_packed(&format!("{prefix}.weight_indices"))?;
            let layout = layout?;
            if packed.len() != packed_len(layout.num_vectors(), bits) {
                return Err(Error::Format(format!("{prefix}.weight_indices has the wrong length")));
            }
            Some(WeightIndexTable { layout, bit_width: bits, packed })
        } else {
            None
        };
        let weight_codebooks = if kind.uses_weight_codebooks() {
            Some(self.get_codebooks(&format!("{prefix}.weight_codebooks"))?)
        } else {
            None
        };
        let act_codebooks = if kind.uses_activation_codebooks() {
            Some(self.get_codebooks(&format!("{prefix}.act_codebooks"))?)
        } else {
            None
        };
        let tables = match (kind.uses_activation_codebooks(), kind.uses_weight_codebooks()) {
            (true, false) => {
                let data = self.get_table(&format!("{prefix}.tables"))?;
                Some(Tables::OneD(Lut1D { m, slices: d / scheme.vector_len, act_centroids: scheme.act_centroids, data }))
            }
            (true, true) => {
                let data = self.get_table(&format!("{prefix}.tables"))?;
                Some(Tables::TwoD(Lut2D {
                    layout: GroupLayout::for_scheme(m, d, scheme)?,
                    act_centroids: scheme.act_centroids,
                    weight_centroids: scheme.weight_centroids,
                    data,
                }))
            }
            _ => None,
        };
        let q = QuantizedLinear { scheme: *scheme, m, d, weight_indices, weight_codebooks, act_codebooks, tables };
        q.check()?;
        Ok(q)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let json = serde_json::to_vec(&self.manifest)?;
        let mut out = Vec::with_capacity(16 + json.len() + self.payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&self.payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::Format("missing LUTLLM01 magic".into()));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let json_end = 16usize
            .checked_add(len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Format("manifest length exceeds file size".into()))?;
        let manifest: Manifest = serde_json::from_slice(&bytes[16..json_end])?;
        let c = Container { manifest, payload: bytes[json_end..].to_vec() };
        for e in &c.manifest.tensors {
            c.bytes_of(e)?;
        }
        Ok(c)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Container::from_bytes(&bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Container::from_bytes(&std::fs::read(path)?)
    }
}

fn check_numel(name: &str, shape: &[usize], len: usize) -> Result<()> {
    let n: usize = shape.iter().product();
    if n != len {
        return Err(Error::Format(format!("tensor {name:?}: shape {shape:?} holds {n} values, got {len}")));
    }
    Ok(())
}
