use lutllm_core::Matrix;

use crate::error::{Result, RunnerError};

/// Append-only K/V store: per layer, `len x (h/g) d` fp32 rows (keys are
/// stored after the rotary embedding).
#[derive(Clone, Debug)]
pub struct KvCache {
    keys: Vec<Vec<f32>>,
    values: Vec<Vec<f32>>,
    width: usize,
    capacity: usize,
    len: usize,
}

impl KvCache {
    pub fn new(layers: usize, width: usize, capacity: usize) -> Self {
        KvCache {
            keys: vec![Vec::with_capacity(width * capacity); layers],
            values: vec![Vec::with_capacity(width * capacity); layers],
            width,
            capacity,
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Fails if `extra` more entries would not fit.
    pub fn reserve(&self, extra: usize) -> Result<()> {
        if self.len + extra > self.capacity {
            return Err(RunnerError::Capacity { needed: self.len + extra, capacity: self.capacity });
        }
        Ok(())
    }

    /// Appends to one layer. The cache length advances once every layer has
    /// received the same rows, see [`KvCache::commit`].
    pub fn append(&mut self, layer: usize, k: &Matrix, v: &Matrix) -> Result<()> {
        if k.shape() != v.shape() || k.cols() != self.width {
            return Err(RunnerError::Shape(format!("K/V rows must be {} wide", self.width)));
        }
        self.reserve(k.rows())?;
        if self.keys[layer].len() != self.len * self.width {
            return Err(RunnerError::Shape(format!("layer {layer} already appended")));
        }
        self.keys[layer].extend_from_slice(k.as_slice());
        self.values[layer].extend_from_slice(v.as_slice());
        Ok(())
    }

    pub fn commit(&mut self, rows: usize) {
        self.len += rows;
        debug_assert!(self.keys.iter().all(|k| k.len() == self.len * self.width));
    }

    /// Everything appended to `layer` so far, including uncommitted rows.
    pub fn layer(&self, layer: usize) -> Result<(Matrix, Matrix)> {
        let rows = self.keys[layer].len() / self.width.max(1);
        Ok((
            Matrix::from_vec(rows, self.width, self.keys[layer].clone())?,
            Matrix::from_vec(rows, self.width, self.values[layer].clone())?,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn append_only_with_capacity() {
        let mut c = KvCache::new(2, 2, 3);
        let kv = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        for l in 0..2 {
            c.append(l, &kv, &kv).unwrap();
        }
        c.commit(2);
        assert_eq!(c.len(), 2);
        assert!(c.reserve(2).is_err());
        let one = Matrix::from_rows(&[vec![5.0, 6.0]]).unwrap();
        c.append(0, &one, &one).unwrap();
        assert!(c.append(0, &one, &one).is_err());
        let (k, _) = c.layer(0).unwrap();
        assert_eq!(k.row(0), &[1.0, 2.0]);
        assert_eq!(k.row(2), &[5.0, 6.0]);
    }
}
