//! Model parameters. Each projection is either dense fp32 or a
//! [`QuantizedLinear`]; norms, the embedding and the output head are always
//! dense fp32.

use lutllm_core::{dense_matmul, Container, DType, Matrix, QuantizedLinear, SchemeConfig};
use lutllm_perf::ModelConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Result, RunnerError};

/// Projection names of one layer, in execution order.
pub const PROJECTIONS: [&str; 7] = ["q", "k", "v", "o", "w1", "w2", "w3"];

#[derive(Clone, Debug, PartialEq)]
pub enum Linear {
    /// `M x D` weight, outputs by inputs.
    Dense(Matrix),
    Quantized(QuantizedLinear),
}

impl Linear {
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        Ok(match self {
            Linear::Dense(w) => dense_matmul(x, w)?,
            Linear::Quantized(q) => q.forward(x)?,
        })
    }

    /// `(M, D)`.
    pub fn shape(&self) -> (usize, usize) {
        match self {
            Linear::Dense(w) => w.shape(),
            Linear::Quantized(q) => (q.m, q.d),
        }
    }

    pub fn is_quantized(&self) -> bool {
        matches!(self, Linear::Quantized(_))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerWeights {
    pub norm1: Vec<f32>,
    pub norm2: Vec<f32>,
    /// Indexed like [`PROJECTIONS`].
    pub linears: [Linear; 7],
}

impl LayerWeights {
    pub fn linear(&self, name: &str) -> Option<&Linear> {
        PROJECTIONS.iter().position(|p| *p == name).map(|i| &self.linears[i])
    }
}

/// Projection gain of [`TransformerWeights::random`]. It sits close to the
/// usual 0.02-std initializer at desk width. Random networks with gains near
/// 1 are chaotic and amplify any perturbation layer over layer.
pub const DEFAULT_GAIN: f32 = 0.25;

#[derive(Clone, Debug, PartialEq)]
pub struct TransformerWeights {
    pub config: ModelConfig,
    /// Scheme of the quantized projections; `None` for a dense model.
    pub scheme: Option<SchemeConfig>,
    /// `vocab x D`.
    pub embedding: Matrix,
    pub final_norm: Vec<f32>,
    /// `vocab x D`.
    pub head: Matrix,
    pub layers: Vec<LayerWeights>,
}

impl TransformerWeights {
    /// Seeded random dense model. Projections are drawn from
    /// `N(0, (gain / sqrt(fan_in))^2)`; the embedding from `N(0, 1)`; the head
    /// from `N(0, 1 / D)`; norm gains are 1.
    pub fn random(config: &ModelConfig, seed: u64, gain: f32) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dm = config.hidden;
        let normal = |rows: usize, cols: usize, std: f32, rng: &mut ChaCha8Rng| {
            let dist = Normal::new(0.0, std).expect("positive std");
            Matrix::from_fn(rows, cols, |_, _| dist.sample(rng))
        };
        let embedding = normal(config.vocab, dm, 1.0, &mut rng);
        let head = normal(config.vocab, dm, 1.0 / (dm as f32).sqrt(), &mut rng);
        let shapes = projection_shapes(config);
        let layers = (0..config.layers)
            .map(|_| {
                let linears = shapes.map(|(m, d)| Linear::Dense(normal(m, d, gain / (d as f32).sqrt(), &mut rng)));
                LayerWeights { norm1: vec![1.0; dm], norm2: vec![1.0; dm], linears }
            })
            .collect();
        let w = TransformerWeights { config: config.clone(), scheme: None, embedding, final_norm: vec![1.0; dm], head, layers };
        w.validate()?;
        Ok(w)
    }

    /// Checks every tensor against the config: `d = D/h`, K and V of width
    /// `(h/g) d`, FFN of the configured width.
    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        c.validate()?;
        let dm = c.hidden;
        let bad = |what: String| Err(RunnerError::Shape(what));
        if self.embedding.shape() != (c.vocab, dm) || self.head.shape() != (c.vocab, dm) {
            return bad("embedding and head must be vocab x hidden".into());
        }
        if self.final_norm.len() != dm {
            return bad("final norm width".into());
        }
        if self.layers.len() != c.layers {
            return bad(format!("{} layers for a {}-layer config", self.layers.len(), c.layers));
        }
        let shapes = projection_shapes(c);
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.norm1.len() != dm || layer.norm2.len() != dm {
                return bad(format!("layer {i}: norm width"));
            }
            for ((lin, want), name) in layer.linears.iter().zip(shapes).zip(PROJECTIONS) {
                if lin.shape() != want {
                    return bad(format!("layer {i}.{name} is {:?}, expected {want:?}", lin.shape()));
                }
                if let (Linear::Quantized(q), Some(s)) = (lin, &self.scheme) {
                    if q.scheme != *s {
                        return Err(RunnerError::ConfigMismatch(format!("layer {i}.{name} uses a different scheme")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Writes the model as a `LUTLLM01` container: the config goes into the
    /// manifest, dense tensors as `dtype`, quantized projections under
    /// `layers.{i}.{name}.*`.
    pub fn to_container(&self, dtype: DType) -> Result<Container> {
        let mut c = Container::new(self.scheme);
        c.manifest.model = Some(serde_json::to_value(&self.config)?);
        c.put_matrix("embedding", &self.embedding, DType::F32)?;
        c.put_matrix("head", &self.head, DType::F32)?;
        c.put_f32("final_norm", &[self.final_norm.len()], &self.final_norm)?;
        for (i, layer) in self.layers.iter().enumerate() {
            c.put_f32(&format!("layers.{i}.norm1"), &[layer.norm1.len()], &layer.norm1)?;
            c.put_f32(&format!("layers.{i}.norm2"), &[layer.norm2.len()], &layer.norm2)?;
            for (lin, name) in layer.linears.iter().zip(PROJECTIONS) {
                let key = format!("layers.{i}.{name}");
                match lin {
                    Linear::Dense(w) => c.put_matrix(&key, w, dtype)?,
                    Linear::Quantized(q) => c.put_linear(&key, q)?,
                }
            }
        }
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let model = c.manifest.model.clone().ok_or_else(|| RunnerError::Artifact("no model config in manifest".into()))?;
        let config: ModelConfig = serde_json::from_value(model)?;
        config.validate()?;
        let scheme = c.manifest.scheme;
        let vec_of = |name: &str| -> Result<Vec<f32>> { Ok(c.get_f32(name)?.1) };
        let layers = (0..config.layers)
            .map(|i| {
                let mut linears = Vec::with_capacity(PROJECTIONS.len());
                for name in PROJECTIONS {
                    let key = format!("layers.{i}.{name}");
                    let lin = if c.entry(&key).is_some() {
                        Linear::Dense(c.get_matrix(&key)?)
                    } else {
                        let s = scheme.ok_or_else(|| RunnerError::Artifact(format!("{key} is quantized but no scheme is set")))?;
                        Linear::Quantized(c.get_linear(&key, &s)?)
                    };
                    linears.push(lin);
                }
                Ok(LayerWeights {
                    norm1: vec_of(&format!("layers.{i}.norm1"))?,
                    norm2: vec_of(&format!("layers.{i}.norm2"))?,
                    linears: linears.try_into().expect("seven projections"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let w = TransformerWeights {
            config,
            scheme,
            embedding: c.get_matrix("embedding")?,
            final_norm: vec_of("final_norm")?,
            head: c.get_matrix("head")?,
            layers,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        Ok(self.to_container(DType::F32)?.save(path)?)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        TransformerWeights::from_container(&Container::load(path)?)
    }
}

/// `(M, D)` of every projection, in [`PROJECTIONS`] order.
pub fn projection_shapes(c: &ModelConfig) -> [(usize, usize); 7] {
    let (dm, q, kv, f) = (c.hidden, c.heads * c.head_dim, c.kv_dim(), c.ffn_hidden);
    [(q, dm), (kv, dm), (kv, dm), (dm, q), (f, dm), (f, dm), (dm, f)]
}
