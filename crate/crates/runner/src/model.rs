//! Forward pass, greedy generation and the dense-vs-quantized comparison.

use lutllm_core::Matrix;
use serde::{Deserialize, Serialize};

use crate::cache::KvCache;
use crate::error::{Result, RunnerError};
use crate::ops::{apply_rope, attention_forward, rms_norm, silu};
use crate::weights::{LayerWeights, TransformerWeights};

/// Where a projection input is observed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Site {
    /// Normed layer input, feeding q, k and v.
    AttnIn,
    /// Attention output, feeding o.
    AttnOut,
    /// Normed residual, feeding w1 and w2.
    FfnIn,
    /// `f(x W_1) * (x W_2)`, feeding w3.
    FfnMid,
    /// Residual stream after the layer.
    LayerOut,
}

impl Site {
    /// Input site of a projection.
    pub fn of(projection: &str) -> Site {
        match projection {
            "q" | "k" | "v" => Site::AttnIn,
            "o" => Site::AttnOut,
            "w1" | "w2" => Site::FfnIn,
            _ => Site::FfnMid,
        }
    }
}

/// `(f(x W_1) * x W_2) W_3` with `f` = SiLU.
pub fn ffn_forward(x: &Matrix, layer: &LayerWeights) -> Result<Matrix> {
    ffn_observed(x, layer, &mut |_, _| {})
}

fn ffn_observed(x: &Matrix, layer: &LayerWeights, seen: &mut dyn FnMut(Site, &Matrix)) -> Result<Matrix> {
    let [.., w1, w2, w3] = &layer.linears;
    let mut gate = w1.forward(x)?;
    let up = w2.forward(x)?;
    for (g, u) in gate.as_mut_slice().iter_mut().zip(up.as_slice()) {
        *g = silu(*g) * u;
    }
    seen(Site::FfnMid, &gate);
    w3.forward(&gate)
}

/// Runs `x` (rows at positions `cache.len()..`) through one layer, appending
/// its keys and values to `cache`.
fn layer_forward(
    w: &TransformerWeights,
    idx: usize,
    x: &Matrix,
    cache: &mut KvCache,
    seen: &mut dyn FnMut(usize, Site, &Matrix),
) -> Result<Matrix> {
    let cfg = &w.config;
    let layer = &w.layers[idx];
    let eps = cfg.norm_eps as f32;
    let start = cache.len();
    let [q, k, v, o, ..] = &layer.linears;

    let h = rms_norm(x, &layer.norm1, eps)?;
    seen(idx, Site::AttnIn, &h);
    let mut qm = q.forward(&h)?;
    let mut km = k.forward(&h)?;
    let vm = v.forward(&h)?;
    apply_rope(&mut qm, cfg.head_dim, start, cfg.rope_base)?;
    apply_rope(&mut km, cfg.head_dim, start, cfg.rope_base)?;
    cache.append(idx, &km, &vm)?;
    let (keys, values) = cache.layer(idx)?;
    let att = attention_forward(&qm, &keys, &values, cfg.attention(), start)?;
    seen(idx, Site::AttnOut, &att);
    let mut x = add(x, &o.forward(&att)?);

    let h = rms_norm(&x, &layer.norm2, eps)?;
    seen(idx, Site::FfnIn, &h);
    let f = ffn_observed(&h, layer, &mut |s, m| seen(idx, s, m))?;
    x = add(&x, &f);
    seen(idx, Site::LayerOut, &x);
    Ok(x)
}

fn add(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = a.clone();
    for (x, y) in out.as_mut_slice().iter_mut().zip(b.as_slice()) {
        *x += y;
    }
    out
}

impl TransformerWeights {
    pub fn new_cache(&self, capacity: usize) -> KvCache {
        KvCache::new(self.config.layers, self.config.kv_dim(), capacity)
    }

    fn embed(&self, tokens: &[u32]) -> Result<Matrix> {
        let vocab = self.config.vocab;
        let mut x = Matrix::zeros(tokens.len(), self.config.hidden);
        for (r, &t) in tokens.iter().enumerate() {
            if t as usize >= vocab {
                return Err(RunnerError::Token { token: t, vocab });
            }
            x.row_mut(r).copy_from_slice(self.embedding.row(t as usize));
        }
        Ok(x)
    }

    /// Appends `tokens` to the sequence held by `cache` and returns their
    /// logits (`tokens.len() x vocab`). A prompt is one call (prefill); each
    /// decode step is a one-token call.
    pub fn forward(&self, tokens: &[u32], cache: &mut KvCache) -> Result<Matrix> {
        self.forward_observed(tokens, cache, &mut |_, _, _| {})
    }

    /// [`TransformerWeights::forward`] that also reports every projection
    /// input and layer output to `seen(layer, site, rows)`.
    pub fn forward_observed(
        &self,
        tokens: &[u32],
        cache: &mut KvCache,
        seen: &mut dyn FnMut(usize, Site, &Matrix),
    ) -> Result<Matrix> {
        if tokens.is_empty() {
            return Err(RunnerError::EmptyPrompt);
        }
        cache.reserve(tokens.len())?;
        let mut x = self.embed(tokens)?;
        for idx in 0..self.layers.len() {
            x = layer_forward(self, idx, &x, cache, seen)?;
        }
        cache.commit(tokens.len());
        let h = rms_norm(&x, &self.final_norm, self.config.norm_eps as f32)?;
        Ok(lutllm_core::dense_matmul(&h, &self.head)?)
    }
}

/// Index of the largest value, first on ties.
pub fn argmax(row: &[f32]) -> u32 {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best as u32
}

/// Greedy generation: one prefill over `prompt`, then one decode step per
/// new token. The cache must hold `prompt.len() + max_new - 1` entries.
pub fn generate(model: &TransformerWeights, prompt: &[u32], max_new: usize, capacity: usize) -> Result<Vec<u32>> {
    Ok(generate_with_logits(model, prompt, max_new, capacity)?.0)
}

/// [`generate`] that also returns the logits each token was picked from.
pub fn generate_with_logits(
    model: &TransformerWeights,
    prompt: &[u32],
    max_new: usize,
    capacity: usize,
) -> Result<(Vec<u32>, Vec<Vec<f32>>)> {
    if prompt.is_empty() {
        return Err(RunnerError::EmptyPrompt);
    }
    let needed = prompt.len() + max_new.saturating_sub(1);
    if needed > capacity {
        return Err(RunnerError::Capacity { needed, capacity });
    }
    if max_new == 0 {
        return Ok((Vec::new(), Vec::new()));
    }
    let mut cache = model.new_cache(capacity);
    let logits = model.forward(prompt, &mut cache)?;
    let mut last = logits.row(logits.rows() - 1).to_vec();
    let mut out = Vec::with_capacity(max_new);
    let mut seen = Vec::with_capacity(max_new);
    loop {
        let next = argmax(&last);
        out.push(next);
        seen.push(last);
        if out.len() == max_new {
            break;
        }
        last = model.forward(&[next], &mut cache)?.row(0).to_vec();
    }
    Ok((out, seen))
}

/// Decode-step logits of `model` when it is fed `continuation` after
/// `prompt` instead of its own picks: entry `t` is the distribution the
/// model predicts `continuation[t]` from.
pub fn decode_along(model: &TransformerWeights, prompt: &[u32], continuation: &[u32]) -> Result<Vec<Vec<f32>>> {
    if prompt.is_empty() {
        return Err(RunnerError::EmptyPrompt);
    }
    if continuation.is_empty() {
        return Ok(Vec::new());
    }
    let mut cache = model.new_cache(prompt.len() + continuation.len() - 1);
    let logits = model.forward(prompt, &mut cache)?;
    let mut out = vec![logits.row(logits.rows() - 1).to_vec()];
    for &t in &continuation[..continuation.len() - 1] {
        out.push(model.forward(&[t], &mut cache)?.row(0).to_vec());
    }
    Ok(out)
}

/// Fraction of greedy decode steps at which `candidate` picks the same token
/// as `reference`, both decoding along the reference's own output.
pub fn greedy_agreement(reference: &TransformerWeights, candidate: &TransformerWeights, prompt: &[u32], steps: usize) -> Result<f64> {
    if steps == 0 {
        return Ok(1.0);
    }
    let (tokens, _) = generate_with_logits(reference, prompt, steps, prompt.len() + steps)?;
    let picks = decode_along(candidate, prompt, &tokens)?;
    let same = picks.iter().zip(&tokens).filter(|(l, &t)| argmax(l) == t).count();
    Ok(same as f64 / steps as f64)
}

/// Differences between two models run on the same tokens.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathReport {
    pub tokens: usize,
    pub max_abs_logit_error: f32,
    /// Cosine similarity of the residual stream after each layer, over all
    /// tokens.
    pub layer_cosine: Vec<f64>,
    pub logit_cosine: f64,
    /// Fraction of positions whose largest logit is at the same index.
    pub argmax_agreement: f64,
}

/// Runs `reference` and `candidate` over `tokens` in one prefill and
/// compares logits and per-layer hidden states.
pub fn compare_paths(reference: &TransformerWeights, candidate: &TransformerWeights, tokens: &[u32]) -> Result<PathReport> {
    if reference.config != candidate.config {
        return Err(RunnerError::ConfigMismatch(format!(
            "{:?} vs {:?}",
            reference.config.name, candidate.config.name
        )));
    }
    let run = |m: &TransformerWeights| -> Result<(Matrix, Vec<Matrix>)> {
        let mut hidden = vec![Matrix::zeros(0, 0); m.config.layers];
        let mut cache = m.new_cache(tokens.len());
        let logits = m.forward_observed(tokens, &mut cache, &mut |l, site, x| {
            if site == Site::LayerOut {
                hidden[l] = x.clone();
            }
        })?;
        Ok((logits, hidden))
    };
    let (la, ha) = run(reference)?;
    let (lb, hb) = run(candidate)?;
    let agree = (0..la.rows()).filter(|&r| argmax(la.row(r)) == argmax(lb.row(r))).count();
    Ok(PathReport {
        tokens: tokens.len(),
        max_abs_logit_error: la.max_abs_diff(&lb),
        layer_cosine: ha.iter().zip(&hb).map(|(a, b)| cosine(a.as_slice(), b.as_slice())).collect(),
        logit_cosine: cosine(la.as_slice(), lb.as_slice()),
        argmax_agreement: agree as f64 / la.rows() as f64,
    })
}

/// Cosine similarity in f64; 1 when both vectors are zero.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0f64, 0f64, 0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 && bb == 0.0 {
        return 1.0;
    }
    ab / (aa.sqrt() * bb.sqrt())
}
