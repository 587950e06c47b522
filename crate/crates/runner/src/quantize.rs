//! Whole-model quantization: activation codebooks are trained on the dense
//! model's own projection inputs over a set of calibration sequences.

use std::collections::HashMap;

use half::f16;
use lutllm_core::{derive_seed, reconstruct, Matrix, QuantizedLinear, SchemeConfig, SchemeKind};

use crate::error::{Result, RunnerError};
use crate::model::Site;
use crate::weights::{Linear, TransformerWeights, PROJECTIONS};

/// Default scheme of the desk model: co-quantization with v = 2, c_a = 16,
/// c_w = 8, G = 64 and INT8 tables.
pub fn desk_scheme() -> SchemeConfig {
    SchemeConfig::new(SchemeKind::Coquant, 64, 2, 8, 16)
}

/// Projection inputs of the dense model over `calibration`, stacked per
/// `(layer, site)`.
pub fn collect_activations(model: &TransformerWeights, calibration: &[Vec<u32>]) -> Result<HashMap<(usize, Site), Matrix>> {
    let mut parts: HashMap<(usize, Site), Vec<Matrix>> = HashMap::new();
    for seq in calibration {
        let mut cache = model.new_cache(seq.len());
        model.forward_observed(seq, &mut cache, &mut |l, site, x| {
            if site != Site::LayerOut {
                parts.entry((l, site)).or_default().push(x.clone());
            }
        })?;
    }
    parts
        .into_iter()
        .map(|(key, ms)| {
            let refs: Vec<&Matrix> = ms.iter().collect();
            Ok((key, Matrix::vstack(&refs)?))
        })
        .collect()
}

/// Quantizes every projection of a dense model under `scheme`.
///
/// `fp16` rounds the weights to half precision and keeps them dense;
/// lookup-table schemes that use activation codebooks need at least one
/// calibration sequence.
pub fn quantize_model(
    dense: &TransformerWeights,
    scheme: &SchemeConfig,
    calibration: &[Vec<u32>],
    seed: u64,
) -> Result<TransformerWeights> {
    if dense.layers.iter().flat_map(|l| &l.linears).any(Linear::is_quantized) {
        return Err(RunnerError::ConfigMismatch("model is already quantized".into()));
    }
    let mut out = dense.clone();
    out.scheme = Some(*scheme);
    match scheme.kind {
        SchemeKind::Fp16 => {
            for lin in out.layers.iter_mut().flat_map(|l| l.linears.iter_mut()) {
                if let Linear::Dense(w) = lin {
                    for x in w.as_mut_slice() {
                        *x = f16::from_f32(*x).to_f32();
                    }
                }
            }
            return Ok(out);
        }
        SchemeKind::ScalarW4a8 => {
            return Err(RunnerError::UnsupportedScheme("scalar_w4a8 has no executable kernel".into()));
        }
        _ => {}
    }
    let acts = if scheme.kind.uses_activation_codebooks() {
        if calibration.iter().all(Vec::is_empty) {
            return Err(RunnerError::UnsupportedScheme(format!("{} needs calibration tokens", scheme.kind)));
        }
        collect_activations(dense, calibration)?
    } else {
        HashMap::new()
    };
    for (l, layer) in out.layers.iter_mut().enumerate() {
        for (p, (lin, name)) in layer.linears.iter_mut().zip(PROJECTIONS).enumerate() {
            let Linear::Dense(w) = lin else { unreachable!("checked above") };
            let samples = acts.get(&(l, Site::of(name)));
            let stream = (l * PROJECTIONS.len() + p) as u64;
            *lin = Linear::Quantized(QuantizedLinear::quantize(w, samples, scheme, derive_seed(seed, stream))?);
        }
    }
    out.validate()?;
    Ok(out)
}

/// Replaces every dense projection by its weight-VQ reconstruction under
/// `scheme`, so that each quantization group holds at most `c_w` distinct
/// vectors. Quantizing the result with the same group layout recovers the
/// weights exactly.
pub fn snap_to_codebooks(dense: &TransformerWeights, scheme: &SchemeConfig, seed: u64) -> Result<TransformerWeights> {
    let wvq = scheme.with_kind(SchemeKind::WeightVq);
    let mut out = dense.clone();
    for (l, layer) in out.layers.iter_mut().enumerate() {
        for (p, lin) in layer.linears.iter_mut().enumerate() {
            let Linear::Dense(w) = lin else {
                return Err(RunnerError::ConfigMismatch("model is already quantized".into()));
            };
            let stream = (l * PROJECTIONS.len() + p) as u64;
            let q = QuantizedLinear::quantize(w, None, &wvq, derive_seed(seed ^ 0x5A5A, stream))?;
            *lin = Linear::Dense(reconstruct(&q)?);
        }
    }
    Ok(out)
}
