//! Subcommand implementations. Each writes its machine-readable result to
//! `out`; errors propagate to `main`, which exits nonzero.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use lutllm_core::{derive_seed, Container, DType, Matrix, QuantizedLinear, SchemeConfig, SchemeKind};
use lutllm_perf::{
    coquant_latency, linear_latency, roofline_csv, roofline_points, scalar_baseline_latency, transformer_latency,
    workload_latency, HardwareProfile, LayerShape, LatencyEstimate, ModelConfig, Precision, Stage,
};
use lutllm_runner::{
    compare_paths, generate, greedy_agreement, quantize_model, Linear, TransformerWeights, PROJECTIONS,
};
use lutllm_sim::{
    simulate_end_to_end, simulate_layer_schedule, simulate_lutlinear, EngineTopology, SimConfig, SimOptions, SimTrace,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use serde_json::json;

use crate::args::{ExampleKind, InferArgs, InitArgs, PerfArgs, Preset, QuantizeArgs, SchemeArgs, SimulateArgs};

/// Reference layer: M = 512, D = 32, one token.
pub const EXAMPLE_SHAPE: LayerShape = LayerShape { m: 512, d: 32, l: 1 };

pub fn example_scheme(kind: SchemeKind) -> SchemeConfig {
    SchemeConfig::new(kind, 256, 2, 16, 64)
}

pub fn load_model_config(name: &str) -> Result<ModelConfig> {
    Ok(match name {
        "desk" => ModelConfig::desk(),
        "qwen3-1.7b" | "qwen" => ModelConfig::qwen3_1_7b(),
        path => ModelConfig::load(path).with_context(|| format!("reading model config {path}"))?,
    })
}

pub fn load_hw(name: &str) -> Result<SimConfig> {
    Ok(match name {
        "v80" => SimConfig { hw: HardwareProfile::v80(), topology: None },
        "example" => SimConfig { hw: HardwareProfile::paper_example(), topology: None },
        path => SimConfig::load(path).with_context(|| format!("reading hardware profile {path}"))?,
    })
}

impl SchemeArgs {
    /// Flag > scheme file or preset > desk preset.
    pub fn resolve(&self) -> Result<SchemeConfig> {
        let mut s = match (&self.scheme_config, self.preset) {
            (Some(path), _) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            (None, Some(Preset::Qwen)) => SchemeConfig::qwen_coquant(),
            (None, Some(Preset::Desk) | None) => lutllm_runner::desk_scheme(),
        };
        if let Some(k) = self.scheme {
            s.kind = k;
        }
        s.group_size = self.group_size.unwrap_or(s.group_size);
        s.vector_len = self.vector_len.unwrap_or(s.vector_len);
        s.weight_centroids = self.weight_centroids.unwrap_or(s.weight_centroids);
        s.act_centroids = self.act_centroids.unwrap_or(s.act_centroids);
        s.table_bits = self.table_bits.unwrap_or(s.table_bits);
        s.validate()?;
        Ok(s)
    }
}

/// Seed of the `index`-th tensor of a quantization run.
pub fn tensor_seed(seed: u64, index: usize) -> u64 {
    derive_seed(seed, index as u64)
}

/// Standard-normal calibration activations for a bare layer.
pub fn calibration_rows(d: usize, rows: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_fn(rows, d, |_, _| -> f32 { StandardNormal.sample(&mut rng) })
}

/// Uniform random token sequences for model calibration.
pub fn calibration_tokens(vocab: usize, seqs: usize, len: usize, seed: u64) -> Vec<Vec<u32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xCA11_B8A7));
    (0..seqs).map(|_| (0..len).map(|_| rng.random_range(0..vocab as u32)).collect()).collect()
}

/// Fails early when an output file could not be created later.
fn check_output(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => {
            bail!("output directory {} does not exist", dir.display())
        }
        _ if path.is_dir() => bail!("output {} is a directory", path.display()),
        _ => Ok(()),
    }
}

pub fn init(a: &InitArgs, out: &mut dyn Write) -> Result<()> {
    check_output(&a.out)?;
    if let Some((m, d)) = a.layer {
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
        let std = 1.0 / (d as f32).sqrt();
        let w = Matrix::from_fn(m, d, |_, _| { let z: f32 = StandardNormal.sample(&mut rng); std * z });
        let mut c = Container::new(None);
        c.put_matrix("weight", &w, DType::F32)?;
        c.save(&a.out)?;
        writeln!(out, "{}", json!({ "out": a.out, "tensors": [{ "name": "weight", "m": m, "d": d }] }))?;
        return Ok(());
    }
    let cfg = load_model_config(&a.model)?;
    let model = TransformerWeights::random(&cfg, a.seed, a.gain)?;
    model.save(&a.out)?;
    let params: usize = model.layers.iter().flat_map(|l| &l.linears).map(|l| l.shape().0 * l.shape().1).sum();
    writeln!(out, "{}", json!({ "out": a.out, "model": cfg, "projection_parameters": params }))?;
    Ok(())
}

#[derive(Debug, Default, Clone, Serialize)]
pub struct TensorReport {
    pub name: String,
    pub m: usize,
    pub d: usize,
    pub weight_indices: usize,
    pub weight_codebooks: usize,
    pub act_codebooks: usize,
    pub tables: usize,
    /// Half-precision weights kept dense.
    pub fp16_weights: usize,
    pub total: usize,
}

impl TensorReport {
    fn new(name: &str, m: usize, d: usize, q: Option<&QuantizedLinear>) -> Self {
        let mut r = TensorReport { name: name.into(), m, d, ..Default::default() };
        match q {
            Some(q) => {
                let s = q.sizes();
                (r.weight_indices, r.weight_codebooks, r.act_codebooks, r.tables) =
                    (s.weight_indices, s.weight_codebooks, s.act_codebooks, s.tables);
            }
            None => r.fp16_weights = 2 * m * d,
        }
        r.total = r.weight_indices + r.weight_codebooks + r.act_codebooks + r.tables + r.fp16_weights;
        r
    }
}

#[derive(Debug, Serialize)]
pub struct QuantizeReport {
    pub scheme: SchemeConfig,
    pub tensors: Vec<TensorReport>,
    pub total: TensorReport,
    /// The same projections as fp16 weights.
    pub dense_fp16_bytes: usize,
}

impl QuantizeReport {
    fn new(scheme: SchemeConfig, tensors: Vec<TensorReport>) -> Self {
        let mut total = TensorReport { name: "total".into(), ..Default::default() };
        for t in &tensors {
            total.weight_indices += t.weight_indices;
            total.weight_codebooks += t.weight_codebooks;
            total.act_codebooks += t.act_codebooks;
            total.tables += t.tables;
            total.fp16_weights += t.fp16_weights;
            total.total += t.total;
        }
        let dense_fp16_bytes = tensors.iter().map(|t| 2 * t.m * t.d).sum();
        QuantizeReport { scheme, tensors, total, dense_fp16_bytes }
    }
}

pub fn quantize(a: &QuantizeArgs, out: &mut dyn Write) -> Result<()> {
    let scheme = a.scheme.resolve()?;
    check_output(&a.out)?;
    let input = Container::load(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let report = if input.manifest.model.is_some() {
        quantize_model_container(&input, &scheme, a)?
    } else {
        quantize_layers(&input, &scheme, a)?
    };
    writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
    Ok(())
}

fn quantize_model_container(input: &Container, scheme: &SchemeConfig, a: &QuantizeArgs) -> Result<QuantizeReport> {
    let dense = TransformerWeights::from_container(input)?;
    let calib = calibration_tokens(dense.config.vocab, a.calib_seqs, a.calib_len, a.seed);
    let q = quantize_model(&dense, scheme, &calib, a.seed)?;
    let dtype = if scheme.kind == SchemeKind::Fp16 { DType::F16 } else { DType::F32 };
    q.to_container(dtype)?.save(&a.out)?;
    let mut tensors = Vec::new();
    for (i, layer) in q.layers.iter().enumerate() {
        for (lin, name) in layer.linears.iter().zip(PROJECTIONS) {
            let (m, d) = lin.shape();
            let quant = match lin {
                Linear::Quantized(q) => Some(q),
                Linear::Dense(_) => None,
            };
            tensors.push(TensorReport::new(&format!("layers.{i}.{name}"), m, d, quant));
        }
    }
    Ok(QuantizeReport::new(*scheme, tensors))
}

/// Every 2-D tensor of a bare container is one linear layer; other tensors
/// are copied through.
fn quantize_layers(input: &Container, scheme: &SchemeConfig, a: &QuantizeArgs) -> Result<QuantizeReport> {
    if scheme.kind == SchemeKind::ScalarW4a8 {
        bail!("scalar_w4a8 has no executable kernel");
    }
    let mut outc = Container::new(Some(*scheme));
    let mut tensors = Vec::new();
    for (i, e) in input.manifest.tensors.iter().enumerate() {
        if !matches!(e.dtype, DType::F32 | DType::F16) {
            bail!("tensor {:?} is not a float tensor", e.name);
        }
        if e.shape.len() != 2 {
            let (shape, values) = input.get_f32(&e.name)?;
            outc.put_f32(&e.name, &shape, &values)?;
            continue;
        }
        let w = input.get_matrix(&e.name)?;
        let (m, d) = w.shape();
        if scheme.kind == SchemeKind::Fp16 {
            outc.put_matrix(&e.name, &w, DType::F16)?;
            tensors.push(TensorReport::new(&e.name, m, d, None));
            continue;
        }
        let seed = tensor_seed(a.seed, i);
        let samples = calibration_rows(d, a.calib_seqs * a.calib_len, seed);
        let q = QuantizedLinear::quantize(&w, Some(&samples), scheme, seed)
            .with_context(|| format!("quantizing {:?} ({m}x{d})", e.name))?;
        outc.put_linear(&e.name, &q)?;
        tensors.push(TensorReport::new(&e.name, m, d, Some(&q)));
    }
    outc.save(&a.out)?;
    Ok(QuantizeReport::new(*scheme, tensors))
}

pub fn infer(a: &InferArgs, out: &mut dyn Write) -> Result<()> {
    if let Some(path) = a.compare_dense.as_deref().filter(|p| !p.is_file()) {
        bail!("dense model {} does not exist", path.display());
    }
    let model = TransformerWeights::load(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    let capacity = a.capacity.unwrap_or(a.prompt.len() + a.max_new);
    let tokens = generate(&model, &a.prompt, a.max_new, capacity)?;
    let mut result = json!({
        "model": model.config.name,
        "scheme": model.scheme,
        "prompt": a.prompt,
        "tokens": tokens,
    });
    if let Some(path) = &a.compare_dense {
        let dense = TransformerWeights::load(path).with_context(|| format!("loading {}", path.display()))?;
        if dense.config != model.config {
            bail!("{} and {} hold different model configs", path.display(), a.model.display());
        }
        let mut seq = a.prompt.clone();
        seq.extend(&tokens);
        let report = compare_paths(&dense, &model, &seq)?;
        result["compare"] = serde_json::to_value(report)?;
        result["greedy_agreement"] = json!(greedy_agreement(&dense, &model, &a.prompt, a.max_new)?);
    }
    writeln!(out, "{result}")?;
    Ok(())
}

const LAYER_CSV: &str = "scheme,m,d,l,t_mem,t_lat,overall,chosen_s";

fn layer_row(kind: SchemeKind, shape: &LayerShape, e: &LatencyEstimate) -> String {
    let s = e.chosen_s.map(|s| s.to_string()).unwrap_or_default();
    format!("{kind},{},{},{},{},{},{},{s}", shape.m, shape.d, shape.l, e.t_mem, e.t_lat, e.overall)
}

fn layer_estimate(shape: &LayerShape, scheme: &SchemeConfig, hw: &HardwareProfile) -> Result<LatencyEstimate> {
    Ok(match scheme.kind {
        SchemeKind::Fp16 => scalar_baseline_latency(shape, Precision::Fp16, hw),
        SchemeKind::ScalarW4a8 => scalar_baseline_latency(shape, Precision::W4a8, hw),
        _ => linear_latency(shape, scheme, hw)?,
    })
}

pub fn perf(a: &PerfArgs, out: &mut dyn Write) -> Result<()> {
    if let Some(which) = a.paper_example {
        let hw = HardwareProfile::paper_example();
        let kinds = match which {
            ExampleKind::WeightVq => vec![SchemeKind::WeightVq],
            ExampleKind::ActivationVq => vec![SchemeKind::ActivationVq],
            ExampleKind::Coquant => vec![SchemeKind::Coquant],
            ExampleKind::All => vec![SchemeKind::WeightVq, SchemeKind::ActivationVq, SchemeKind::Coquant],
        };
        writeln!(out, "{LAYER_CSV}")?;
        for k in kinds {
            let e = linear_latency(&EXAMPLE_SHAPE, &example_scheme(k), &hw)?;
            writeln!(out, "{}", layer_row(k, &EXAMPLE_SHAPE, &e))?;
        }
        return Ok(());
    }
    let scheme = a.scheme.resolve()?;
    let hw = load_hw(&a.hw)?.hw;
    if let Some((m, d)) = a.shape {
        writeln!(out, "{LAYER_CSV}")?;
        for &l in &a.seq {
            let shape = LayerShape::new(m, d, l);
            writeln!(out, "{}", layer_row(scheme.kind, &shape, &layer_estimate(&shape, &scheme, &hw)?))?;
        }
        return Ok(());
    }
    let name = a.model.as_deref().ok_or_else(|| anyhow!("one of --paper-example, --shape or --model is required"))?;
    let model = load_model_config(name)?;
    let points = roofline_points(&model, &scheme, &hw, &a.seq, a.stage)?;
    write!(out, "{}", roofline_csv(&points))?;
    Ok(())
}

pub fn simulate(a: &SimulateArgs, out: &mut dyn Write) -> Result<()> {
    let mut sim_cfg = if a.paper_example { load_hw("example")? } else { load_hw(&a.hw)? };
    if let Some(path) = &a.topology {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        sim_cfg.topology = Some(serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?);
    }
    let hw = sim_cfg.hw.clone();
    let scheme = if a.paper_example { example_scheme(SchemeKind::Coquant) } else { a.scheme.resolve()? };
    if let Some(dir) = a.out_dir.as_deref().filter(|d| d.exists() && !d.is_dir()) {
        bail!("{} is not a directory", dir.display());
    }
    let record = a.out_dir.is_some();
    let opts = SimOptions { mode: a.mode, record_events: record };

    let (target, trace, analytic, mut summary, topo) = if a.paper_example || a.shape.is_some() {
        let shape = match a.shape {
            Some((m, d, l)) => LayerShape::new(m, d, l),
            None => EXAMPLE_SHAPE,
        };
        let topo = match sim_cfg.topology {
            Some(t) => t,
            None => EngineTopology::for_layer(&shape, &scheme, &hw)?,
        };
        let trace = simulate_lutlinear(&shape, &scheme, &hw, &topo, record)?;
        let analytic = coquant_latency(&shape, &scheme, &hw)?.overall;
        ("layer", trace, analytic, json!({ "shape": shape }), topo)
    } else {
        let model = load_model_config(&a.model)?;
        let topo = match sim_cfg.topology {
            Some(t) => t,
            None => EngineTopology::for_model(&model, &scheme, &hw, a.prompt_len.max(1))?,
        };
        if a.block {
            let w = model.workload();
            let trace = simulate_layer_schedule(a.mode, &w, &scheme, &hw, &topo, a.prompt_len, 0, record)?;
            let analytic = workload_latency(&w, 1, &scheme, &hw, a.prompt_len, 0, Stage::Prefill)?.cycles;
            ("block", trace, analytic, json!({ "model": model.name, "tokens": a.prompt_len }), topo)
        } else {
            let e2e = simulate_end_to_end(&model, &scheme, &hw, &topo, a.prompt_len, a.gen_len, opts)?;
            let analytic = transformer_latency(&model, &scheme, &hw, a.prompt_len, a.gen_len, Stage::End2end)?.cycles;
            let summary = json!({
                "model": model.name,
                "prompt_len": e2e.prompt_len,
                "gen_len": e2e.gen_len,
                "prefill_cycles": e2e.prefill_cycles,
                "decode_cycles": e2e.decode_cycles,
                "tokens_per_s": e2e.tokens_per_s,
                "decode_tokens_per_s": e2e.decode_tokens_per_s,
                "decode_bandwidth_utilization": e2e.decode_bandwidth_utilization,
            });
            ("model", e2e.trace, analytic, summary, topo)
        }
    };
    let ratio = trace.total_cycles as f64 / analytic;
    for (k, v) in [
        ("target", json!(target)),
        ("mode", json!(a.mode.to_string())),
        ("total_cycles", json!(trace.total_cycles)),
        ("analytic_cycles", json!(analytic)),
        ("ratio", json!(ratio)),
        ("hbm_bytes", json!(trace.hbm_bytes)),
        ("codebook_reloads", json!(trace.codebook_reloads)),
        ("peak_buffer_bits", json!(trace.peak_buffer_bits)),
        ("linear_available_bits", json!(trace.linear_available_bits)),
        ("topology", serde_json::to_value(&topo)?),
    ] {
        summary[k] = v;
    }
    if let Some(dir) = &a.out_dir {
        write_traces(dir, &trace)?;
    }
    writeln!(out, "{summary}")?;
    if let Some(tol) = &a.check {
        let tol = match tol.as_str() {
            "auto" if target == "layer" => 0.10,
            "auto" => 0.15,
            t => t.parse::<f64>().with_context(|| format!("bad --check tolerance {t:?}"))?,
        };
        if (ratio - 1.0).abs() > tol {
            bail!("simulated {} cycles vs analytic {analytic:.1}: off by {:.1}% (> {:.1}%)", trace.total_cycles, (ratio - 1.0).abs() * 100.0, tol * 100.0);
        }
    }
    Ok(())
}

fn write_traces(dir: &Path, trace: &SimTrace) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = BufWriter::new(File::create(dir.join("trace.jsonl"))?);
    trace.write_jsonl(&mut w)?;
    w.flush()?;
    fs::write(dir.join("summary.csv"), trace.summary_csv())?;
    Ok(())
}
