//! Command-line surface.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lutllm_core::SchemeKind;
use lutllm_perf::Stage;
use lutllm_sim::ScheduleMode;

#[derive(Debug, Parser)]
#[command(name = "lutllm", version, about = "Lookup-table LLM quantization, inference, modeling and simulation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded random dense model, or a single dense layer.
    Init(InitArgs),
    /// Quantize a dense container and print its size breakdown as JSON.
    Quantize(QuantizeArgs),
    /// Greedy generation from a model artifact; prints JSON.
    Infer(InferArgs),
    /// Analytic latency and roofline model; prints CSV.
    Perf(PerfArgs),
    /// Cycle simulation; prints a JSON summary and optionally writes traces.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct InitArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Model config: a JSON file or a bundled name (desk, qwen3-1.7b).
    #[arg(long, default_value = "desk", conflicts_with = "layer")]
    pub model: String,
    /// A single `MxD` fp32 layer instead of a model.
    #[arg(long, value_parser = parse_dims)]
    pub layer: Option<(usize, usize)>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Projection gain of the random model.
    #[arg(long, default_value_t = lutllm_runner::DEFAULT_GAIN)]
    pub gain: f32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// G=64, v=2, c_w=8, c_a=16.
    Desk,
    /// G=512, v=2, c_w=16, c_a=64.
    Qwen,
}

/// Scheme selection: a base (preset or JSON file, else the desk preset)
/// with individual fields overridden by flags.
#[derive(Debug, Clone, Args)]
pub struct SchemeArgs {
    #[arg(long, value_parser = parse_kind)]
    pub scheme: Option<SchemeKind>,
    #[arg(long, value_enum, conflicts_with = "scheme_config")]
    pub preset: Option<Preset>,
    /// SchemeConfig JSON file.
    #[arg(long)]
    pub scheme_config: Option<PathBuf>,
    /// G: vectors per weight group.
    #[arg(long)]
    pub group_size: Option<usize>,
    /// v: vector length.
    #[arg(long)]
    pub vector_len: Option<usize>,
    /// c_w: weight centroids.
    #[arg(long)]
    pub weight_centroids: Option<usize>,
    /// c_a: activation centroids.
    #[arg(long)]
    pub act_centroids: Option<usize>,
    /// Table precision: 8 or 32 (4 for the analytic model only).
    #[arg(long)]
    pub table_bits: Option<u32>,
}

#[derive(Debug, Args)]
pub struct QuantizeArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub scheme: SchemeArgs,
    /// Calibration sequences (models) or row blocks (single layers).
    #[arg(long, default_value_t = 4)]
    pub calib_seqs: usize,
    #[arg(long, default_value_t = 64)]
    pub calib_len: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Comma-separated token ids.
    #[arg(long, value_delimiter = ',', required = true)]
    pub prompt: Vec<u32>,
    #[arg(long, default_value_t = 16)]
    pub max_new: usize,
    /// KV cache entries; defaults to what the request needs.
    #[arg(long)]
    pub capacity: Option<usize>,
    /// Dense reference artifact to compare against.
    #[arg(long)]
    pub compare_dense: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExampleKind {
    WeightVq,
    ActivationVq,
    Coquant,
    All,
}

#[derive(Debug, Args)]
pub struct PerfArgs {
    /// The 512x32 single-token reference layer on its small device.
    #[arg(long, value_enum, conflicts_with_all = ["shape", "model"])]
    pub paper_example: Option<ExampleKind>,
    #[command(flatten)]
    pub scheme: SchemeArgs,
    /// Hardware profile JSON or a bundled name (v80, example).
    #[arg(long, default_value = "v80")]
    pub hw: String,
    /// One `M,D` projection.
    #[arg(long, value_parser = parse_dims, conflicts_with = "model")]
    pub shape: Option<(usize, usize)>,
    /// Model config JSON or a bundled name (desk, qwen3-1.7b).
    #[arg(long)]
    pub model: Option<String>,
    /// Sequence lengths (tokens per pass for shapes, prompt or context
    /// length for models).
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub seq: Vec<usize>,
    #[arg(long, default_value = "prefill", value_parser = parse_stage)]
    pub stage: Stage,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Simulate the 512x32 single-token reference layer.
    #[arg(long, conflicts_with_all = ["shape", "model", "block"])]
    pub paper_example: bool,
    /// One `M,D,L` co-quantized projection.
    #[arg(long, value_parser = parse_shape3, conflicts_with = "model")]
    pub shape: Option<(usize, usize, usize)>,
    /// Model config JSON or a bundled name (desk, qwen3-1.7b).
    #[arg(long, default_value = "desk")]
    pub model: String,
    /// One layer pass of the model over `--prompt-len` tokens.
    #[arg(long)]
    pub block: bool,
    #[command(flatten)]
    pub scheme: SchemeArgs,
    /// Hardware profile JSON (may carry a "topology" object) or a bundled
    /// name (v80, example).
    #[arg(long, default_value = "v80")]
    pub hw: String,
    /// EngineTopology JSON; overrides one from --hw.
    #[arg(long)]
    pub topology: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    pub prompt_len: usize,
    #[arg(long, default_value_t = 32)]
    pub gen_len: usize,
    #[arg(long, default_value = "hybrid", value_parser = parse_mode)]
    pub mode: ScheduleMode,
    /// Writes trace.jsonl and summary.csv here.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Fail if the simulation is more than TOL (relative) away from the
    /// analytic model; 0.10 for layers, 0.15 for models by default.
    #[arg(long, num_args = 0..=1, default_missing_value = "auto")]
    pub check: Option<String>,
}

fn parse_kind(s: &str) -> Result<SchemeKind, String> {
    s.parse().map_err(|e: lutllm_core::Error| e.to_string())
}

fn parse_stage(s: &str) -> Result<Stage, String> {
    s.parse().map_err(|e: lutllm_perf::PerfError| e.to_string())
}

fn parse_mode(s: &str) -> Result<ScheduleMode, String> {
    s.parse().map_err(|e: lutllm_sim::SimError| e.to_string())
}

fn numbers(s: &str, n: usize) -> Result<Vec<usize>, String> {
    let parts: Vec<usize> = s
        .split([',', 'x'])
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    if parts.len() != n || parts.contains(&0) {
        return Err(format!("expected {n} positive numbers, got {s:?}"));
    }
    Ok(parts)
}

fn parse_dims(s: &str) -> Result<(usize, usize), String> {
    let v = numbers(s, 2)?;
    Ok((v[0], v[1]))
}

fn parse_shape3(s: &str) -> Result<(usize, usize, usize), String> {
    let v = numbers(s, 3)?;
    Ok((v[0], v[1], v[2]))
}
