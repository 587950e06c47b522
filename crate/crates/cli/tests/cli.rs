//! End-to-end runs of the `lutllm` binary.

use std::path::Path;
use std::process::{Command, Output};

use lutllm_cli::commands::{calibration_rows, tensor_seed};
use lutllm_core::{Container, DType, QuantizedLinear, SchemeConfig, SchemeKind};
use serde_json::Value;

fn lutllm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lutllm")).args(args).output().expect("spawn lutllm")
}

fn ok(args: &[&str]) -> String {
    let out = lutllm(args);
    assert!(out.status.success(), "lutllm {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn json(args: &[&str]) -> Value {
    serde_json::from_str(&ok(args)).expect("json output")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Two-layer model small enough to quantize in a test.
fn tiny_config(dir: &Path) -> String {
    let cfg = serde_json::json!({
        "name": "tiny", "hidden": 128, "ffn_hidden": 256, "heads": 4, "kv_group": 2,
        "head_dim": 32, "layers": 2, "vocab": 96, "norm_eps": 1e-6, "rope_base": 10000.0
    });
    let path = dir.join("tiny.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn perf_worked_example() {
    let csv = ok(&["perf", "--paper-example", "all"]);
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "scheme,m,d,l,t_mem,t_lat,overall,chosen_s");
    assert_eq!(rows[1], "weight_vq,512,32,1,96,1090,1090,");
    assert_eq!(rows[2], "activation_vq,512,32,1,8256,512,8256,1");
    assert_eq!(rows[3], "coquant,512,32,1,640,288,640,1");
}

#[test]
fn perf_model_roofline_csv() {
    let csv = ok(&["perf", "--model", "qwen3-1.7b", "--preset", "qwen", "--seq", "1,16,256"]);
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.starts_with("seq_len,"));
}

#[test]
fn perf_rejects_missing_target_and_bad_flags() {
    assert!(!lutllm(&["perf"]).status.success());
    let bad = lutllm(&["perf", "--shape", "512,32", "--vector-len", "0"]);
    assert!(!bad.status.success());
    assert_eq!(lutllm(&["perf", "--paper-example", "bogus"]).status.code(), Some(2));
}

#[test]
fn quantize_layer_matches_in_process_quantization() {
    let dir = tempfile::tempdir().unwrap();
    let (dense, quant) = (dir.path().join("l.lut"), dir.path().join("q.lut"));
    ok(&["init", "--layer", "128,256", "--seed", "3", "--out", p(&dense)]);
    let report: Value =
        serde_json::from_str(&ok(&["quantize", "--in", p(&dense), "--out", p(&quant), "--seed", "11"])).unwrap();
    let t = &report["tensors"][0];
    let total = ["weight_indices", "weight_codebooks", "act_codebooks", "tables"]
        .iter()
        .map(|k| t[k].as_u64().unwrap())
        .sum::<u64>();
    assert_eq!(t["total"].as_u64(), Some(total));

    let w = Container::load(&dense).unwrap().get_matrix("weight").unwrap();
    let scheme: SchemeConfig = serde_json::from_value(report["scheme"].clone()).unwrap();
    let seed = tensor_seed(11, 0);
    let expected = QuantizedLinear::quantize(&w, Some(&calibration_rows(256, 4 * 64, seed)), &scheme, seed).unwrap();
    let stored = Container::load(&quant).unwrap().get_linear("weight", &scheme).unwrap();
    assert_eq!(stored, expected);
}

#[test]
fn quantize_qwen_flags_table_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let (dense, quant) = (dir.path().join("l.lut"), dir.path().join("q.lut"));
    ok(&["init", "--layer", "2048,2048", "--out", p(&dense)]);
    let report = json(&[
        "quantize", "--in", p(&dense), "--out", p(&quant), "--scheme", "coquant", "--group-size", "512",
        "--vector-len", "2", "--weight-centroids", "16", "--act-centroids", "64", "--table-bits", "8",
        "--calib-seqs", "1", "--calib-len", "16",
    ]);
    assert_eq!(report["tensors"][0]["tables"].as_u64(), Some(2048 * 2048 * 64 * 16 / (512 * 2)));
}

#[test]
fn quantize_fp16_rounds_weights() {
    let dir = tempfile::tempdir().unwrap();
    let (dense, half) = (dir.path().join("l.lut"), dir.path().join("h.lut"));
    ok(&["init", "--layer", "64,64", "--out", p(&dense)]);
    let report = json(&["quantize", "--in", p(&dense), "--out", p(&half), "--scheme", "fp16"]);
    assert_eq!(report["total"]["total"].as_u64(), Some(2 * 64 * 64));
    let c = Container::load(&half).unwrap();
    assert_eq!(c.manifest.tensors[0].dtype, DType::F16);
    let w = Container::load(&dense).unwrap().get_matrix("weight").unwrap();
    let h = c.get_matrix("weight").unwrap();
    for (a, b) in w.as_slice().iter().zip(h.as_slice()) {
        assert_eq!(half::f16::from_f32(*a).to_f32(), *b);
    }
}

#[test]
fn model_quantize_and_infer_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let (dense, quant) = (dir.path().join("m.lut"), dir.path().join("q.lut"));
    ok(&["init", "--model", &cfg, "--seed", "5", "--out", p(&dense)]);
    let report = json(&["quantize", "--in", p(&dense), "--out", p(&quant), "--calib-seqs", "2", "--calib-len", "32"]);
    assert_eq!(report["tensors"].as_array().unwrap().len(), 2 * 7);
    assert_eq!(report["scheme"]["kind"], "coquant");

    let args = ["infer", "--model", p(&quant), "--prompt", "1,2,3,4,5", "--max-new", "6", "--compare-dense", p(&dense)];
    let a = json(&args);
    assert_eq!(a, json(&args));
    assert_eq!(a["tokens"].as_array().unwrap().len(), 6);
    assert!(a["compare"]["logit_cosine"].as_f64().unwrap() > 0.9);
    let g = a["greedy_agreement"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&g));

    assert!(!lutllm(&["infer", "--model", p(&quant), "--prompt", "1,2", "--capacity", "2", "--max-new", "4"])
        .status
        .success());
    assert!(!lutllm(&["infer", "--model", p(&quant), "--prompt", "9999"]).status.success());
    let missing = dir.path().join("nope").join("q.lut");
    let err = lutllm(&["quantize", "--in", p(&dense), "--out", p(&missing)]);
    assert!(String::from_utf8_lossy(&err.stderr).contains("does not exist"));
}

#[test]
fn simulate_worked_example_passes_check() {
    let s = json(&["simulate", "--paper-example", "--check"]);
    assert_eq!(s["analytic_cycles"].as_f64(), Some(640.0));
    assert!((s["ratio"].as_f64().unwrap() - 1.0).abs() <= 0.10);
    let strict = lutllm(&["simulate", "--paper-example", "--check", "0.000001"]);
    assert!(!strict.status.success());
}

#[test]
fn hybrid_block_is_no_slower_than_sequential() {
    let cycles = |mode: &str| json(&["simulate", "--block", "--mode", mode])["total_cycles"].as_u64().unwrap();
    let hybrid = cycles("hybrid");
    assert!(hybrid <= cycles("sequential"));
    assert!(hybrid <= cycles("dataflow"));
}

#[test]
fn simulate_prefill_only_and_trace_files() {
    let dir = tempfile::tempdir().unwrap();
    let s = json(&["simulate", "--model", "desk", "--prompt-len", "8", "--gen-len", "0", "--out-dir", p(dir.path())]);
    assert_eq!(s["decode_cycles"].as_u64(), Some(0));
    assert_eq!(s["prefill_cycles"], s["total_cycles"]);
    let trace = std::fs::read_to_string(dir.path().join("trace.jsonl")).unwrap();
    assert!(trace.lines().count() > 0);
    for line in trace.lines().take(20) {
        serde_json::from_str::<Value>(line).unwrap();
    }
    assert!(dir.path().join("summary.csv").exists());
}

#[test]
fn thread_override_is_validated() {
    let out = Command::new(env!("CARGO_BIN_EXE_lutllm"))
        .args(["perf", "--paper-example", "coquant"])
        .env("LUTLLM_THREADS", "0")
        .output()
        .unwrap();
    assert!(!out.status.success());
    let out = Command::new(env!("CARGO_BIN_EXE_lutllm"))
        .args(["perf", "--paper-example", "coquant"])
        .env("LUTLLM_THREADS", "1")
        .output()
        .unwrap();
    assert!(out.status.success());
}

#[test]
fn scheme_kind_names_parse() {
    for k in [SchemeKind::WeightVq, SchemeKind::ActivationVq, SchemeKind::Coquant] {
        ok(&["perf", "--shape", "512,256", "--scheme", &k.to_string()]);
    }
}
