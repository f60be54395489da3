use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use magd_core::io::{self, Dtype};
use magd_core::metrics::MetricReport;
use magd_core::numerics::DenseMatrix;
use magd_core::verify::Certificate;
use serde_json::Value;

fn magd(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_magd"))
        .args(args)
        .current_dir(dir)
        .env_remove("MAGD_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = magd(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn synth(dir: &Path, out: &str, conflict: &str) {
    ok(dir, &["synth", "--n", "300", "--classes", "3", "--conflict", conflict, "--seed", "1", "--out", out]);
}

#[test]
fn synth_writes_reproducible_files() {
    let tmp = tempfile::tempdir().unwrap();
    let stdout = ok(
        tmp.path(),
        &["synth", "--n", "500", "--classes", "4", "--conflict", "0.8", "--seed", "1", "--out", "a"],
    );
    let summary: Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(summary["n"], 500);
    assert_eq!(summary["conflict"], 0.8);
    assert!(summary["edges"].as_u64().unwrap() > 0);
    ok(tmp.path(), &["synth", "--n", "500", "--classes", "4", "--conflict", "0.8", "--seed", "1", "--out", "b"]);
    let mut names: Vec<String> = fs::read_dir(tmp.path().join("a"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["feat_i.magf", "feat_t.magf", "graph.tsv", "labels.txt"]);
    for name in &names {
        let a = fs::read(tmp.path().join("a").join(name)).unwrap();
        let b = fs::read(tmp.path().join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = magd(tmp.path(), &["synth", "--conflict", "1.5", "--out", "d"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("conflict must lie in [0, 1]"));
    assert_eq!(code(&magd(tmp.path(), &["synth", "--bogus"])), 2);
    assert_eq!(code(&magd(tmp.path(), &["frobnicate"])), 2);
    assert_eq!(code(&magd(tmp.path(), &["--threads", "0", "verify", "--only", "fusion", "--trials", "1"])), 2);

    synth(tmp.path(), "data", "0");
    fs::write(tmp.path().join("cfg.json"), r#"{"train": {"momentum": 0.9}}"#).unwrap();
    let out = magd(tmp.path(), &["propagate", "--data", "data", "--out", "s", "--config", "cfg.json"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("momentum"));
    let out = magd(tmp.path(), &["propagate", "--data", "data", "--out", "s", "--model", "gcn"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn propagate_writes_stores_and_refuses_to_overwrite() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "data", "0.5");
    fs::write(tmp.path().join("cfg.json"), r#"{"propagation": {"k": 4, "alpha_t": 0.5, "beta_t": 0.3, "gamma_t": 0.2, "alpha_i": 0.5, "beta_i": 0.3, "gamma_i": 0.2}}"#).unwrap();
    let stdout = ok(
        tmp.path(),
        &["propagate", "--config", "cfg.json", "--data", "data", "--model", "campa", "--out", "traj"],
    );
    let summary: Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(summary["files"], 10);
    assert!(summary["predicted_flops"].as_f64().unwrap() > 0.0);
    let manifest: Value = serde_json::from_slice(&fs::read(tmp.path().join("traj/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["files"].as_array().unwrap().len(), 10);
    assert!(manifest["cross_operators"].is_object());

    ok(tmp.path(), &["propagate", "--data", "data", "--model", "msgc", "--out", "plain"]);
    let manifest: Value = serde_json::from_slice(&fs::read(tmp.path().join("plain/manifest.json")).unwrap()).unwrap();
    assert!(manifest.get("cross_operators").is_none());
    assert_eq!(manifest["model"], "msgc");

    let again = magd(tmp.path(), &["propagate", "--data", "data", "--out", "traj"]);
    assert_eq!(code(&again), 3);
    ok(tmp.path(), &["propagate", "--data", "data", "--out", "traj", "--force"]);
}

#[test]
fn flags_override_config_and_are_logged() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "data", "0");
    fs::write(tmp.path().join("cfg.json"), r#"{"seed": 3, "train": {"lr": 0.001}}"#).unwrap();
    let out = magd(
        tmp.path(),
        &["propagate", "--data", "data", "--out", "s", "--config", "cfg.json", "--seed", "9", "--beta", "0.1"],
    );
    assert!(out.status.success());
    let log = String::from_utf8_lossy(&out.stderr);
    assert!(log.contains("--seed overrides seed: 3 -> 9"), "{log}");
    assert!(log.contains("overrides propagation"), "{log}");
    let stored: Value = serde_json::from_slice(&fs::read(tmp.path().join("s/config.json")).unwrap()).unwrap();
    assert_eq!(stored["seed"], 9);
    assert_eq!(stored["propagation"]["beta_t"], 0.1);
    assert_eq!(stored["train"]["lr"], 0.001);
}

#[test]
fn thread_count_never_changes_results() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "data", "0.5");
    let out = Command::new(env!("CARGO_BIN_EXE_magd"))
        .args(["propagate", "--data", "data", "--out", "one"])
        .current_dir(tmp.path())
        .env("MAGD_THREADS", "1")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("threads: 1 (from MAGD_THREADS)"));
    ok(tmp.path(), &["--threads", "3", "propagate", "--data", "data", "--out", "three"]);
    let a: Value = serde_json::from_slice(&fs::read(tmp.path().join("one/manifest.json")).unwrap()).unwrap();
    let b: Value = serde_json::from_slice(&fs::read(tmp.path().join("three/manifest.json")).unwrap()).unwrap();
    assert_eq!(a["files"], b["files"]);
}

#[test]
fn node_classification_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["synth", "--n", "500", "--classes", "4", "--conflict", "0", "--seed", "1", "--out", "data"]);
    ok(tmp.path(), &["propagate", "--data", "data", "--out", "traj", "--seed", "1"]);
    let stdout = ok(tmp.path(), &["train", "--data", "data", "--store", "traj", "--out", "ckpt", "--epochs", "60"]);
    let run: Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(run["task"], "nc");
    assert!(tmp.path().join("ckpt/params_manifest.json").exists());
    let history = fs::read_to_string(tmp.path().join("ckpt/history.jsonl")).unwrap();
    let lines: Vec<Value> = history.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len() as u64, run["epochs_run"].as_u64().unwrap());
    assert_eq!(lines[0]["epoch"], 1);

    let eval = ["eval", "--data", "data", "--store", "traj", "--checkpoint", "ckpt", "--task", "nc"];
    let first = ok(tmp.path(), &eval);
    assert_eq!(first, ok(tmp.path(), &eval));
    let reports: Vec<MetricReport> = serde_json::from_str(&first).unwrap();
    assert_eq!(reports[0].metric, "accuracy");
    assert!(reports[0].value >= 0.95, "{reports:?}");
    assert_eq!(reports[0].seed, 1);

    for (task, metrics) in [("cluster", ["nmi", "ari"]), ("retrieval", ["t2i_mrr", "i2t_mrr"])] {
        let out = ok(tmp.path(), &["eval", "--data", "data", "--store", "traj", "--checkpoint", "ckpt", "--task", task]);
        let reports: Vec<MetricReport> = serde_json::from_str(&out).unwrap();
        let names: Vec<&str> = reports.iter().map(|r| r.metric.as_str()).collect();
        assert_eq!(names, metrics);
        assert!(reports.iter().all(|r| r.value.is_finite() && r.value <= 1.0));
    }

    ok(tmp.path(), &["export-correlations", "--store", "traj", "--checkpoint", "ckpt", "--out", "corr"]);
    let corr = fs::read_to_string(tmp.path().join("corr/correlation.csv")).unwrap();
    assert!(corr.starts_with(",text,image,fused\n"));
}

#[test]
fn link_prediction_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "data", "0");
    ok(tmp.path(), &["propagate", "--data", "data", "--out", "traj", "--model", "msgc"]);
    ok(
        tmp.path(),
        &["train", "--data", "data", "--store", "traj", "--out", "ckpt", "--task", "lp", "--epochs", "5"],
    );
    let out = ok(tmp.path(), &["eval", "--data", "data", "--store", "traj", "--checkpoint", "ckpt", "--task", "lp"]);
    let reports: Vec<MetricReport> = serde_json::from_str(&out).unwrap();
    let names: Vec<&str> = reports.iter().map(|r| r.metric.as_str()).collect();
    assert_eq!(names, ["mrr", "hits@3", "hits@10"]);
    assert!(reports[0].value > 0.0 && reports[1].value <= reports[2].value);
    // an lp checkpoint has no classifier head
    let nc = magd(tmp.path(), &["eval", "--data", "data", "--store", "traj", "--checkpoint", "ckpt", "--task", "nc"]);
    assert_eq!(code(&nc), 2);
}

#[test]
fn missing_artifacts_exit_5() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "data", "0");
    let out = magd(tmp.path(), &["train", "--data", "data", "--store", "nowhere", "--out", "ckpt"]);
    assert_eq!(code(&out), 5);
    assert_eq!(code(&magd(tmp.path(), &["propagate", "--data", "absent", "--out", "s"])), 5);
    fs::create_dir(tmp.path().join("empty")).unwrap();
    assert_eq!(code(&magd(tmp.path(), &["export-correlations", "--store", "empty", "--out", "x"])), 5);
    let manifest = r#"{"n": 0, "d": 0, "k": 0, "model": "campa",
        "coefficients": {"k": 1, "alpha_t": 0.5, "beta_t": 0.3, "gamma_t": 0.2, "alpha_i": 0.5, "beta_i": 0.3, "gamma_i": 0.2},
        "files": []}"#;
    fs::write(tmp.path().join("empty/manifest.json"), manifest).unwrap();
    let out = magd(tmp.path(), &["export-correlations", "--store", "empty", "--out", "x"]);
    assert_eq!(code(&out), 5);
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty"));
}

#[test]
fn numeric_failures_exit_4() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "data", "0");
    ok(tmp.path(), &["propagate", "--data", "data", "--out", "traj"]);
    let out = magd(
        tmp.path(),
        &["train", "--data", "data", "--store", "traj", "--out", "ckpt", "--set", "train.lr=1e300", "--epochs", "3"],
    );
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("diverged"));

    // finite on disk, overflows once hops are summed
    let path = tmp.path().join("data/feat_t.magf");
    let f = io::read_magf(&path).unwrap();
    let huge = DenseMatrix::from_fn(f.rows(), f.cols(), |_, _| f64::MAX);
    io::write_magf(&path, &huge, Dtype::F64).unwrap();
    let out = magd(tmp.path(), &["propagate", "--data", "data", "--out", "big"]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));

    // a NaN is rejected by the reader, which is a malformed file
    let mut f = f;
    f.set(0, 0, f64::NAN);
    io::write_magf(&path, &f, Dtype::F64).unwrap();
    let out = magd(tmp.path(), &["propagate", "--data", "data", "--out", "nan"]);
    assert_eq!(code(&out), 3);
}

#[test]
fn store_tampering_is_an_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "data", "0");
    ok(tmp.path(), &["propagate", "--data", "data", "--out", "traj"]);
    let victim = tmp.path().join("traj/traj_t_1.magf");
    let m = io::read_magf(&victim).unwrap();
    let bumped = DenseMatrix::from_fn(m.rows(), m.cols(), |r, c| m.get(r, c) + 1.0);
    io::write_magf(&victim, &bumped, Dtype::F64).unwrap();
    let out = magd(tmp.path(), &["train", "--data", "data", "--store", "traj", "--out", "ckpt"]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("checksum"));
}

#[test]
fn verify_single_theorem() {
    let tmp = tempfile::tempdir().unwrap();
    let stdout = ok(tmp.path(), &["verify", "--only", "contraction", "--trials", "20", "--seed", "42", "--out", "certs"]);
    assert_eq!(stdout.lines().count(), 1);
    assert!(stdout.starts_with("contraction: PASS"));
    let files: Vec<String> = fs::read_dir(tmp.path().join("certs"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert_eq!(files.len(), 2);
    let cert: Certificate =
        serde_json::from_slice(&fs::read(tmp.path().join("certs/contraction.json")).unwrap()).unwrap();
    assert!(cert.pass);
    assert_eq!((cert.trials, cert.seed), (20, 42));
}

#[test]
fn drift_export_and_alignment_effect() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "data", "1");
    let mut last = Vec::new();
    for beta in ["0", "0.3"] {
        let store = format!("s{beta}");
        ok(tmp.path(), &["propagate", "--data", "data", "--out", &store, "--alpha", "0.5", "--beta", beta]);
        let stdout = ok(tmp.path(), &["export-correlations", "--store", &store, "--out", &format!("e{beta}")]);
        let csv = fs::read_to_string(tmp.path().join(format!("e{beta}/drift.csv"))).unwrap();
        assert_eq!(stdout, csv);
        assert_eq!(csv.lines().next().unwrap(), "hop,cos_tt,cos_ii,cos_ti");
        let hop_k: Vec<f64> = csv.lines().last().unwrap().split(',').map(|x| x.parse().unwrap()).collect();
        last.push(hop_k[3]);
    }
    assert!(last[1] >= last[0], "{last:?}");
    assert_ne!(last[1], last[0]);
}

#[test]
fn bench_reports_both_paths() {
    let tmp = tempfile::tempdir().unwrap();
    let stdout = ok(tmp.path(), &["bench", "--n", "400", "--repeats", "1", "--out", "bench.json"]);
    let v: Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(v["identical"], true);
    assert!(v["precompute_seconds_parallel"].as_f64().unwrap() > 0.0);
    assert!(v["epoch_seconds"].as_f64().unwrap() > 0.0);
    assert!(v["store_bytes_f32"].as_u64().unwrap() < v["store_bytes_f64"].as_u64().unwrap());
    assert!(v["f32_max_abs_error"].as_f64().unwrap() < 1e-5);
}
