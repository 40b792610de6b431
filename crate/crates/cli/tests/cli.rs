//! End-to-end runs of the binary: exit codes, report envelopes, artifacts.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lpembed"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn report(dir: &Path, name: &str) -> serde_json::Value {
    let text = std::fs::read_to_string(dir.join(name)).expect("report file");
    serde_json::from_str(&text).expect("report is JSON")
}

#[test]
fn generate_is_deterministic_per_seed() {
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    for d in [&d1, &d2] {
        let out = run(&[
            "generate",
            "--family",
            "consistent-pair",
            "--n",
            "300",
            "--d",
            "4",
            "--seed",
            "42",
            "--out",
            d.path().to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    }
    for name in ["matrix.mtx", "b.txt", "x_true.txt"] {
        let a = std::fs::read(d1.path().join(name)).unwrap();
        let b = std::fs::read(d2.path().join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

#[test]
fn regress_solves_a_consistent_system() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "regress",
        "--n",
        "2000",
        "--d",
        "6",
        "--seed",
        "7",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let rep = report(dir.path(), "regress.json");
    assert_eq!(rep["pass"], true);
    assert!(rep["version"].as_str().unwrap().starts_with("lpembed "));
    assert_eq!(rep["command"], "regress");
    assert_eq!(rep["master_seed"], 7);
    let obj = rep["results"]["solution"]["objective"].as_f64().unwrap();
    assert!(obj <= 1e-6, "objective {obj} above the consistent-system gate");
    assert!(dir.path().join("x_hat.txt").is_file());
}

#[test]
fn regress_reads_matrix_and_rhs_files() {
    let gen = tempfile::tempdir().unwrap();
    let out = run(&[
        "generate",
        "--family",
        "consistent-pair",
        "--n",
        "400",
        "--d",
        "5",
        "--seed",
        "3",
        "--out",
        gen.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "regress",
        "--matrix",
        gen.path().join("matrix.mtx").to_str().unwrap(),
        "--rhs",
        gen.path().join("b.txt").to_str().unwrap(),
        "--p",
        "1.5",
        "--max-objective",
        "1e-6",
        "--seed",
        "1",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn verify_tails_default_suite_emits_five_passing_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "verify-tails",
        "--trials",
        "20000",
        "--seed",
        "11",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let jsonl = std::fs::read_to_string(dir.path().join("tails.jsonl")).unwrap();
    let lines: Vec<&str> = jsonl.lines().collect();
    assert_eq!(lines.len(), 5);
    for line in lines {
        let r: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(r["pass"], true, "failing check: {line}");
    }
    let rep = report(dir.path(), "verify_tails.json");
    assert_eq!(rep["results"]["checks"], 5);
}

#[test]
fn moments_and_cdf_order_pass_at_small_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "moments",
        "--trials",
        "500",
        "--seed",
        "5",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));

    let out = run(&[
        "cdf-order",
        "--samples",
        "4000",
        "--t-points",
        "5",
        "--p-step",
        "0.5",
        "--seed",
        "9",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("cdf_order.csv")).unwrap();
    assert!(csv.starts_with("p,t,cdf\n"));
}

#[test]
fn bench_writes_csv_and_fit() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "bench",
        "--n",
        "2000",
        "--d",
        "50",
        "--s",
        "200",
        "--nnz",
        "2000,4000,8000",
        "--reps",
        "2",
        "--seed",
        "2",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    assert!(csv.starts_with("nnz,wall_ms\n"));
    assert_eq!(csv.lines().count(), 4);
    let rep = report(dir.path(), "bench.json");
    assert!(rep["results"]["r2"].as_f64().unwrap().is_finite());
}

#[test]
fn unknown_config_key_is_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "bogus-key = 1\n").unwrap();
    let out = run(&[
        "sketch",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus-key"));
}

#[test]
fn invalid_parameter_is_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "regress",
        "--eps",
        "1.5",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn failed_check_is_exit_one_with_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "regress",
        "--family",
        "noisy-pair",
        "--n",
        "1500",
        "--max-objective",
        "1e-30",
        "--seed",
        "6",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let rep = report(dir.path(), "regress.json");
    assert_eq!(rep["pass"], false);
}

#[test]
fn config_file_sets_values_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "seed = 8\n\n[verify-tails]\ntrials = 5000\n").unwrap();
    let out = run(&[
        "verify-tails",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let rep = report(dir.path(), "verify_tails.json");
    assert_eq!(rep["master_seed"], 8);
    assert_eq!(rep["config"]["trials"], 5000);

    // flag beats file
    let out = run(&[
        "verify-tails",
        "--config",
        cfg.to_str().unwrap(),
        "--trials",
        "6000",
        "--seed",
        "9",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let rep = report(dir.path(), "verify_tails.json");
    assert_eq!(rep["master_seed"], 9);
    assert_eq!(rep["config"]["trials"], 6000);
}

#[test]
fn sketch_condition_sample_run_green() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "sketch",
        "--n",
        "4000",
        "--d",
        "8",
        "--max-distortion",
        "0.5",
        "--seed",
        "4",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));

    let out = run(&[
        "condition",
        "--n",
        "2000",
        "--d",
        "8",
        "--seed",
        "4",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));

    let out = run(&[
        "sample",
        "--n",
        "5000",
        "--d",
        "8",
        "--seed",
        "4",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let weights = std::fs::read_to_string(dir.path().join("sample_weights.csv")).unwrap();
    assert!(weights.starts_with("row,weight\n"));
}
