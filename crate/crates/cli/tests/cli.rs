//! End-to-end checks of the command-line contract: exit codes (0 ok,
//! 1 validation error, 2 domination failure), output files, and
//! byte-determinism across thread counts.

use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_regenbound"))
}

fn tmp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("regenbound-cli-{name}"));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &PathBuf, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

const SMALL_KLEIN_RIO: &str = r#"
[experiment]
id = "cli_klein_rio"
bound = "klein_rio"
n = 200
reps = 10000
seed = 7
t_grid = [5.0, 10.0, 20.0]

[chain]
kind = "iid_signs"

[class]
kind = "scaled_signs"
coeffs = [1.0, -0.5]
"#;

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

#[test]
fn help_lists_subcommands() {
    let out = run(&["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in ["simulate", "estimate", "verify-bound", "calibrate", "experiment"] {
        assert!(text.contains(sub), "missing {sub} in help: {text}");
    }
}

#[test]
fn verify_bound_writes_csv_and_exits_zero() {
    let dir = tmp_dir("verify");
    let cfg = write_config(&dir, "kr.toml", SMALL_KLEIN_RIO);
    let out_path = dir.join("report.csv");
    let out = run(&[
        "verify-bound",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(&out_path).unwrap();
    assert!(csv.starts_with("experiment_id,t,mc_estimate,mc_se,bound,dominated,vacuous\n"));
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn missing_config_exits_one() {
    let out = run(&["verify-bound", "--config", "/nonexistent/x.toml"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn unknown_bound_exits_one_and_lists_options() {
    let dir = tmp_dir("unknown-bound");
    let cfg = write_config(&dir, "bad.toml", &SMALL_KLEIN_RIO.replace("klein_rio", "made_up"));
    let out = run(&["verify-bound", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("available"), "{err}");
    assert!(err.contains("markov_sum"), "{err}");
}

#[test]
fn crushed_bound_exits_two() {
    let dir = tmp_dir("violated");
    let cfg = write_config(
        &dir,
        "crushed.toml",
        &format!("{SMALL_KLEIN_RIO}\n[ledger]\nk_klein_rio = 1e-6\n"),
    );
    let out = run(&["verify-bound", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("DOMINATION FAILED"));
}

#[test]
fn verify_bound_output_is_thread_count_invariant() {
    let dir = tmp_dir("threads");
    let cfg = write_config(&dir, "kr.toml", SMALL_KLEIN_RIO);
    let a = dir.join("t1.csv");
    let b = dir.join("t4.csv");
    for (threads, path) in [("1", &a), ("4", &b)] {
        let out = run(&[
            "verify-bound",
            "--config",
            cfg.to_str().unwrap(),
            "--threads",
            threads,
            "--out",
            path.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn estimate_reports_block_statistics() {
    let dir = tmp_dir("estimate");
    let cfg = write_config(
        &dir,
        "loop.toml",
        r#"
            [experiment]
            id = "cli_loop"
            n = 500
            reps = 200
            seed = 3

            [chain]
            kind = "loop_chain"

            [class]
            kind = "loop_indicator"
            rs = [3]
        "#,
    );
    let out = run(&["estimate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let mean_t2 = json["mean_t2"].as_f64().unwrap();
    // Flag-to-flag gap mean = 1 + 1/(1 - e^{-1}).
    assert!((mean_t2 - 2.582).abs() < 0.05, "mean_t2 = {mean_t2}");
    assert!(json["functions"]["f3"]["var_z1"].is_number());
}

#[test]
fn simulate_dumps_trajectory() {
    let dir = tmp_dir("simulate");
    let cfg = write_config(&dir, "kr.toml", SMALL_KLEIN_RIO);
    let out = run(&["simulate", "--config", cfg.to_str().unwrap(), "--n", "25"]);
    assert_eq!(out.status.code(), Some(0));
    let csv = String::from_utf8_lossy(&out.stdout);
    assert!(csv.starts_with("step,state,flag\n"));
    assert_eq!(csv.lines().count(), 26);
}

#[test]
fn calibrate_emits_constant() {
    let dir = tmp_dir("calibrate");
    let cfg = write_config(&dir, "kr.toml", SMALL_KLEIN_RIO);
    let out = run(&["calibrate", "--config", cfg.to_str().unwrap(), "--reps", "10000"]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["knob"], "k_klein_rio");
    let k = json["constant"].as_f64().unwrap();
    assert!(k <= 1.0, "explicit-constant bound needed K = {k} > 1");
}

#[test]
fn log_necessity_runs_small() {
    let out = run(&[
        "experiment",
        "log-necessity",
        "--r",
        "6",
        "--reps",
        "10000",
        "--seed",
        "5",
        "--format",
        "csv",
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let csv = String::from_utf8_lossy(&out.stdout);
    assert!(csv.starts_with("r,n,sum_exceed"));
    assert!(csv.contains("\n6,11,"), "{csv}");
}
