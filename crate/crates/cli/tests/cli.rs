use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_walklab"))
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

const DRIFT_CONFIG: &str = r#"{
  "model": {"kind": "free", "rank": 2},
  "measure": {"type": "srw"},
  "seed": 7,
  "params": {"n": 100, "trials": 400}
}"#;

#[test]
fn drift_runs_and_embeds_hash_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "drift.json", DRIFT_CONFIG);
    let out_dir = dir.path().join("results");
    let out = run(&["drift", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let hash = v["config_hash"].as_str().unwrap().to_string();
    assert_eq!(hash.len(), 16);
    assert_eq!(v["seed"].as_u64(), Some(7));
    let value = v["result"]["value"].as_f64().unwrap();
    assert!(value > 0.3 && value < 0.7, "drift estimate {value} far from 1/2");

    let json_file = fs::read_to_string(out_dir.join("drift.json")).unwrap();
    assert_eq!(json_file.as_bytes(), &out.stdout[..out.stdout.len() - 1]);
    let csv = fs::read_to_string(out_dir.join("drift.csv")).unwrap();
    assert!(csv.starts_with(&format!("# config_hash={hash} seed=7")));
    assert!(csv.contains("n,trials,value,std_error"));
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "drift.json", DRIFT_CONFIG);
    let out = run(&["drift", "--config", &cfg, "--seed", "99"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["seed"].as_u64(), Some(99));
}

#[test]
fn output_is_bit_identical_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "drift.json", DRIFT_CONFIG);
    let one = run(&["drift", "--config", &cfg, "--workers", "1"]);
    let four = run(&["drift", "--config", &cfg, "--workers", "4"]);
    assert!(one.status.success() && four.status.success());
    assert_eq!(one.stdout, four.stdout);
}

#[test]
fn elementary_measure_is_refused_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "sigma1.json",
        r#"{
          "model": {"kind": "free", "rank": 2},
          "measure": {"type": "uniform", "support": ["a", "A"]},
          "direction": [["a", 0.5], ["A", -0.5]],
          "seed": 1,
          "params": {"trials": 50}
        }"#,
    );
    let out = run(&["sigma1", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("independence"));
}

#[test]
fn invalid_inputs_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    // malformed JSON
    let bad = write_config(dir.path(), "bad.json", "{ not json");
    assert_eq!(run(&["drift", "--config", &bad]).status.code(), Some(1));
    // unknown config field
    let unknown = write_config(
        dir.path(),
        "unknown.json",
        r#"{"model": {"kind": "free", "rank": 2}, "seed": 1, "bogus": true}"#,
    );
    assert_eq!(run(&["drift", "--config", &unknown]).status.code(), Some(1));
    // missing --config
    assert_eq!(run(&["drift"]).status.code(), Some(1));
    // nonexistent file
    assert_eq!(run(&["drift", "--config", "/nonexistent.json"]).status.code(), Some(1));
}

#[test]
fn resource_cap_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "guiv.json",
        r#"{
          "model": {"kind": "free", "rank": 2},
          "measure": {"type": "srw"},
          "seed": 1,
          "params": {"n": 20, "cap": 1000}
        }"#,
    );
    let out = run(&["guivarch", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(3), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn list_experiments_is_stable_and_complete() {
    let a = run(&["list-experiments"]);
    let b = run(&["list-experiments"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    for cmd in [
        "drift", "entropy", "volume", "guivarch", "continuity", "defect", "sigma1",
        "sigma1-general", "sigma2", "fd-check", "schottky", "pivots", "squeeze-scan", "corridor",
    ] {
        assert!(text.lines().any(|l| l.starts_with(cmd)), "catalog is missing {cmd}");
    }
    assert!(text.contains("criterion"));
}
