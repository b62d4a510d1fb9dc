use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gauss-markov"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn binary")
}

fn run_with_config(cmd: &str, config: &Value, dir: &Path, out: &Path) -> Output {
    let cfg = dir.join(format!("{cmd}-{}.json", out.file_name().unwrap().to_string_lossy()));
    fs::write(&cfg, serde_json::to_string(config).unwrap()).unwrap();
    run(&[cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

#[test]
fn help_exits_zero() {
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn unknown_subcommand_is_usage_error() {
    assert_eq!(code(&run(&["frobnicate"])), 2);
}

#[test]
fn kernel_writes_reference_mean() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("k");
    let o = run(&["kernel", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let s = json(out.join("samples.json"));
    let times: Vec<f64> = serde_json::from_value(s["times"].clone()).unwrap();
    let ti = times.iter().position(|&t| t == 1.0).unwrap();
    // probe 0 is the origin
    let m = s["means"][ti][0][0].as_f64().unwrap();
    assert!((m - (1.0 - (-1.0f64).exp())).abs() < 1e-10, "m(1, 0) = {m}");
    let ck = json(out.join("chapman_kolmogorov.json"));
    assert_eq!(ck["pass"], Value::Bool(true));
    let man = json(out.join("manifest.json"));
    assert_eq!(man["command"], "kernel");
    assert_eq!(man["pass"], Value::Bool(true));
}

#[test]
fn existing_output_directory_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["kernel", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn missing_config_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["kernel", "--config", "/nonexistent/cfg.json", "--out", dir.path().join("x").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(!dir.path().join("x").exists());
}

#[test]
fn empty_time_grid_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_with_config("kernel", &serde_json::json!({"times": []}), dir.path(), &dir.path().join("k"));
    assert_eq!(code(&o), 2);
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_with_config("simulate", &serde_json::json!({"n_path": 10}), dir.path(), &dir.path().join("s"));
    assert_eq!(code(&o), 2);
}

#[test]
fn kernel_identify_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let model = serde_json::json!({
        "dim": 2,
        "A": [-1.0, 0.3, -0.2, -0.5],
        "b_V": [0.4, -0.1],
        "Q_diff": [1.0, 0.2, 0.2, 0.5],
        "lambda": 1.0
    });
    let k = dir.path().join("k");
    let o = run_with_config(
        "kernel",
        &serde_json::json!({"model": model, "times": [0.001, 0.002, 0.5, 1.0]}),
        dir.path(),
        &k,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let id = dir.path().join("id");
    let o = run_with_config(
        "identify",
        &serde_json::json!({"samples": k.join("samples.json")}),
        dir.path(),
        &id,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m = json(id.join("model.json"));
    let a: Vec<f64> = serde_json::from_value(m["A"].clone()).unwrap();
    let truth = [-1.0, 0.3, -0.2, -0.5];
    for (x, y) in a.iter().zip(truth) {
        assert!((x - y).abs() < 1e-6, "A entry {x} vs {y}");
    }
}

#[test]
fn corrupted_samples_fail_the_check() {
    let dir = tempfile::tempdir().unwrap();
    let k = dir.path().join("k");
    assert_eq!(code(&run(&["kernel", "--out", k.to_str().unwrap()])), 0);
    let mut s = json(k.join("samples.json"));
    // bend one mean off the affine map
    let v = s["means"][2][1][0].as_f64().unwrap();
    s["means"][2][1][0] = serde_json::json!(v + 0.05);
    let bad = dir.path().join("bad.json");
    fs::write(&bad, serde_json::to_string(&s).unwrap()).unwrap();
    let o = run_with_config("identify", &serde_json::json!({"samples": bad}), dir.path(), &dir.path().join("id"));
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stdout));
    assert!(dir.path().join("id").join("identified.json").exists());
}

#[test]
fn identify_without_samples_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["identify", "--out", dir.path().join("id").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn martingale_reports_reference_slope() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m");
    let o = run_with_config(
        "martingale",
        &serde_json::json!({"n_paths": 20000, "n_steps": 200}),
        dir.path(),
        &out,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let d = json(out.join("martingale.json"));
    assert!((d["theory_slope"].as_f64().unwrap() - 2.0).abs() < 1e-12);
    assert_eq!(d["pass"], Value::Bool(true));
}

#[test]
fn generator_corpus_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g");
    let o = run_with_config("generator", &serde_json::json!({"corpus_seeds": [0, 1, 2]}), dir.path(), &out);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let d = json(out.join("generator.json"));
    assert!(d["cases"].as_array().unwrap().len() > 3);
}

#[test]
fn noiseless_boundary_is_deterministic_part() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("b");
    let o = run_with_config(
        "boundary",
        &serde_json::json!({"noise": false, "n_steps": 50, "galerkin_modes": 2}),
        dir.path(),
        &out,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let d = json(out.join("boundary.json"));
    assert_eq!(d["noiseless_max_deviation"].as_f64(), Some(0.0));
    assert!(out.join("fields.csv").exists() && out.join("q_table.csv").exists());
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = serde_json::json!({"n_paths": 500, "n_steps": 20});
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(code(&run_with_config("simulate", &cfg, dir.path(), &a)), 0);
    assert_eq!(code(&run_with_config("simulate", &cfg, dir.path(), &b)), 0);
    for f in ["paths.csv", "moments.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"seed": 1, "n_paths": 100, "n_steps": 5}"#).unwrap();
    let out = dir.path().join("s");
    let o = run(&["simulate", "--config", cfg.to_str().unwrap(), "--seed", "7", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert_eq!(json(out.join("manifest.json"))["config"]["seed"], 7);
}

#[test]
fn manifest_config_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let o = run_with_config("simulate", &serde_json::json!({"n_paths": 200, "n_steps": 10, "seed": 3}), dir.path(), &a);
    assert_eq!(code(&o), 0);
    let mut cfg = json(a.join("manifest.json"))["config"].clone();
    cfg.as_object_mut().unwrap().remove("out");
    let b = dir.path().join("b");
    assert_eq!(code(&run_with_config("simulate", &cfg, dir.path(), &b)), 0);
    assert_eq!(fs::read(a.join("paths.csv")).unwrap(), fs::read(b.join("paths.csv")).unwrap());
}
