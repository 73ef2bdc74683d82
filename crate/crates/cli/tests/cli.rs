use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn superpulse(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_superpulse"))
        .args(args)
        .current_dir(cwd)
        .env_remove("SUPERPULSE_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn small_config() -> Value {
    json!({
        "backend": "master",
        "params": {"n_atoms": 6, "kappa": 1.0, "omega": 5.0, "lambda": 0.5},
        "initial": {"theta": 0.3141592653589793, "phi": 1.5707963267948966},
        "time": {"t_start": 0.0, "t_end": 200.0, "samples": 21},
        "observables": ["moments", "chi2", "c3"],
        "output": {"prefix": "small"}
    })
}

fn write(dir: &Path, name: &str, v: &Value) -> String {
    let p = dir.join(name);
    fs::write(&p, v.to_string()).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn run_succeeds_and_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", &small_config());
    let out = dir.path().join("out");
    let o = superpulse(&["run", &cfg, "--out", out.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["n_atoms"], json!(6));
    assert!(out.join("small.csv").exists());
    assert!(out.join("small_summary.json").exists());
}

#[test]
fn output_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", &small_config());
    let o = Command::new(env!("CARGO_BIN_EXE_superpulse"))
        .args(["run", &cfg])
        .current_dir(dir.path())
        .env("SUPERPULSE_OUT_DIR", dir.path().join("env-out"))
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(dir.path().join("env-out/small.csv").exists());
}

#[test]
fn configuration_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let mut bad = small_config();
    bad["backend"] = json!("meanfield");
    bad["params"].as_object_mut().unwrap().remove("n_atoms");
    let cfg = write(dir.path(), "bad.json", &bad);
    for args in [vec!["run", cfg.as_str()], vec!["validate", cfg.as_str()]] {
        let o = superpulse(&args, dir.path());
        assert_eq!(code(&o), 2);
        let err = String::from_utf8_lossy(&o.stderr);
        assert!(err.contains("params.n_atoms") && err.contains("c3"), "{err}");
    }
    let o = superpulse(&["run", "missing.json"], dir.path());
    assert_eq!(code(&o), 2);
    let good = write(dir.path(), "c.json", &small_config());
    let o = superpulse(&["run", &good, "--tol", "0.5"], dir.path());
    assert_eq!(code(&o), 2);
    let o = superpulse(&["scenario", "fig9"], dir.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn numerical_failures_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small_config();
    c["tolerances"] = json!({"trace_abort": 1e-300});
    let cfg = write(dir.path(), "c.json", &c);
    let o = superpulse(&["run", &cfg, "--out", "o"], dir.path());
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("trace"));

    let sweep = json!({"base": c, "n_atoms": [4, 6], "omega": [5.0]});
    let cfg = write(dir.path(), "s.json", &sweep);
    let o = superpulse(&["sweep", &cfg, "--out", "s"], dir.path());
    assert_eq!(code(&o), 3);
    assert!(dir.path().join("s/small_sweep.csv").exists());
}

#[test]
fn validate_prints_the_normalized_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", &small_config());
    let o = superpulse(&["validate", &cfg], dir.path());
    assert_eq!(code(&o), 0);
    let dump: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(dump["seed"], json!(0));
    let again = write(dir.path(), "again.json", &dump);
    let o2 = superpulse(&["validate", &again], dir.path());
    assert_eq!(o.stdout, o2.stdout);
}

#[test]
fn scenarios_are_listed_and_printable() {
    let dir = tempfile::tempdir().unwrap();
    let o = superpulse(&["--list-scenarios"], dir.path());
    assert_eq!(code(&o), 0);
    let listing = String::from_utf8_lossy(&o.stdout);
    for name in ["fig1c", "fig2-dissipative", "fig2-dispersive", "fig2-unitary", "fig3", "fig4", "fig5"] {
        assert!(listing.contains(name), "{name} not listed");
    }
    let o = superpulse(&["scenario", "fig4", "--print-config", "--seed", "5", "--tol", "1e-7"], dir.path());
    assert_eq!(code(&o), 0);
    let s: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(s["name"], json!("fig4"));
    assert_eq!(s["sweep"]["base"]["seed"], json!(5));
    assert_eq!(s["sweep"]["base"]["tolerances"]["ode"], json!(1e-7));
}

#[test]
fn seed_override_changes_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small_config();
    c["backend"] = json!("trajectories");
    c["observables"] = json!(["moments"]);
    c["trajectories"] = json!({"n_trajectories": 8});
    let cfg = write(dir.path(), "c.json", &c);
    let csv = |seed: &str, out: &str| {
        let o = superpulse(&["run", &cfg, "--seed", seed, "--threads", "2", "--out", out], dir.path());
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        fs::read(dir.path().join(out).join("small.csv")).unwrap()
    };
    assert_eq!(csv("1", "a"), csv("1", "b"));
    assert_ne!(csv("1", "a"), csv("2", "c"));
}
