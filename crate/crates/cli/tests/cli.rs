use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn kwk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kwk"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

const TINY: &str = r#"{
  "grid": {"dims": [12, 12], "spacing": [1e-3, 1e-3]},
  "media": {"rho0": 1000, "c0": 1500, "b_over_a": 5,
            "rho0_phantom": {"kind": "random-smooth", "amplitude": 0.1, "max_mode": 2, "seed": 3}},
  "absorption": {"alpha0_db": 0.5, "y": 1.5},
  "solver": {"dt": 1e-7, "t_end": 1e-6, "n_modes": 40},
  "sources": [{"center": [0.004, 0.006], "width": 0.001,
               "signal": {"kind": "tone", "amplitude": 1e6, "frequency": 2.5e5}}],
  "probes": [[0.008, 0.006]],
  "stride": 5,
  "seed": 9
}"#;

const SWEEP_1D: &str = r#"{
  "grid": {"dims": [24], "spacing": [0.0417]},
  "media": {"rho0": 1, "c0": 1, "b_over_a": 4},
  "absorption": {"alpha0": 0.001, "y": 2.5, "tau": 1, "eta": 1},
  "solver": {"dt": 0.01, "t_end": 0.2, "n_modes": 23},
  "initial": {"center": [0.4], "width": 0.1, "amplitude": 0.01},
  "sweep": {"mus": [1e-2, 1e-3]}
}"#;

#[test]
fn check_invariants_on_default_config_passes() {
    let out = kwk(&["--json", "check", "invariants"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let checks = v["checks"].as_array().unwrap();
    assert_eq!(checks.len(), 4);
    assert!(checks.iter().all(|c| c["pass"] == true));
}

#[test]
fn missing_config_exits_1_with_path() {
    let out = kwk(&["simulate", "/definitely/not/here.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/definitely/not/here.json"));
}

#[test]
fn convert_alpha() {
    let out = kwk(&["convert", "alpha", "--db", "0", "--y", "1.5"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "0");
    let out = kwk(&["--json", "convert", "alpha", "--db", "0.5", "--y", "1.5"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["alpha0"].as_f64().unwrap(), 3.6549410507852274e-10);
    let out = kwk(&["convert", "alpha", "--db", "0.5", "--y", "3.5"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn invalid_config_lists_violations() {
    let dir = tempfile::tempdir().unwrap();
    let bad = TINY.replace("\"y\": 1.5", "\"y\": 3.5").replace("\"rho0\": 1000", "\"rho0\": -5");
    let path = write(dir.path(), "bad.json", &bad);
    let out = kwk(&["simulate", &path]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("y out of (1,3)") && err.contains("media.rho0"), "{err}");
}

#[test]
fn simulate_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "tiny.json", TINY);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for d in [&a, &b] {
        let out = kwk(&["simulate", &cfg, "--out", d.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let mut compared = 0;
    for entry in walk(&a) {
        let rel = entry.strip_prefix(&a).unwrap();
        if rel == Path::new("metadata.json") {
            continue;
        }
        assert_eq!(fs::read(&entry).unwrap(), fs::read(b.join(rel)).unwrap(), "{rel:?} differs");
        compared += 1;
    }
    // config, energy, probes, summary, and 3 stored states × 2 fields × 2 files
    assert_eq!(compared, 4 + 12);
    let energy = fs::read_to_string(a.join("energy.csv")).unwrap();
    assert!(energy.starts_with("t [s],E [model units],D [model units],L_monitor [1],residual"));
    assert!(fs::read_to_string(a.join("probes.csv")).unwrap().starts_with("t [s],probe0 [Pa]"));
    let side: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.join("snapshots/sigma_00001.json")).unwrap()).unwrap();
    assert_eq!(side["dims"], serde_json::json!([12, 12]));
    assert_eq!(side["dtype"], "f64le");
    assert_eq!(fs::metadata(a.join("snapshots/sigma_00001.f64")).unwrap().len(), 144 * 8);
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

#[test]
fn degenerate_data_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let text = SWEEP_1D.replace("\"amplitude\": 0.01", "\"amplitude\": -5.0");
    let cfg = write(dir.path(), "deg.json", &text);
    let out = kwk(&["simulate", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn viscosity_sweep_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "sweep.json", SWEEP_1D);
    let o = dir.path().join("o");
    let out = kwk(&["--json", "sweep", "viscosity", &cfg, "--out", o.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(o.join("sweep_report.csv")).unwrap();
    assert!(csv.starts_with("mu [Pa s],"));
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn ring_experiment_writes_spectra() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TINY.replace(
        "\"seed\": 9",
        r#""seed": 9, "experiment": {"preset": "desk", "overrides": {"cells": 24, "h": 3e-3, "ring_radius": 0.025, "steps": 10, "n_modes": 120, "element_width": 3e-3, "blob_width": 0.01}}"#,
    );
    let path = write(dir.path(), "ring.json", &cfg);
    let o = dir.path().join("o");
    let out = kwk(&["experiment", "ring", &path, "--out", o.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["traces_linear.csv", "traces_nonlinear.csv", "singular_values_linear.csv", "singular_values_nonlinear.csv"] {
        assert!(o.join(f).exists(), "{f}");
    }
    let sv = fs::read_to_string(o.join("singular_values_linear.csv")).unwrap();
    assert!(sv.starts_with("index [-],value [Pa],normalized [1]"));
    let traces = fs::read_to_string(o.join("traces_linear.csv")).unwrap();
    // 64 rows × 11 samples + header
    assert_eq!(traces.lines().count(), 64 * 11 + 1);
}
