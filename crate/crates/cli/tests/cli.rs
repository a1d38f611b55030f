use std::path::Path;
use std::process::{Command, Output};

use ness_kinetic::velocity_space::read_snapshot;
use serde_json::{json, Value};

/// Small grid shared by the end-to-end runs.
fn small(scenario: &str, out: &Path) -> Value {
    json!({
        "scenario": scenario,
        "output_dir": out,
        "seed": 3,
        "geometry": {"type": "slab", "L": 1.0, "cells": 8},
        "grid": {"n_per_axis": 8, "v_max": 5.0, "n_polar": 4, "n_azimuth": 8},
        "solver": {"dt": 0.1, "T": 2.0},
        "steady": {"budget_samples": 0}
    })
}

fn merge(mut a: Value, b: Value) -> Value {
    if let (Value::Object(x), Value::Object(y)) = (&mut a, b) {
        for (k, v) in y {
            match (x.get_mut(&k), v) {
                (Some(Value::Object(inner)), Value::Object(add)) => inner.extend(add),
                (_, v) => {
                    x.insert(k, v);
                }
            }
        }
    }
    a
}

fn ness(args: &[&str], cfg: &Value, dir: &Path, env: &[(&str, &str)]) -> Output {
    let path = dir.join(format!("config-{}.json", std::process::id()));
    std::fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ness"));
    cmd.args(args).arg(&path);
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn report(out: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap()
}

#[test]
fn conservation_audit_on_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = ness(&["run"], &json!({"scenario": "conservation-audit", "output_dir": out}), dir.path(), &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&out);
    assert_eq!(r["passed"], json!(true));
    assert!(r["metrics"]["q_moment_defect"].as_f64().unwrap() <= 1e-12);
    assert!(r["metrics"]["wall_flux_with_psi"].as_f64().unwrap() <= 1e-10);
    assert_eq!(r["config"]["grid"]["n_per_axis"], json!(16));
    assert!(out.join("series.csv").exists());
}

#[test]
fn isothermal_evolution_decays_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let cfg = merge(small("evolve", &out), json!({"wall": {"theta0": 0.0}, "evolve": {"snapshot_every": 5}}));
        let o = ness(&["run"], &cfg, dir.path(), &[]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let r = report(&out);
        assert!(r["metrics"]["fitted_rate"].as_f64().unwrap() > 0.0, "{}", r["metrics"]);
        assert_eq!(r["config"]["wall"]["theta0"], json!(0.0));
        let files: Vec<&str> = r["files"].as_array().unwrap().iter().map(|f| f.as_str().unwrap()).collect();
        assert!(files.contains(&"snapshots/step_000010.csv") && files.contains(&"snapshots/step_000020.json"));
        let series = std::fs::read(out.join("series.csv")).unwrap();
        assert!(String::from_utf8_lossy(&series).starts_with("t,norm_H,norm_Linf\n"));
        csv.push((series, std::fs::read(out.join("snapshots/step_000020.csv")).unwrap()));
    }
    assert!(csv[0] == csv[1], "outputs differ between identical runs");
}

#[test]
fn ness_writes_report_and_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ness");
    let cfg = merge(small("ness", &out), json!({"wall": {"theta0": 0.05, "theta_profile": {"left": 0.05, "right": -0.03}}}));
    let o = ness(&["run"], &cfg, dir.path(), &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&out);
    let m = &r["metrics"];
    assert!(m["residual"].as_f64().unwrap() <= 1e-7);
    assert!(m["distance_to_maxwellian"].as_f64().unwrap() > 0.0);
    assert_eq!(m["energy_monotone"], json!(true));
    let (f, meta) = read_snapshot(&out.join("snapshots/ness.csv")).unwrap();
    assert_eq!(meta.field, "F - M");
    assert_eq!(meta.theta0, 0.05);
    assert_eq!(f.n_cells(), 8);
    assert!(f.mass().abs() < 1e-10);
}

#[test]
fn ness_scaling_does_not_depend_on_the_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = Vec::new();
    for threads in ["1", "3"] {
        let out = dir.path().join(threads);
        let o = ness(&["run"], &small("ness-scaling", &out), dir.path(), &[("NESS_THREADS", threads)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let r = report(&out);
        assert_eq!(r["threads"].as_u64().unwrap().to_string(), threads);
        let e = r["metrics"]["exponent"].as_f64().unwrap();
        assert!((e - 1.0).abs() < 0.05, "exponent {e}");
        csv.push(std::fs::read(out.join("series.csv")).unwrap());
    }
    assert_eq!(csv[0], csv[1]);
}

#[test]
fn hypo_audit_report_shape() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("audit");
    let cfg = merge(small("hypo-audit", &out), json!({"audit": {"nx": 4, "ny": 4, "samples": 20}}));
    let o = ness(&["run"], &cfg, dir.path(), &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = &report(&out)["metrics"];
    for key in ["c_low", "c_high", "kappa_hat", "kappa_prime_hat", "rows"] {
        assert!(!m[key].is_null(), "missing {key}");
    }
    assert_eq!(m["rows"].as_array().unwrap().len(), 20);
    // the top-level seed wins over the audit block
    assert_eq!(report(&out)["config"]["audit"]["seed"], json!(3));
}

#[test]
fn validate_reports_findings() {
    let dir = tempfile::tempdir().unwrap();
    let clean = ness(&["validate"], &json!({"scenario": "ness"}), dir.path(), &[]);
    assert!(clean.status.success());
    assert_eq!(serde_json::from_slice::<Value>(&clean.stdout).unwrap(), json!([]));

    let bad = ness(&["validate"], &json!({"scenario": "ness", "wall": {"theta0": 0.1}, "weight": {"zeta": 0.6}}), dir.path(), &[]);
    assert!(!bad.status.success());
    let d: Value = serde_json::from_slice(&bad.stdout).unwrap();
    assert_eq!(d[0]["key"], json!("weight.zeta"));
    assert!(d[0]["message"].as_str().unwrap().contains("0.4545"));

    let hot = ness(&["validate"], &json!({"scenario": "evolve", "wall": {"theta0": 0.2}}), dir.path(), &[]);
    let d: Value = serde_json::from_slice(&hot.stdout).unwrap();
    assert!(d.as_array().unwrap().iter().any(|x| x["key"] == "wall.theta0" && x["message"].as_str().unwrap().contains("1/8")));

    // run refuses the same config before computing anything
    let refused = ness(&["run"], &json!({"scenario": "evolve", "wall": {"theta0": 0.2}, "output_dir": dir.path().join("x")}), dir.path(), &[]);
    assert!(!refused.status.success());
    assert!(!dir.path().join("x").exists());
}

#[test]
fn malformed_config_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    for (cfg, key) in [
        (json!({"scenario": "ness", "solver": {"dt": "fast"}}), "solver.dt"),
        (json!({"scenario": "ness", "grid": {"n_per_axs": 8}}), "grid.n_per_axs"),
        (json!({"scenario": "sweep"}), "scenario"),
    ] {
        for cmd in ["run", "validate"] {
            let o = ness(&[cmd], &cfg, dir.path(), &[]);
            assert_eq!(o.status.code(), Some(2));
            let err: Value = serde_json::from_slice(&o.stderr).unwrap();
            assert_eq!(err["key"], json!(key), "{err}");
        }
    }
}

#[test]
fn shipped_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut n = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let o = Command::new(env!("CARGO_BIN_EXE_ness")).arg("validate").arg(&path).output().unwrap();
        assert!(o.status.success(), "{}: {}", path.display(), String::from_utf8_lossy(&o.stdout));
        n += 1;
    }
    assert_eq!(n, 6);
}
