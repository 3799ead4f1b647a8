//! End-to-end tests driving the compiled binary.

use serde_json::{json, Value};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ggqmom"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_cfg(dir: &Path, name: &str, cfg: &Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

fn ou_config() -> Value {
    json!({
        "model": { "kind": "sde", "drift": [0, -1], "diffusion": [1], "sigma": 1.0 },
        "N": 4,
        "initializer": { "gauss_hermite": { "mean": 1.0, "variance": 0.5 } },
        "tEnd": 5.0,
        "samples": 21,
        "momentOrder": 4,
        "rngSeed": 42,
        "outputs": { "prefix": "ou" }
    })
}

fn ds_config() -> Value {
    json!({
        "model": {
            "kind": "mvsde",
            "effective_potential_deriv": [0, 0, 0, 1],
            "interaction_deriv": [0, 1],
            "theta": 1.0,
            "diffusion": [1],
            "sigma": 0.5
        },
        "N": 8,
        "outputs": { "prefix": "ds" }
    })
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<f64>> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let hash_line = lines.next().unwrap();
    assert!(
        hash_line.starts_with("# config_sha256=") && hash_line.len() > 70,
        "hash comment missing: {hash_line}"
    );
    lines.next().unwrap(); // header
    lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn simulate_ou_matches_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "ou.json", &ou_config());
    let out = run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));

    let rows = csv_rows(&dir.path().join("ou_trajectory.csv"));
    assert_eq!(rows.len(), 21);
    for row in &rows {
        let (t, m0, m1) = (row[0], row[1], row[2]);
        assert!((m0 - 1.0).abs() < 1e-9);
        assert!((m1 - (-t).exp()).abs() < 1e-6, "m1 at t={t}");
    }

    let manifest = read_json(&dir.path().join("ou_manifest.json"));
    assert_eq!(manifest["status"], "ok");
    assert_eq!(manifest["samplesWritten"], 21);
    assert_eq!(manifest["config"]["N"], 4);
    assert_eq!(
        manifest["configSha256"].as_str().unwrap().len(),
        64,
        "hex sha256"
    );
}

#[test]
fn identical_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "ou.json", &ou_config());
    for sub in ["a", "b"] {
        let out = run(&[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            dir.path().join(sub).to_str().unwrap(),
        ]);
        assert!(out.status.success());
    }
    for name in ["ou_trajectory.csv", "ou_manifest.json"] {
        let a = std::fs::read(dir.path().join("a").join(name)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name} not reproducible");
    }
}

#[test]
fn simulate_double_well_negative_init_keeps_negative_mean() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ds_config();
    cfg["initializer"] = json!({ "gauss_hermite": { "mean": -0.1, "variance": 0.1 } });
    cfg["tEnd"] = json!(20.0);
    cfg["samples"] = json!(11);
    cfg["momentOrder"] = json!(2);
    let path = write_cfg(dir.path(), "ds.json", &cfg);
    let out = run(&[
        "simulate",
        "--config",
        path.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let rows = csv_rows(&dir.path().join("ds_trajectory.csv"));
    let final_m1 = rows.last().unwrap()[2];
    assert!(
        final_m1 < -0.8,
        "mean should settle in the negative well, got {final_m1}"
    );
}

#[test]
fn missing_sigma_is_named_in_the_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ou_config();
    cfg["model"].as_object_mut().unwrap().remove("sigma");
    let path = write_cfg(dir.path(), "bad.json", &cfg);
    let out = run(&[
        "simulate",
        "--config",
        path.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("sigma"), "{}", stderr(&out));
}

#[test]
fn unknown_config_field_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ou_config();
    cfg["bogusKey"] = json!(1);
    let path = write_cfg(dir.path(), "bad.json", &cfg);
    let out = run(&[
        "simulate",
        "--config",
        path.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("bogusKey"), "{}", stderr(&out));
}

#[test]
fn explicit_initializer_must_match_n() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ou_config();
    cfg["initializer"] = json!({ "explicit": { "nodes": [-1.0, 1.0], "weights": [0.5, 0.5] } });
    let path = write_cfg(dir.path(), "bad.json", &cfg);
    let out = run(&[
        "simulate",
        "--config",
        path.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("N = 4"), "{}", stderr(&out));
}

#[test]
fn colliding_seed_nodes_fail_validation() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ou_config();
    cfg["N"] = json!(2);
    cfg["initializer"] = json!({ "explicit": { "nodes": [0.5, 0.5], "weights": [0.5, 0.5] } });
    let path = write_cfg(dir.path(), "bad.json", &cfg);
    let out = run(&[
        "stationary",
        "--config",
        path.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn anti_confining_model_fails_validation_without_force() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ou_config();
    cfg["model"]["drift"] = json!([0, 1]);
    let path = write_cfg(dir.path(), "bad.json", &cfg);
    let out = run(&[
        "simulate",
        "--config",
        path.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("confinement"), "{}", stderr(&out));
}

#[test]
fn stationary_ou_recovers_the_hermite_rule() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "ou.json", &ou_config());
    let out = run(&[
        "stationary",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let sol = read_json(&dir.path().join("ou_solution.json"));
    assert_eq!(sol["status"], "ok");
    assert_eq!(sol["solution"]["converged"], true);
    let nodes: Vec<f64> = sol["solution"]["measure"]["nodes"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    let expected = [
        -1.6506801238857845,
        -0.7419637843027258 / std::f64::consts::SQRT_2,
        0.7419637843027258 / std::f64::consts::SQRT_2,
        1.6506801238857845,
    ];
    for (got, want) in nodes.iter().zip(&expected) {
        assert!((got - want).abs() < 1e-8, "{got} vs {want}");
    }
    // plain SDE: no stability probe in the output
    assert!(sol.get("probe").is_none());
}

#[test]
fn stationary_symmetric_flag_with_probe_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ds_config();
    cfg["symmetric"] = json!(true);
    let path = write_cfg(dir.path(), "ds.json", &cfg);
    let out = run(&[
        "stationary",
        "--config",
        path.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let sol = read_json(&dir.path().join("ds_solution.json"));
    let m1 = sol["solution"]["measure"]["nodes"]
        .as_array()
        .unwrap()
        .iter()
        .zip(sol["solution"]["measure"]["weights"].as_array().unwrap())
        .map(|(x, w)| x.as_f64().unwrap() * w.as_f64().unwrap())
        .sum::<f64>();
    assert!(m1.abs() < 1e-9);
    // below the transition the symmetric branch fails the probe
    assert_eq!(sol["probe"]["verdict"], "unstable");
}

#[test]
fn stationary_nonconvergence_exits_3_with_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ou_config();
    cfg["tol"] = json!(1e-30);
    let path = write_cfg(dir.path(), "ou.json", &cfg);
    let out = run(&[
        "stationary",
        "--config",
        path.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let sol = read_json(&dir.path().join("ou_solution.json"));
    assert_eq!(sol["status"], "nonConvergence");
    assert!(sol["solution"]["residual_norm"].as_f64().unwrap() >= 0.0);
}

#[test]
fn simulate_abort_exits_2_and_records_partial_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ou_config();
    cfg["integrator"] = json!({ "max_steps": 3 });
    let path = write_cfg(dir.path(), "ou.json", &cfg);
    let out = run(&[
        "simulate",
        "--config",
        path.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let manifest = read_json(&dir.path().join("ou_manifest.json"));
    assert_eq!(manifest["status"], "aborted");
    assert!(manifest["abortReason"].as_str().unwrap().contains("budget"));
}

#[test]
fn bifurcate_brackets_the_critical_noise() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ds_config();
    cfg["sigmaGrid"] = json!([1.1, 1.0, 0.9, 0.8, 0.7, 0.6, 0.5]);
    cfg["tol"] = json!(1e-10);
    let path = write_cfg(dir.path(), "ds.json", &cfg);
    let out = run(&[
        "bifurcate",
        "--config",
        path.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let diagram = read_json(&dir.path().join("ds_diagram.json"));
    let sc = diagram["criticalSigma"].as_f64().unwrap();
    assert!((0.92..=1.02).contains(&sc), "critical sigma {sc}");
    let bracket = diagram["criticalBracket"].as_array().unwrap();
    assert!(bracket[0].as_f64().unwrap() <= sc && sc <= bracket[1].as_f64().unwrap());
    let csv = std::fs::read_to_string(dir.path().join("ds_diagram.csv")).unwrap();
    assert!(csv.starts_with("# config_sha256="));
    let rows = csv.lines().skip(2).filter(|l| !l.is_empty()).count();
    assert_eq!(
        rows,
        diagram["diagram"]["entries"].as_array().unwrap().len()
    );
}

#[test]
fn bifurcate_above_the_transition_has_no_cluster_branches() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ds_config();
    cfg["sigmaGrid"] = json!([1.4, 1.3, 1.2]);
    let path = write_cfg(dir.path(), "ds.json", &cfg);
    let out = run(&[
        "bifurcate",
        "--config",
        path.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let diagram = read_json(&dir.path().join("ds_diagram.json"));
    assert!(diagram["criticalSigma"].is_null());
    assert!(diagram.get("criticalBracket").is_none());
    for entry in diagram["diagram"]["entries"].as_array().unwrap() {
        assert_eq!(entry["branch"], "symmetric");
    }
    assert!(!diagram["diagram"]["skipped"].as_array().unwrap().is_empty());
}

#[test]
fn bifurcate_requires_a_sigma_grid() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_cfg(dir.path(), "ds.json", &ds_config());
    let out = run(&[
        "bifurcate",
        "--config",
        path.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("sigmaGrid"), "{}", stderr(&out));
}

#[test]
fn bifurcate_rejects_plain_sde_models() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ou_config();
    cfg["sigmaGrid"] = json!([1.0, 0.5]);
    let path = write_cfg(dir.path(), "ou.json", &cfg);
    let out = run(&[
        "bifurcate",
        "--config",
        path.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("mean-field"), "{}", stderr(&out));
}

#[test]
fn check_suite_passes_on_ou() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "ou.json", &ou_config());
    let out = run(&[
        "check",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report = read_json(&dir.path().join("ou_check.json"));
    assert_eq!(report["allPassed"], true);
    let names: Vec<&str> = report["checks"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["name"].as_str().unwrap())
        .collect();
    for expected in [
        "model_validation",
        "galerkin_consistency",
        "mass_conservation",
        "node_ordering",
        "parity",
        "stationary_residual",
        "oracle_closed_form",
        "oracle_particles",
    ] {
        assert!(names.contains(&expected), "missing check {expected}");
    }
}

#[test]
fn check_suite_fails_on_anti_confining_model() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ou_config();
    cfg["model"]["drift"] = json!([0, 1]);
    let path = write_cfg(dir.path(), "bad.json", &cfg);
    let out = run(&[
        "check",
        "--config",
        path.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let report = read_json(&dir.path().join("ou_check.json"));
    assert_eq!(report["allPassed"], false);
    let validation = report["checks"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["name"] == "model_validation")
        .unwrap();
    assert_eq!(validation["passed"], false);
}

#[test]
fn check_on_double_well_satisfies_moment_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ds_config();
    cfg["model"]["sigma"] = json!(1.0);
    let path = write_cfg(dir.path(), "ds.json", &cfg);
    let out = run(&[
        "check",
        "--config",
        path.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report = read_json(&dir.path().join("ds_check.json"));
    let bounds = report["checks"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["name"] == "moment_bounds")
        .unwrap();
    assert_eq!(bounds["passed"], true);
    assert_eq!(bounds["skipped"], false);
}

#[test]
fn format_json_skips_the_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "ou.json", &ou_config());
    let out = run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--format",
        "json",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(!dir.path().join("ou_trajectory.csv").exists());
    assert!(dir.path().join("ou_manifest.json").exists());
}

#[test]
fn worker_count_does_not_change_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "ou.json", &ou_config());
    for (sub, jobs) in [("a", "1"), ("b", "4")] {
        let out = run(&[
            "check",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            dir.path().join(sub).to_str().unwrap(),
            "--jobs",
            jobs,
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let a = std::fs::read(dir.path().join("a/ou_check.json")).unwrap();
    let b = std::fs::read(dir.path().join("b/ou_check.json")).unwrap();
    assert_eq!(a, b, "report depends on worker count");
}
