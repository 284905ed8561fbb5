use std::path::Path;
use std::process::{Command, Output};

use jumpepr_core::builtin;
use serde_json::Value;

fn jumpepr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jumpepr"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| {
        panic!(
            "bad stdout ({e}): {}\nstderr: {}",
            String::from_utf8_lossy(&o.stdout),
            String::from_utf8_lossy(&o.stderr)
        )
    })
}

fn write_example1(dir: &Path) -> (String, String) {
    let b = builtin::example1_on(jumpepr_core::Grid::new_1d(-8.0, 8.0, 161).unwrap()).unwrap();
    let spec = dir.join("ex1.json");
    std::fs::write(&spec, serde_json::to_string_pretty(&b.spec.to_document()).unwrap()).unwrap();
    let rho = dir.join("gibbs.csv");
    b.stationary.save_csv(&rho).unwrap();
    (spec.to_string_lossy().into(), rho.to_string_lossy().into())
}

#[test]
fn epr_prints_the_four_fields() {
    let tmp = tempfile::tempdir().unwrap();
    let (spec, rho) = write_example1(tmp.path());
    let out = tmp.path().join("o");
    let o = jumpepr(&["epr", "--spec", &spec, "--density", &rho, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = stdout_json(&o);
    for k in ["ep_local", "ep_nonlocal", "ep_total", "skipped_mass"] {
        assert!(v[k].is_number(), "missing {k}");
    }
    assert!(v["ep_total"].as_f64().unwrap().abs() < 1e-10);
    assert!(out.join("run_manifest.json").exists());
}

#[test]
fn unknown_command_is_a_usage_error() {
    let o = jumpepr(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn unreadable_spec_exits_with_error_json() {
    let tmp = tempfile::tempdir().unwrap();
    let o = jumpepr(&[
        "epr",
        "--spec",
        "/nonexistent/spec.json",
        "--density",
        "/nonexistent/rho.csv",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let err: Value = serde_json::from_slice(o.stderr.trim_ascii()).unwrap();
    assert_eq!(err["error"], "io");
}

#[test]
fn unknown_family_reports_the_key_path() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tmp.path().join("bad.json");
    std::fs::write(&spec, r#"{"dim":1,"drift":{"family":"wobbly"}}"#).unwrap();
    let o = jumpepr(&[
        "check-reversibility",
        "--spec",
        spec.to_str().unwrap(),
        "--out",
        tmp.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("drift"));
}

#[test]
fn oversized_time_step_is_a_numerical_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let o = jumpepr(&[
        "solve-fpe",
        "--spec",
        "builtin:example1",
        "--dt",
        "0.1",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let err: Value = serde_json::from_slice(o.stderr.trim_ascii()).unwrap();
    assert_eq!(err["error"], "stability");
}

#[test]
fn check_reversibility_on_example_one() {
    let tmp = tempfile::tempdir().unwrap();
    let (spec, _) = write_example1(tmp.path());
    let out = tmp.path().join("o");
    let o = jumpepr(&[
        "check-reversibility",
        "--spec",
        &spec,
        "--grid-points",
        "161",
        "--t-final",
        "12",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = stdout_json(&o);
    assert_eq!(v["verdict_consistent"], true);
    assert_eq!(v["reversible"], true);
    assert!(out.join("reversibility_report.json").exists());
}

#[test]
fn check_reversibility_on_rotational_ou() {
    let tmp = tempfile::tempdir().unwrap();
    let o = jumpepr(&[
        "check-reversibility",
        "--spec",
        "builtin:rotational_ou",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = stdout_json(&o);
    assert_eq!(v["verdict_consistent"], true);
    assert_eq!(v["reversible"], false);
}

fn manifest_matches_files(dir: &Path) {
    use sha2::{Digest, Sha256};
    let m: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("run_manifest.json")).unwrap()).unwrap();
    let files = m["files"].as_array().unwrap();
    assert!(!files.is_empty());
    for f in files {
        let bytes = std::fs::read(dir.join(f["path"].as_str().unwrap())).unwrap();
        assert_eq!(f["sha256"].as_str().unwrap(), hex::encode(Sha256::digest(&bytes)));
    }
}

#[test]
fn simulate_is_deterministic_and_manifested() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = tmp.path().join(name);
        let o = jumpepr(&[
            "simulate",
            "--spec",
            "builtin:example1",
            "--paths",
            "8",
            "--t-final",
            "0.5",
            "--dt",
            "0.01",
            "--x0",
            "3",
            "--seed",
            "11",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let (a, b) = (run("a"), run("b"));
    for i in 0..8 {
        let name = format!("paths/path_{i}.csv");
        assert_eq!(std::fs::read(a.join(&name)).unwrap(), std::fs::read(b.join(&name)).unwrap());
    }
    manifest_matches_files(&a);
}

#[test]
fn solve_fpe_writes_snapshots_and_series() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let o = jumpepr(&[
        "solve-fpe",
        "--spec",
        "builtin:reversible_ou",
        "--t-final",
        "0.5",
        "--init-mean",
        "1",
        "--format",
        "json",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("fpe/rho_t5.csv").exists());
    let s: Value = serde_json::from_str(&std::fs::read_to_string(out.join("thermo_series.json")).unwrap()).unwrap();
    assert_eq!(s["times"].as_array().unwrap().len(), 6);
    manifest_matches_files(&out);
}

#[test]
fn reversal_kl_on_example_one_is_near_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let (spec, rho) = write_example1(tmp.path());
    let o = jumpepr(&[
        "reversal-kl",
        "--spec",
        &spec,
        "--density",
        &rho,
        "--paths",
        "50",
        "--t-final",
        "1",
        "--dt",
        "0.01",
        "--out",
        tmp.path().join("o").to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = stdout_json(&o);
    assert!(v["epr"].as_f64().unwrap().abs() < 1e-6, "{v}");
}

#[test]
fn example1_pipeline_on_a_coarse_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let o = jumpepr(&["example1", "--grid-points", "161", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = stdout_json(&o);
    assert!((v["epr0_local"].as_f64().unwrap() - 9.0).abs() < 0.45);
    for f in ["density_evolution.csv", "thermo_series.csv", "reversibility_report.json", "summary.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn example1_checks_fail_on_a_short_horizon() {
    let tmp = tempfile::tempdir().unwrap();
    let o = jumpepr(&[
        "example1",
        "--grid-points",
        "161",
        "--t-final",
        "0.5",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let err: Value = serde_json::from_slice(o.stderr.trim_ascii()).unwrap();
    assert_eq!(err["error"], "check_failed");
}

#[test]
fn example2_pipeline_on_a_small_configuration() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let o = jumpepr(&[
        "example2",
        "--alpha",
        "1.5",
        "--grid-points",
        "401",
        "--paths",
        "20",
        "--t-final",
        "1",
        "--dt",
        "0.01",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = stdout_json(&o);
    let a = &v["alphas"][0];
    assert!(a["epr"].as_f64().unwrap() > 0.9);
    assert_eq!(a["reversible"], false);
    assert!(out.join("rho_ss_alpha1.5.csv").exists());
    assert!(out.join("epr_series_alpha1.5.csv").exists());
}
