//! End-to-end tests of the `lake` binary: file emission, manifest coverage,
//! config precedence, exit codes and byte-identical reproducibility.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn lake() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lake"))
}

fn tmp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("lake-cli-{tag}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    dir
}

fn run(args: &[&str]) -> Output {
    lake().args(args).output().expect("spawn lake")
}

fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn manifest(dir: &Path) -> serde_json::Value {
    let text = fs::read_to_string(dir.join("manifest.json")).expect("manifest.json");
    serde_json::from_str(&text).expect("valid manifest JSON")
}

#[test]
fn solve_emits_solution_files_and_complete_manifest() {
    let dir = tmp_dir("solve");
    let out = run(&["solve", "--n", "600", "--out", dir.to_str().unwrap()]);
    assert_success(&out);

    let csv = fs::read_to_string(dir.join("solution.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("x,V,dV,policy"));
    assert_eq!(lines.count(), 601, "one row per node");

    let sidecar: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("solution.json")).unwrap()).unwrap();
    assert!(sidecar["residual_norm"].as_f64().unwrap() <= 1e-10);
    assert!(sidecar["derived"]["big_a"].as_f64().unwrap() > 0.0);
    assert!(sidecar["derived"]["k_asymptotic"].is_number());

    // Every file in the directory is the manifest itself or listed in it.
    let m = manifest(&dir);
    let listed: Vec<String> = m["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    for entry in fs::read_dir(&dir).unwrap() {
        let name = entry.unwrap().file_name().into_string().unwrap();
        assert!(
            name == "manifest.json" || listed.contains(&name),
            "orphan output {name}"
        );
    }
    assert_eq!(m["command"], "solve");
    assert_eq!(m["config"]["n"], 600);
}

#[test]
fn reruns_are_byte_identical() {
    let dir_a = tmp_dir("rerun-a");
    let dir_b = tmp_dir("rerun-b");
    for dir in [&dir_a, &dir_b] {
        let out = run(&[
            "simulate",
            "--n",
            "400",
            "--horizon",
            "5",
            "--seed",
            "123",
            "--out",
            dir.to_str().unwrap(),
        ]);
        assert_success(&out);
    }
    let a = fs::read(dir_a.join("path.csv")).unwrap();
    let b = fs::read(dir_b.join("path.csv")).unwrap();
    assert_eq!(a, b, "path.csv differs between identical runs");

    for dir in [&dir_a, &dir_b] {
        let out = run(&["solve", "--n", "400", "--out", dir.to_str().unwrap()]);
        assert_success(&out);
    }
    let a = fs::read(dir_a.join("solution.csv")).unwrap();
    let b = fs::read(dir_b.join("solution.csv")).unwrap();
    assert_eq!(a, b, "solution.csv differs between identical runs");
}

#[test]
fn config_file_applies_and_cli_wins() {
    let dir = tmp_dir("config");
    fs::create_dir_all(&dir).unwrap();
    let cfg_path = dir.join("run.conf");
    fs::write(&cfg_path, "sigma = 0.2\nb = 0.8\nn = 500\n").unwrap();
    let out = run(&[
        "solve",
        "--config",
        cfg_path.to_str().unwrap(),
        "--sigma",
        "0.05",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_success(&out);
    let m = manifest(&dir);
    assert_eq!(m["config"]["params"]["sigma"], 0.05);
    assert_eq!(m["config"]["params"]["b"], 0.8);
    assert_eq!(m["config"]["n"], 500);
}

#[test]
fn unknown_config_key_is_exit_code_2_with_json_error() {
    let dir = tmp_dir("badkey");
    fs::create_dir_all(&dir).unwrap();
    let cfg_path = dir.join("run.conf");
    fs::write(&cfg_path, "b = 0.8\nsgima = 0.2\n").unwrap();
    let out = run(&[
        "solve",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    let err: serde_json::Value = serde_json::from_str(stderr.lines().last().unwrap()).unwrap();
    assert!(err["error"]["message"].as_str().unwrap().contains("sgima"));
}

#[test]
fn finiteness_violation_is_exit_code_2() {
    let dir = tmp_dir("finiteness");
    let out = run(&["verify", "--sigma", "2.0", "--out", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("finiteness"), "stderr: {stderr}");
}

#[test]
fn partial_sweep_is_exit_code_4_with_outputs() {
    let dir = tmp_dir("partial");
    // The second sigma violates the finiteness condition and must fail,
    // while the rest of the sweep completes.
    let out = run(&[
        "sweep",
        "--sweep",
        "sigma:0.1:2.0:2",
        "--n",
        "500",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(4));
    let csv = fs::read_to_string(dir.join("sweep.csv")).unwrap();
    assert!(csv.lines().count() > 1, "good point missing from sweep.csv");
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("sweep.json")).unwrap()).unwrap();
    assert_eq!(json["failed"], 1);
}

#[test]
fn sweep_without_spec_is_exit_code_2() {
    let dir = tmp_dir("nosweep");
    let out = run(&["sweep", "--out", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn density_emits_tables_and_sidecars() {
    let dir = tmp_dir("density");
    let out = run(&["density", "--n", "800", "--out", dir.to_str().unwrap()]);
    assert_success(&out);
    let csv = fs::read_to_string(dir.join("density.csv")).unwrap();
    assert!(csv.starts_with("x,f,F,I\n"));
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("density.json")).unwrap()).unwrap();
    assert_eq!(json["modes"].as_array().unwrap().len(), 2);
    assert!(dir.join("solution.csv").exists());
}

#[test]
fn escape_emits_per_sample_rows() {
    let dir = tmp_dir("escape");
    let out = run(&[
        "escape",
        "--n",
        "800",
        "--samples",
        "3",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_success(&out);
    let csv = fs::read_to_string(dir.join("escape.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("sample,time,normalized,censored"));
    assert_eq!(lines.count(), 3);
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("escape.json")).unwrap()).unwrap();
    assert_eq!(json["samples"], 3);
    assert!(json["ks_statistic"].is_number());
}

#[test]
fn verify_reports_stable_schema_and_passes() {
    let dir = tmp_dir("verify");
    let out = run(&[
        "verify",
        "--n",
        "800",
        "--paths",
        "200",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_success(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("[PASS]"), "stdout: {stdout}");
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("verify.json")).unwrap()).unwrap();
    assert_eq!(report["required_failed"], 0);
    let names: Vec<&str> = report["checks"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["name"].as_str().unwrap())
        .collect();
    for expected in [
        "finiteness_sigma_sq_below_rho_plus_2b",
        "newton_residual_norm",
        "boundary_identity",
        "v_plus_ax2_decreasing",
        "v0_upper_bound",
        "slope_uniformly_negative",
        "bounded_bracket_spread_stable",
        "uniform_slope_constant_stable",
        "asymptotic_closure_tail_residual",
        "density_normalized",
        "tail_exponent_relative_error",
        "small_x_limit_relative_error",
        "mc_cross_validation",
        "benchmark_feedback_dominated",
        "bounded_control_gap_lower",
        "bounded_control_gap_upper",
    ] {
        assert!(names.contains(&expected), "missing check {expected}");
    }

    // Same config, same schema.
    let dir2 = tmp_dir("verify2");
    let out2 = run(&[
        "verify",
        "--n",
        "800",
        "--paths",
        "200",
        "--out",
        dir2.to_str().unwrap(),
    ]);
    assert_success(&out2);
    let report2: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir2.join("verify.json")).unwrap()).unwrap();
    let names2: Vec<&str> = report2["checks"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["name"].as_str().unwrap())
        .collect();
    assert_eq!(names, names2, "verify schema changed between runs");
}
