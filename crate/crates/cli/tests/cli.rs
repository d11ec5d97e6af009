use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const COARSE: &str = "[grid]\ndx = 0.5\n";

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cournot-mfg"));
    for var in [
        "CMFG_CONFIG",
        "CMFG_OUT",
        "CMFG_JOBS",
        "CMFG_SEED",
        "CMFG_TOL",
        "CMFG_MAX_ITER",
    ] {
        cmd.env_remove(var);
    }
    cmd
}

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn run(args: &[&str], dir: &Path, config: &str) -> Output {
    let cfg = write_config(dir, config);
    bin()
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap()
}

fn stderr_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).unwrap()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn zero_production_curvature_is_a_field_level_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &["solve"],
        dir.path(),
        "[model]\nproduction_cost = { linear = 0.1, quadratic = 0.0 }\n",
    );
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_json(&out);
    assert_eq!(err["error"], "validation");
    assert_eq!(err["field"], "model.production_cost.quadratic");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn malformed_keys_report_their_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &["solve"],
        dir.path(),
        "[model.production_cost]\nquadratic = 1.0\n",
    );
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["field"], "model.production_cost");

    let out = run(&["solve"], dir.path(), "[grid]\nspacing = 0.5\n");
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["field"], "grid.spacing");
}

#[test]
fn fluid_limit_prints_the_closed_form_production() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["fluid", "--epsilon", "0"], dir.path(), COARSE);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.lines().any(|l| l == "Q_tilde_0 = 1.6"), "{stdout}");
    let m = manifest(&dir.path().join("out"));
    assert_eq!(m["command"], "fluid");
    assert_eq!(m["config"]["fluid"]["epsilon"], 0.0);
    assert_eq!(m["summary"]["closed_form"]["reserves"], 0.0);
}

#[test]
fn non_convergence_exits_with_two_and_the_residual_history() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["solve", "--max-iter", "3"], dir.path(), COARSE);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    assert_eq!(err["error"], "not_converged");
    assert_eq!(err["iterations"], 3);
    assert_eq!(err["residuals"].as_array().unwrap().len(), 2);
}

#[test]
fn environment_overrides_apply() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), COARSE);
    let out = bin()
        .arg("solve")
        .env("CMFG_CONFIG", &cfg)
        .env("CMFG_OUT", dir.path().join("env"))
        .env("CMFG_MAX_ITER", "3")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn solve_is_reproducible_from_its_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["solve"], dir.path(), COARSE);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let first = dir.path().join("out");
    let m = manifest(&first);
    assert!(m["iterations"].as_u64().unwrap() >= 2);
    assert_eq!(
        m["residuals"].as_array().unwrap().len() + 1,
        m["iterations"].as_u64().unwrap() as usize
    );
    assert!(m["timings"]["total"].as_f64().unwrap() >= 0.0);

    let again = dir.path().join("again");
    let out = bin()
        .arg("solve")
        .arg("--config")
        .arg(first.join("manifest.json"))
        .arg("--out")
        .arg(&again)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for file in ["aggregates.csv", "value.csv", "eta.csv", "residuals.csv"] {
        assert_eq!(
            std::fs::read(first.join(file)).unwrap(),
            std::fs::read(again.join(file)).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn aggregates_csv_has_a_fixed_header_and_lf_endings() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["transport"], dir.path(), COARSE);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = std::fs::read_to_string(dir.path().join("out/aggregates.csv")).unwrap();
    assert!(!text.contains('\r'));
    assert_eq!(text.lines().next(), Some("t,Q,A,R,pi,p"));
    let first: Vec<f64> = text
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    assert_eq!(first[0], 0.0);
    assert_eq!(first[5], 5.0 - first[1]);
}

#[test]
fn validate_records_the_generator_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let config =
        format!("{COARSE}[sim]\nn_particles = 2000\nn_paths = 200\n[validate]\nx0 = [5.0]\n");
    let out = run(&["validate", "--seed", "7"], dir.path(), &config);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let m = manifest(&dir.path().join("out"));
    assert_eq!(m["rng"]["algorithm"], "ChaCha8");
    assert_eq!(m["rng"]["seed"], 7);
    assert_eq!(m["config"]["sim"]["seed"], 7);
    let d = m["summary"]["sup_distance"].as_f64().unwrap();
    assert!(d > 0.0 && d < 0.2);
    assert_eq!(m["summary"]["policy_values"].as_array().unwrap().len(), 1);
}
