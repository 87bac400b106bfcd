//! Exit codes and files of the `sdelab` binary.

use std::path::Path;
use std::process::{Command, Output};

fn sdelab(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sdelab"))
        .args(args)
        .arg("--out-dir")
        .arg(out)
        .env_remove("SDELAB_SEED")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn spec_file(dir: &Path, body: &str) -> String {
    let p = dir.join("spec.json");
    std::fs::write(&p, body).unwrap();
    p.display().to_string()
}

const SMALL: &str = r#"{
    "schema": 1, "name": "small",
    "landscape": {"kind": "quadratic", "hessian": {"isotropic": {"dim": 3, "scale": 1.0}}},
    "optimizer": "dsgd",
    "cluster": {"agents": 2, "eta": 0.1, "steps": 30, "x0": 1.0},
    "noise": {"kind": "gaussian", "sigma": 0.1},
    "paths": 40,
    "comparison": {"bound": "dsgd-pl"}
}"#;

#[test]
fn phases_prints_gaussian_constants() {
    let dir = tempfile::tempdir().unwrap();
    let o = sdelab(&["phases", "--nu", "inf", "--eps", "0.01"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("psi = 2.5758"), "{text}");
    assert!(text.contains(&format!("ell = {}", (2.0 / std::f64::consts::PI).sqrt())), "{text}");
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = sdelab(&["frobnicate"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(sdelab(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn invalid_spec_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = spec_file(dir.path(), &SMALL.replace("\"paths\": 40", "\"paths\": 40, \"pathz\": 1"));
    let o = sdelab(&["run", &bad], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("pathz"));
    assert_eq!(sdelab(&["run", "no-such-spec"], dir.path()).status.code(), Some(1));
}

#[test]
fn run_writes_identical_csv_for_one_seed() {
    let dir = tempfile::tempdir().unwrap();
    let spec = spec_file(dir.path(), SMALL);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(sdelab(&["run", &spec, "--threads", "1"], &a).status.code(), Some(0));
    assert_eq!(sdelab(&["run", &spec, "--threads", "3"], &b).status.code(), Some(0));
    let x = std::fs::read(a.join("small.csv")).unwrap();
    assert_eq!(x, std::fs::read(b.join("small.csv")).unwrap());
    assert!(String::from_utf8_lossy(&x).starts_with("step,time,loss_gap_mean,loss_gap_var,loss_gap_stderr\n"));
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(a.join("small.summary.json")).unwrap()).unwrap();
    assert_eq!(summary["paths"], 40);
    let c = dir.path().join("c");
    assert_eq!(sdelab(&["run", &spec, "--seed", "9"], &c).status.code(), Some(0));
    assert_ne!(x, std::fs::read(c.join("small.csv")).unwrap());
}

#[test]
fn seed_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let spec = spec_file(dir.path(), SMALL);
    let run = |seed: &str, sub: &str| {
        let out = dir.path().join(sub);
        let o = Command::new(env!("CARGO_BIN_EXE_sdelab"))
            .args(["run", &spec, "--out-dir"])
            .arg(&out)
            .env("SDELAB_SEED", seed)
            .output()
            .unwrap();
        assert_eq!(o.status.code(), Some(0));
        std::fs::read(out.join("small.csv")).unwrap()
    };
    assert_eq!(run("5", "e"), {
        let out = dir.path().join("f");
        assert_eq!(sdelab(&["run", &spec, "--seed", "5"], &out).status.code(), Some(0));
        std::fs::read(out.join("small.csv")).unwrap()
    });
}

#[test]
fn divergence_preset_reports_diverged_paths() {
    let dir = tempfile::tempdir().unwrap();
    let o = sdelab(&["--paths-scale", "0.1", "run", "presets/fig-divergence"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let index = std::fs::read_to_string(dir.path().join("fig-divergence.runs.csv")).unwrap();
    let k1 = index.lines().find(|l| l.starts_with("fig-divergence-k-1,")).unwrap();
    let diverged: usize = k1.split(',').nth(2).unwrap().parse().unwrap();
    assert!(diverged > 0, "{index}");
}

#[test]
fn bounds_pass_and_fail_with_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let spec = spec_file(dir.path(), SMALL);
    assert_eq!(sdelab(&["bounds", &spec], dir.path()).status.code(), Some(0));
    assert!(dir.path().join("small.bounds.csv").exists());
    // a slack far below one cannot hold at the first step
    let tight = spec_file(dir.path(), &SMALL.replace("\"bound\": \"dsgd-pl\"", "\"bound\": \"dsgd-pl\", \"slack\": 0.5"));
    assert_eq!(sdelab(&["bounds", &tight], dir.path()).status.code(), Some(2));
}

#[test]
fn scaling_residual_sets_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(sdelab(&["scaling", "fig-scaling-dsignsgd"], dir.path()).status.code(), Some(0));
    let o = sdelab(&["scaling", "fig-scaling-dsignsgd", "--alpha", "0.5"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("FAIL"));
    let pinned = sdelab(&["scaling", "fig-scaling-dcsgd", "--kappa", "3"], dir.path());
    assert_eq!(pinned.status.code(), Some(1));
}

#[test]
fn stationary_and_weak_error_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let o = sdelab(&["--paths-scale", "0.01", "stationary", "fig-stationary-dcsgd", "--rel-tol", "1e-9"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stdout(&o));
    let o = sdelab(&["--paths-scale", "0.02", "validate-sde", "fig-weak-dsgd", "--etas", "0.1,0.05"], dir.path());
    assert!(matches!(o.status.code(), Some(0 | 2)));
    assert!(std::fs::read_to_string(dir.path().join("fig-weak-dsgd.weak.csv")).unwrap().starts_with("eta,error,noise_floor\n"));
    let one = sdelab(&["validate-sde", "fig-weak-dsgd", "--etas", "0.1"], dir.path());
    assert_eq!(one.status.code(), Some(1));
}

#[test]
fn list_presets_names_every_file() {
    let dir = tempfile::tempdir().unwrap();
    let o = sdelab(&["list-presets"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let listed = stdout(&o);
    let presets = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets");
    for entry in std::fs::read_dir(presets).unwrap() {
        let name = entry.unwrap().path().file_stem().unwrap().to_string_lossy().into_owned();
        assert!(listed.contains(&name), "{name} missing");
    }
}
