use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
seed = 7

[data]
columns = ["x1", "x2", "x3"]

[simulate]
length = 150

[sampler]
iterations = 300
burn_in = 100
thin = 5

[ln1]
starts = 2
max_evaluations = 20000

[grid]
points = 40
"#;

fn vmem(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vmem"))
        .args(args)
        .arg("--config")
        .arg(dir.join("run.toml"))
        .arg("--output")
        .arg(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), CONFIG).unwrap();
    dir
}

#[test]
fn full_workflow_writes_every_artifact() {
    let dir = setup();
    let p = dir.path();
    for args in [
        &["simulate"][..],
        &["fit", "--model", "ln1"],
        &["fit"],
        &["evaluate"],
        &["diagnose"],
    ] {
        let out = vmem(p, args);
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    for f in [
        "series.csv",
        "truth.json",
        "ln1.json",
        "draws.bin",
        "report.csv",
        "scores.csv",
        "grid_dpm.csv",
        "grid_ln1.csv",
        "grid_truth.csv",
        "trace_omega_1.csv",
        "acf.csv",
        "ess.csv",
        "components.csv",
    ] {
        assert!(p.join(f).exists(), "{f} missing");
    }
    assert!(!p.join("INVALID").exists());
    let scores = std::fs::read_to_string(p.join("scores.csv")).unwrap();
    assert!(scores.starts_with("model,lps,lpml"));
    assert_eq!(scores.lines().count(), 3);
}

#[test]
fn seed_flag_overrides_config() {
    let a = setup();
    let b = setup();
    assert!(vmem(a.path(), &["simulate", "--seed", "99"])
        .status
        .success());
    assert!(vmem(b.path(), &["simulate"]).status.success());
    let sa = std::fs::read(a.path().join("series.csv")).unwrap();
    let sb = std::fs::read(b.path().join("series.csv")).unwrap();
    assert_ne!(sa, sb);
}

#[test]
fn failures_exit_nonzero_and_mark_output() {
    let dir = setup();
    let out = vmem(dir.path(), &["fit"]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    let message = stderr
        .lines()
        .find(|l| l.starts_with("error:"))
        .expect("error line");
    assert!(message.contains("series.csv"), "{message}");
    assert!(dir.path().join("INVALID").exists());
}

#[test]
fn evaluate_refuses_a_changed_configuration() {
    let dir = setup();
    let p = dir.path();
    assert!(vmem(p, &["simulate"]).status.success());
    assert!(vmem(p, &["fit"]).status.success());
    let out = vmem(p, &["evaluate", "--seed", "8"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("hash"));
    assert!(p.join("INVALID").exists());
}
