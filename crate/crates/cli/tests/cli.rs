use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn smoke_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml")
}

fn codesign(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_codesign"))
        .arg("--config")
        .arg(smoke_config())
        .arg("--out-dir")
        .arg(dir)
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn pipeline_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = codesign(dir.path(), &["pipeline"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("evaluate: done"));
    let again = codesign(dir.path(), &["--resume", "pipeline"]);
    assert_eq!(again.status.code(), Some(0));
    assert!(!stdout(&again).contains("done"));
    let rep = codesign(dir.path(), &["report"]);
    assert_eq!(rep.status.code(), Some(0));
    assert!(stdout(&rep).contains("co-design"));
    assert!(dir.path().join("report/pareto_scatter.csv").exists());
}

#[test]
fn stage_commands_reuse_upstream() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(codesign(dir.path(), &["pareto"]).status.code(), Some(0));
    let b = codesign(dir.path(), &["boundary"]);
    assert_eq!(b.status.code(), Some(0));
    assert!(stdout(&b).contains("pareto: reused"));
    let f = codesign(dir.path(), &["finalize"]);
    assert_eq!(f.status.code(), Some(0));
    assert!(stdout(&f).contains("\"residual\""));
}

#[test]
fn report_without_run_is_stage_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = codesign(dir.path(), &["report"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("needs artifact"));
}

#[test]
fn bad_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[train]\nclip_ratio = 3.0\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_codesign"))
        .arg("--config")
        .arg(&cfg)
        .arg("pareto")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let missing = Command::new(env!("CARGO_BIN_EXE_codesign"))
        .args(["--config", "/nonexistent.toml", "pareto"])
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn simulate_prints_event_log() {
    let dir = tempfile::tempdir().unwrap();
    let out = codesign(
        dir.path(),
        &[
            "simulate",
            "--policy",
            "nearest",
            "--talents",
            "6,10,3",
            "--tasks",
            "6",
            "--robots",
            "2",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let log = stdout(&out);
    assert!(log.lines().count() >= 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("completed"));
    let bad = codesign(dir.path(), &["simulate", "--policy", "nearest", "--talents", "1,2"]);
    assert_eq!(bad.status.code(), Some(2));
    let zero = codesign(dir.path(), &["simulate", "--talents", "6,10,3", "--robots", "0"]);
    assert_eq!(zero.status.code(), Some(2));
}

#[test]
fn simulate_with_trained_policy_and_seed_override() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(codesign(dir.path(), &["--seed", "11", "train"]).status.code(), Some(0));
    let policy = dir.path().join("train/policy.json");
    let a = codesign(dir.path(), &["simulate", "--policy", policy.to_str().unwrap()]);
    let b = codesign(dir.path(), &["simulate", "--policy", policy.to_str().unwrap()]);
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(stdout(&a), stdout(&b));
    let m = std::fs::read_to_string(dir.path().join("manifest.json")).unwrap();
    assert!(m.contains("\"master_seed\": 11"));
}

#[test]
fn custom_baseline_and_srta() {
    let dir = tempfile::tempdir().unwrap();
    let out = codesign(dir.path(), &["train-baseline", "--talents", "50,30,20"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("outside the Pareto band"));
    assert!(dir.path().join("baselines/custom/policy.json").exists());
    let s = codesign(dir.path(), &["srta"]);
    assert_eq!(s.status.code(), Some(0), "{}", String::from_utf8_lossy(&s.stderr));
    assert!(stdout(&s).contains("single robot decreasing"));
}
