//! Exit codes and output of the command-line binary.

use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_transpath"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn transpath")
}

#[test]
fn no_arguments_prints_usage() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn missing_required_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["evaluate", "--n", "3"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "sim.dtt = 0.1\n").unwrap();
    let out = run(&["simulate", "--config", "bad.toml", "--n", "2", "--out", "t.csv"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    assert!(!dir.path().join("t.csv").exists());
}

#[test]
fn simulate_is_reproducible_and_thread_independent() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &'static str, threads: &'static str| {
        vec!["simulate", "--seed", "4", "--threads", threads, "--n", "6", "--steps", "30", "--out", out]
    };
    let a = run(&args("a.csv", "1"), dir.path());
    let b = run(&args("b.csv", "3"), dir.path());
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert!(b.status.success());
    assert_eq!(a.stdout, b.stdout);
    let fa = std::fs::read(dir.path().join("a.csv")).unwrap();
    let fb = std::fs::read(dir.path().join("b.csv")).unwrap();
    assert_eq!(fa, fb);
    let text = String::from_utf8(fa).unwrap();
    assert_eq!(text.lines().next(), Some("traj,step,x,y"));
    assert_eq!(text.lines().count(), 1 + 6 * 31);
    assert!(dir.path().join("a.csv.config.toml").exists());
}

#[test]
fn missing_checkpoint_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["evaluate", "--checkpoint", "absent", "--n", "3"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}
