//! End-to-end checks of the binary: exit codes, what lands on disk, and the
//! guarantee that reruns and worker counts cannot change any written byte.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_twoscale"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary should launch")
}

fn write_cfg(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

const SIM_CFG: &str = "\
[simulate]
benchmark = lq_deep_relax
epsilon = 0.1
horizon = 0.4
seed = 9
x0 = 1.0
y0 = 0.5
u = 1.0
dt = 0.005
n_paths = 2
";

#[test]
fn help_prints_usage_and_exits_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["--help"], tmp.path());
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("usage:"), "no usage line in {text}");
    assert!(text.contains("invariant"), "command list missing: {text}");
}

#[test]
fn missing_config_file_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["no_such_file.cfg"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_command_is_rejected_before_any_output() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "bad.cfg", "[bogus]\nseed = 1\n");
    let out = run(&[&cfg, "--out", "results"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bogus"), "error does not name the command: {err}");
    assert!(err.contains("simulate"), "error does not list valid commands: {err}");
    assert!(!tmp.path().join("results").exists(), "usage error must not write files");
}

#[test]
fn unknown_key_is_rejected_and_named() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        tmp.path(),
        "typo.cfg",
        &format!("{SIM_CFG}mistyped_knob = 3\n"),
    );
    let out = run(&[&cfg, "--out", "results"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("mistyped_knob"), "error does not name the key: {err}");
    assert!(!tmp.path().join("results").exists());
}

#[test]
fn missing_seed_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let body = SIM_CFG.replace("seed = 9\n", "");
    let cfg = write_cfg(tmp.path(), "noseed.cfg", &body);
    let out = run(&[&cfg], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("seed"), "error should mention the seed: {err}");
}

#[test]
fn report_and_artifacts_land_in_the_output_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "sim.cfg", SIM_CFG);
    let out = run(&[&cfg, "--out", "results"], tmp.path());
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));

    let report = fs::read_to_string(tmp.path().join("results/report.json")).unwrap();
    assert!(report.contains("\"command\": \"simulate\""));
    assert!(report.contains("\"paths.csv\""), "manifest missing artifact: {report}");
    // Wall-clock time goes to the console only; written artifacts must not
    // depend on when the run happened.
    assert!(!report.contains("wall_clock_seconds"));
    assert!(String::from_utf8_lossy(&out.stdout).contains("wall_clock_seconds"));
    // Scheduling knobs are not part of the experiment, so the config echo
    // omits them.
    assert!(!report.contains("\"workers\""));
    assert!(!report.contains("\"out\""));

    let paths = fs::read_to_string(tmp.path().join("results/paths.csv")).unwrap();
    assert!(paths.starts_with("path,t,"), "unexpected csv header: {paths}");
}

#[test]
fn seed_flag_overrides_the_config_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "sim.cfg", SIM_CFG);
    assert!(run(&[&cfg, "--out", "a"], tmp.path()).status.success());
    assert!(run(&[&cfg, "--seed", "123", "--out", "b"], tmp.path()).status.success());

    let ra = fs::read_to_string(tmp.path().join("a/report.json")).unwrap();
    let rb = fs::read_to_string(tmp.path().join("b/report.json")).unwrap();
    assert!(ra.contains("\"seed\": \"9\""));
    assert!(rb.contains("\"seed\": \"123\""));
    let pa = fs::read(tmp.path().join("a/paths.csv")).unwrap();
    let pb = fs::read(tmp.path().join("b/paths.csv")).unwrap();
    assert_ne!(pa, pb, "different seeds should produce different trajectories");
}

#[test]
fn reruns_and_worker_counts_cannot_change_written_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "sim.cfg", SIM_CFG);
    for (out_dir, workers) in [("w1", "1"), ("w3", "3"), ("w3b", "3")] {
        let out = run(&[&cfg, "--workers", workers, "--out", out_dir], tmp.path());
        assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    }
    for file in ["report.json", "paths.csv"] {
        let w1 = fs::read(tmp.path().join("w1").join(file)).unwrap();
        let w3 = fs::read(tmp.path().join("w3").join(file)).unwrap();
        let w3b = fs::read(tmp.path().join("w3b").join(file)).unwrap();
        assert_eq!(w1, w3, "{file} depends on the worker count");
        assert_eq!(w3, w3b, "{file} differs between identical reruns");
    }
}
