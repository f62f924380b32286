use std::path::PathBuf;
use std::process::Command;

fn bpdg() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bpdg"))
}

fn tmp(name: &str) -> PathBuf {
    let d = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

#[test]
fn verify_beta_passes() {
    let out = bpdg().arg("verify-beta").output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("kane") && !text.contains("FAIL"), "{text}");
}

#[test]
fn invalid_config_exits_one() {
    let d = tmp("cli_bad");
    let cfg = d.join("bad.cfg");
    std::fs::write(&cfg, "[mesh]\nnx = 4\nnp = 4\nnmu = 4\np_max = -1.0\n").unwrap();
    let out = bpdg().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mesh.p_max"));
}

#[test]
fn bad_override_exits_one() {
    let out = bpdg().args(["run", "--cfl-safety", "2.5", "--max-steps", "1"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn short_run_writes_outputs() {
    let d = tmp("cli_run");
    let cfg = d.join("small.cfg");
    let preset = include_str!("../../../presets/periodic-relaxation.cfg")
        .replace("nx = 16", "nx = 4")
        .replace("np = 16", "np = 6");
    std::fs::write(&cfg, preset).unwrap();
    let out_dir = d.join("out");
    let out = bpdg()
        .args(["--threads", "1", "run", "--max-steps", "3", "--config"])
        .arg(&cfg)
        .arg("--output-dir")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(out_dir.join("diagnostics.csv")).unwrap();
    assert!(csv.starts_with("t,dt,binding,"));
    assert_eq!(csv.lines().count(), 5);
    assert!(out_dir.join("final.snap").exists());
}

#[test]
fn convergence_reports_second_order() {
    let out = bpdg().args(["convergence", "--levels", "2", "--base-nx", "8"]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.lines().count(), 3, "{text}");
}

#[test]
fn usage_errors_exit_one() {
    let out = bpdg().args(["run", "--limiter", "maybe"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(bpdg().arg("--help").output().unwrap().status.success());
}
