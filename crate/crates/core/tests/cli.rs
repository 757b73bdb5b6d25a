use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn scene(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenes").join(format!("{name}.json"))
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_diffsim2d")).args(args).output().unwrap()
}

fn edit_scene(name: &str, dir: &Path, f: impl FnOnce(&mut Value)) -> PathBuf {
    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(scene(name)).unwrap()).unwrap();
    f(&mut v);
    let p = dir.join(format!("{name}.json"));
    std::fs::write(&p, serde_json::to_string(&v).unwrap()).unwrap();
    p
}

#[test]
fn forward_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = run(&["forward", scene("thrown_piece").to_str().unwrap(), "--out", out.to_str().unwrap(), "--gradient"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["scene.json", "trajectory.dtrj", "report.json", "gradient.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let report: Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["steps"].as_array().unwrap().len(), 11);
    assert!(report["overhead"].as_f64().unwrap() > 0.0);

    let csv = dir.path().join("t.csv");
    let o = run(&["export", out.to_str().unwrap(), "--format", "csv", "--output", csv.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let text = std::fs::read_to_string(csv).unwrap();
    assert!(text.starts_with("step,time,node,ux,uy,vx,vy"));
    assert_eq!(text.lines().count(), 1 + 11 * 15);

    let o = run(&["export", out.to_str().unwrap(), "--format", "json"]);
    assert_eq!(o.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v.is_object());
}

#[test]
fn input_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = edit_scene("thrown_piece", dir.path(), |v| v["materials"]["lambda"] = Value::String("x".into()));
    let o = run(&["forward", bad.to_str().unwrap(), "--out", dir.path().join("r").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/materials/lambda"));

    let o = run(&["forward", dir.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["export", dir.path().join("nothing").to_str().unwrap(), "--format", "csv"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn solver_failure_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let p = edit_scene("sliding_puck", dir.path(), |v| v["solver"]["max_newton_iters"] = Value::from(1));
    let o = run(&["forward", p.to_str().unwrap(), "--out", dir.path().join("r").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn grad_check_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("rows.json");
    let s = scene("thrown_piece");
    let o = run(&["grad-check", s.to_str().unwrap(), "--block", "v0", "--directions", "2", "--json", json.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let rows: Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert!(!rows.to_string().is_empty());

    // a huge fixed step on a nonlinear block cannot agree to 1e-5
    let s = scene("sliding_puck");
    let o = run(&["grad-check", s.to_str().unwrap(), "--block", "gamma", "--directions", "1", "--eps", "0.3"]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn optimize_writes_trace_and_result() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("opt");
    let o = run(&["optimize", scene("thrown_piece").to_str().unwrap(), "--out", out.to_str().unwrap(), "--max-iterations", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["trace.csv", "optimized.json", "checkpoint.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let o = run(&["forward", out.join("optimized.json").to_str().unwrap(), "--out", dir.path().join("r").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
}
