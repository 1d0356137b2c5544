//! End-to-end tests of the command-line interface: artifact shapes, exit
//! codes, and byte-identical reruns.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_berwald")
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("spawn berwald")
}

fn tempdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("berwald-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn json_file(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn classify_zero_profile() {
    let out = tempdir("classify-zero");
    let cfg = configs().join("zero.cfg");
    let res = run(&["classify", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let report = json_file(&out.join("report.json"));
    assert_eq!(report["classification"]["label"], "T2-free2D");
    assert_eq!(report["version"], env!("CARGO_PKG_VERSION"));
    assert!(report["config_hash"].as_str().unwrap().len() == 64);
}

#[test]
fn classify_schwarzschild_riemannian_only_exit_zero() {
    let out = tempdir("classify-schw");
    let cfg = configs().join("schwarzschild.cfg");
    let res = run(&["classify", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(res.status.success());
    let report = json_file(&out.join("report.json"));
    assert_eq!(report["classification"]["label"], "riemannian-only");
}

#[test]
fn construct_on_riemannian_only_exits_two() {
    let out = tempdir("construct-schw");
    let cfg = configs().join("schwarzschild.cfg");
    let res = run(&["construct", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&res.stderr);
    assert!(msg.contains("riemannian-only"), "{msg}");
}

#[test]
fn verify_zero_profile_passes_tightly() {
    let out = tempdir("verify-zero");
    let cfg = configs().join("zero.cfg");
    let res = run(&[
        "verify",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--tol",
        "1e-9",
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let v = json_file(&out.join("verification.json"));
    assert_eq!(v["overall_pass"], true);
    for check in v["verification"]["checks"].as_array().unwrap() {
        if check["applicable"] == serde_json::Value::Bool(true) {
            assert!(check["max_residual"].as_f64().unwrap() < 1e-9);
        }
    }
}

#[test]
fn verify_power_profile() {
    let out = tempdir("verify-power");
    let cfg = configs().join("power.cfg");
    let res = run(&[
        "verify",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--samples",
        "120",
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let v = json_file(&out.join("verification.json"));
    assert_eq!(v["label"], "T1-power");
    assert_eq!(v["det_audit"]["pass"], true);
}

#[test]
fn geodesic_exports_trajectory_csv() {
    let out = tempdir("geodesic-mink");
    let cfg = configs().join("minkowski.cfg");
    let res = run(&["geodesic", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let csv = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "step,t,r,theta,phi,dt,dr,dtheta,dphi,L"
    );
    // 1000 steps plus the initial state.
    assert_eq!(csv.lines().count(), 1002);
    // L column along a flat-bracket profile is the transported model value.
    let first = csv.lines().nth(1).unwrap();
    let l: f64 = first.rsplit(',').next().unwrap().parse().unwrap();
    assert!(l.is_finite());
}

#[test]
fn curvature_exports_grid_csv() {
    let out = tempdir("curvature-schw");
    let cfg = configs().join("schwarzschild.cfg");
    let res = run(&[
        "curvature",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--grid",
        "7x9",
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let csv = std::fs::read_to_string(out.join("curvature_grid.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert!(header.starts_with("t,r,a1,"));
    assert!(header.ends_with("M,Mtilde,N,Ntilde"));
    assert_eq!(csv.lines().count(), 1 + 7 * 9);
}

#[test]
fn reruns_are_byte_identical() {
    let cfg = configs().join("minkowski.cfg");
    let out1 = tempdir("idem-1");
    let out2 = tempdir("idem-2");
    for out in [&out1, &out2] {
        let res = run(&[
            "verify",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--samples",
            "60",
        ]);
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
        let res = run(&["classify", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert!(res.status.success());
    }
    for name in ["verification.json", "report.json"] {
        let a = std::fs::read(out1.join(name)).unwrap();
        let b = std::fs::read(out2.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between reruns");
    }
}

#[test]
fn config_errors_exit_one() {
    let out = tempdir("bad-config");
    let bad = out.join("bad.cfg");
    std::fs::write(&bad, "[domain]\nt_range = -1 1\nr_range = 1 2\n[connection]\nk7 = \"sin(\"\n")
        .unwrap();
    let res = run(&["classify", "--config", bad.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(1));
    let msg = String::from_utf8_lossy(&res.stderr);
    assert!(msg.contains("line 5"), "{msg}");

    // Missing --config is a usage error.
    let res = run(&["classify"]);
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn mirrored_profile_classifies_and_verifies() {
    let out = tempdir("mirrored");
    let cfg = configs().join("mirrored_minkowski.cfg");
    let res = run(&["classify", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(res.status.success());
    let report = json_file(&out.join("report.json"));
    assert_eq!(report["classification"]["label"], "mirrored(T1-flatbracket)");
    let res = run(&[
        "verify",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--samples",
        "80",
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
}
