use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn system(name: &str) -> String {
    format!("{}/../../systems/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_unimech")).args(args).output().unwrap()
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn scratch(name: &str, text: &str) -> PathBuf {
    let path = std::env::temp_dir().join(format!("unimech-cli-{}-{name}", std::process::id()));
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn analyze_reports_oscillator_momenta() {
    let v = json(&run(&["analyze", &system("pais_uhlenbeck.lag")]));
    assert_eq!(v["momenta"]["p0"], "q1 + g*q3");
    assert_eq!(v["momenta"]["p1"], "-g*q2");
    assert_eq!(v["hessian_verdict"], "regular");
}

#[test]
fn report_embeds_version_and_config() {
    let v = json(&run(&["momenta", &system("free_particle.lag"), "--seed", "11"]));
    assert_eq!(v["tool"], "unimech");
    assert_eq!(v["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(v["config"]["command"], "momenta");
    assert_eq!(v["config"]["sampling"]["seed"], 11);
}

#[test]
fn relativistic_ledger_labels() {
    let v = json(&run(&["constraints", &system("relativistic_particle.lag"), "--semispray1"]));
    assert_eq!(v["status"], "stabilized");
    let labels: Vec<&str> = v["generations"]
        .as_array()
        .unwrap()
        .iter()
        .flat_map(|g| g.as_array().unwrap())
        .map(|e| e["label"].as_str().unwrap())
        .filter(|l| l.starts_with("phi"))
        .collect();
    assert_eq!(labels, ["phi(0)_1", "phi(0)_2", "phi(1)_1", "phi(1)_2", "phi(2)"]);
}

#[test]
fn output_is_byte_identical_across_runs() {
    let args = ["constraints", &system("relativistic_particle.lag"), "--semispray1", "--seed", "7"];
    let (a, b) = (run(&args), run(&args));
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn free_particle_csv() {
    let out = run(&["simulate", &system("free_particle.lag"), "--t-end", "1", "--h", "0.001", "--init", "q0=0,q1=1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,q0,q1"));
    let last: Vec<f64> = lines.last().unwrap().split(',').map(|s| s.parse().unwrap()).collect();
    assert_eq!(last[0], 1.0);
    assert!((last[1] - 1.0).abs() < 1e-12, "q0(1) = {}", last[1]);
    assert!((last[2] - 1.0).abs() < 1e-12);
}

#[test]
fn simulate_json_reports_drift() {
    let v = json(&run(&[
        "simulate",
        &system("pais_uhlenbeck.lag"),
        "--format",
        "json",
        "--t-end",
        "1",
        "--param",
        "w=1,g=1",
        "--init",
        "q0=1",
    ]));
    assert!(v["energy_drift"].as_f64().unwrap() < 1e-10);
}

#[test]
fn out_flag_writes_file() {
    let path = std::env::temp_dir().join(format!("unimech-cli-{}-out.json", std::process::id()));
    let out = run(&["eom", &system("free_particle.lag"), "--out", path.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(v["config"]["command"], "eom");
    std::fs::remove_file(path).ok();
}

#[test]
fn parse_error_exits_2() {
    let path = scratch("bad.lag", "system(dim=1, order=1)\nL = q1^^2\n");
    assert_eq!(run(&["momenta", path.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn bad_arguments_exit_2() {
    let pu = system("pais_uhlenbeck.lag");
    assert_eq!(run(&["analyze", &pu, "--param", "nope=1"]).status.code(), Some(2));
    assert_eq!(run(&["analyze", &pu, "--format", "csv"]).status.code(), Some(2));
    assert_eq!(run(&["simulate", &pu, "--param", "w=1,g=1", "--init", "q9=1"]).status.code(), Some(2));
    let bare = scratch("bare.lag", "system(dim=1, order=1)\nparams(m)\nL = 1/2*m*q1^2\n");
    assert_eq!(run(&["simulate", bare.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn inconsistent_system_exits_3() {
    let path = scratch("linear.lag", "system(dim=1, order=1)\nL = q0\n");
    let out = run(&["constraints", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["status"], "inconsistent");
}

#[test]
fn blow_up_exits_4() {
    let out = run(&[
        "simulate",
        &system("pais_uhlenbeck.lag"),
        "--param",
        "w=1,g=1e-9",
        "--h",
        "1",
        "--t-end",
        "1000",
        "--init",
        "q0=1",
    ]);
    assert_eq!(out.status.code(), Some(4));
}
