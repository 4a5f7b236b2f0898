use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_fbdsdej"));
    c.env_remove("FBDSDEJ_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn config(name: &str) -> String {
    configs().join(name).to_string_lossy().into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap()
}

fn write_config(dir: &Path, name: &str, v: &Value) -> String {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string(v).unwrap()).unwrap();
    p.to_string_lossy().into_owned()
}

fn load(name: &str) -> Value {
    serde_json::from_str(&std::fs::read_to_string(configs().join(name)).unwrap()).unwrap()
}

#[test]
fn zero_problem_solves() {
    let o = run(&["solve", "--config", &config("zero.json")]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let doc = stdout_json(&o);
    assert_eq!(doc["status"], "ok");
    assert_eq!(doc["summary"]["y0"], json!([0.0]));
}

#[test]
fn degenerate_constants_exit_with_precondition() {
    let o = run(&["solve", "--config", &config("degenerate.json")]);
    assert_eq!(code(&o), 2);
    let all = format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr));
    assert!(all.contains("θ1+θ2>0 fails"), "{all}");
}

#[test]
fn unknown_key_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = load("zero.json");
    v["stray"] = json!(1);
    let p = write_config(dir.path(), "bad.json", &v);
    let o = run(&["solve", "--config", &p]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("stray"));
    let missing = run(&["solve", "--config", "/nonexistent/config.json"]);
    assert_eq!(code(&missing), 1);
}

#[test]
fn exhausted_continuation_exits_stalled() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = load("jumps.json");
    v["continuation"] = json!({ "max_iterations": 1, "tolerance": 0.0, "min_delta": 0.2 });
    let p = write_config(dir.path(), "stall.json", &v);
    let o = run(&["solve", "--config", &p]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn checks_follow_the_orientation() {
    let o = run(&["check", "--config", &config("sign_flipped.json")]);
    assert_eq!(code(&o), 4);
    assert!(String::from_utf8_lossy(&o.stderr).contains("monotonicity witness"));
    assert_eq!(stdout_json(&o)["pass"], false);
    let dir = tempfile::tempdir().unwrap();
    let mut v = load("sign_flipped.json");
    v["orientation"] = json!("primed");
    let p = write_config(dir.path(), "primed.json", &v);
    let o = run(&["check", "--config", &p]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert_eq!(run(&["check", "--config", &config("jumps.json")]).status.code(), Some(0));
}

#[test]
fn calculus_suite_exit_codes() {
    let o = run(&["calculus", "--sizes", "2,3"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout_json(&o)["pass"], true);
    assert_eq!(code(&run(&["calculus", "--sizes", "2", "--wrong-endpoint"])), 4);
}

fn without_timing(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("timing");
    v
}

#[test]
fn runs_are_deterministic() {
    let a = run(&["solve", "--config", &config("jumps.json"), "--threads", "1"]);
    let b = run(&["solve", "--config", &config("jumps.json")]);
    assert_eq!(code(&a), 0);
    assert_eq!(without_timing(stdout_json(&a)), without_timing(stdout_json(&b)));
}

#[test]
fn output_and_trace_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run.json");
    let csv = dir.path().join("trace.csv");
    let o = run(&[
        "solve",
        "--config",
        &config("jumps.json"),
        "--out",
        out.to_str().unwrap(),
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    assert!(o.stdout.is_empty());
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(doc["status"], "ok");
    let trace = std::fs::read_to_string(&csv).unwrap();
    let mut lines = trace.lines();
    assert_eq!(lines.next(), Some("level,iteration,distance,ratio"));
    assert!(lines.count() >= 2);
}

#[test]
fn seed_precedence() {
    let seed_of = |args: &[&str], env: Option<&str>| {
        let mut c = bin();
        c.args(["solve", "--config", &config("jumps.json")]).args(args);
        if let Some(e) = env {
            c.env("FBDSDEJ_SEED", e);
        }
        stdout_json(&c.output().unwrap())["seed"].as_u64().unwrap()
    };
    assert_eq!(seed_of(&[], None), 7);
    assert_eq!(seed_of(&[], Some("11")), 11);
    assert_eq!(seed_of(&["--seed", "13"], Some("11")), 13);
    assert_eq!(
        stdout_json(&run(&["solve", "--config", &config("zero.json")]))["seed"].as_u64(),
        Some(0xFBD5DE)
    );
    let mut c = bin();
    c.args(["solve", "--config", &config("jumps.json")]).env("FBDSDEJ_SEED", "nope");
    assert_eq!(c.output().unwrap().status.code(), Some(1));
}

#[test]
fn study_reports_a_decay_table() {
    let o = run(&["study", "--config", &config("exp_decay.json"), "--steps", "8,16,32"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let doc = stdout_json(&o);
    assert_eq!(doc["decay"]["rows"].as_array().unwrap().len(), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("slope of error"));
    let z = run(&["study", "--config", &config("zero.json"), "--steps", "4,8"]);
    assert!(String::from_utf8_lossy(&z.stderr).contains("slope of residual: undefined"));
}
