//! Exit codes and outputs of the `sliced` binary.

mod support;

use std::path::Path;
use std::process::{Command, Output};

use support::corpus;

fn sliced(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sliced"))
        .args(args)
        .env_remove("SLICED_CONFIG")
        .env_remove("NUSMV")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn usage_errors_exit_64() {
    assert_eq!(code(&sliced(&[])), 64);
    assert_eq!(code(&sliced(&["frobnicate"])), 64);
    let model = corpus("adapt-mini.json");
    assert_eq!(code(&sliced(&["plan", path(&model)])), 64, "--fail is required");
}

#[test]
fn bad_input_exits_65() {
    assert_eq!(code(&sliced(&["stats", "/nonexistent/model.json"])), 65);
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    assert_eq!(code(&sliced(&["translate", path(&bad)])), 65);
    let model = corpus("adapt-mini.json");
    let o = sliced(&["check", path(&model), "--assert", "G NoSuch.state = nominal"]);
    assert_eq!(code(&o), 65);
}

#[test]
fn stats_reports_counts() {
    let o = sliced(&["stats", path(&corpus("adapt-mini.json"))]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["state_space_bound"].to_string().trim_matches('"'), "216");
    assert_eq!(v["open_endpoints"], 1);
}

#[test]
fn check_falsified_exits_1_and_writes_traces() {
    let dir = tempfile::tempdir().unwrap();
    let traces = dir.path().join("out.trace");
    let cfg = corpus("sliced.json");
    let model = corpus("adapt-mini-bank.json");
    let o = sliced(&["--config", path(&cfg), "check", path(&model), "--trace", path(&traces)]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("is false"));
    let written = std::fs::read_to_string(&traces).unwrap();
    assert!(written.contains("CircuitBreakerEY162.state = broken"));

    let o = sliced(&["--config", path(&cfg), "replay", path(&model), "--trace", path(&traces)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn check_verified_exits_0() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("a.ltl");
    std::fs::write(
        &file,
        "-- stays connected while the bank is light\nLTLSPEC G (BankOne.draw <= 10 -> Battery1.draw <= 10)\n",
    )
    .unwrap();
    let model = corpus("adapt-mini-bank.json");
    let o = sliced(&["check", path(&model), "--assert", path(&file)]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).contains("is true"));
}

#[test]
fn state_cap_gives_2() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("a.ltl");
    std::fs::write(&file, "LTLSPEC G Battery1.draw <= 12\n").unwrap();
    let model = corpus("adapt-bank6.json");
    let o = sliced(&["check", path(&model), "--assert", path(&file), "--cap", "5"]);
    assert_eq!(code(&o), 2);
    assert!(stdout(&o).contains("state cap 5 exceeded"));
}

#[test]
fn nusmv_backend_missing_exits_69() {
    let model = corpus("adapt-mini.json");
    let o = Command::new(env!("CARGO_BIN_EXE_sliced"))
        .args(["check", path(&model), "--backend", "nusmv"])
        .env("NUSMV", "/nonexistent/NuSMV")
        .output()
        .unwrap();
    assert_eq!(code(&o), 69);
}

#[test]
fn translate_and_merge() {
    let model = corpus("adapt-bank6.json");
    let o = sliced(&["translate", path(&model), "--auto-merge"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("draw : 0 .. drawlimit;"));

    let o = sliced(&["merge", path(&model), "--auto-merge"]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let text = v.to_string();
    assert!(text.contains("729"), "{text}");
    assert!(text.contains("13"), "{text}");
}

#[test]
fn plan_found_and_replayed() {
    let dir = tempfile::tempdir().unwrap();
    let plan = dir.path().join("plan.trace");
    let model = corpus("adapt-repair.json");
    let goal = "Battery1.state = nominal & RelayA.state = nominal_unused";
    let o = sliced(&["plan", path(&model), "--fail", "Battery1=dead", "--goal", goal]);
    assert_eq!(code(&o), 65, "unknown symbol in goal");

    let goal = "Battery1.state = nominal & Battery1.draw <= 2";
    let o = sliced(&["plan", path(&model), "--fail", "Battery1=dead", "--goal", goal, "--trace", path(&plan)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(std::fs::read_to_string(&plan).unwrap().contains("-- step 2: RelayA.state: closed -> open"));
    let o = sliced(&["replay", path(&model), "--trace", path(&plan), "--init", "Battery1=dead"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
}

#[test]
fn plan_impossible_exits_1() {
    let model = corpus("adapt-repair.json");
    let o = sliced(&["plan", path(&model), "--fail", "Battery1=dead", "--goal", "Battery1.draw > 100"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn simulate_writes_trace() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("s.json");
    std::fs::write(&script, r#"{"2": {"BankOne.draw": 11}}"#).unwrap();
    let model = corpus("adapt-mini-bank.json");
    let o = sliced(&["simulate", path(&model), "--script", path(&script), "--horizon", "3"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("CircuitBreakerEY162.state = broken"));
}
