use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn vspan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vspan")).args(args).output().expect("binary runs")
}

fn simulate(dir: &Path, scenario: &str, seed: u64, extra: &[&str]) {
    let seed = seed.to_string();
    let mut args = vec!["simulate", "--scenario", scenario, "--seed", &seed, "-o", dir.to_str().unwrap(), "--quiet"];
    args.extend_from_slice(extra);
    let out = vspan(&args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}

fn inputs(dir: &Path) -> Vec<String> {
    let side: Value = serde_json::from_str(&fs::read_to_string(dir.join("sidecar.json")).unwrap()).unwrap();
    let mut args = Vec::new();
    for o in side["offsets"].as_array().unwrap() {
        args.push("-i".into());
        args.push(dir.join(o["source"].as_str().unwrap()).display().to_string());
        args.push(format!("--offset={}", o["offset"]));
    }
    args
}

fn run_on(dir: &Path, cmd: &str, extra: &[&str]) -> Output {
    let mut args: Vec<String> = vec![cmd.into()];
    args.extend(inputs(dir));
    args.extend(extra.iter().map(|s| s.to_string()));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    vspan(&refs)
}

#[test]
fn simulate_writes_three_reproducible_files() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    simulate(&a, "readfile_chain", 1, &[]);
    simulate(&b, "readfile_chain", 1, &[]);
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names, ["kernel.jsonl", "sidecar.json", "userspace.jsonl"]);
    for n in names {
        assert_eq!(fs::read(a.join(&n)).unwrap(), fs::read(b.join(&n)).unwrap());
    }
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = vspan(&["simulate", "--scenario", "nope", "-o", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let out = vspan(&["simulate", "--scenario", "healthy", "--param", "pool_size=0", "-o", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    let empty = tmp.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let out = vspan(&["analyze", "-i", empty.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no events"));

    let bad = tmp.path().join("bad.jsonl");
    fs::write(&bad, "{\"ts\": -1}\n").unwrap();
    assert_eq!(vspan(&["analyze", "-i", bad.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(vspan(&["export", "-i", empty.to_str().unwrap(), "--format", "svg"]).status.code(), Some(2));
}

#[test]
fn analyze_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(tmp.path(), "healthy", 2, &[]);
    let out = run_on(tmp.path(), "analyze", &["--quiet"]);
    assert_eq!(out.status.code(), Some(0));
    let doc: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(!doc["spans"].as_array().unwrap().is_empty());

    // Without uv_submit every pool handoff is incomplete.
    let us = fs::read_to_string(tmp.path().join("userspace.jsonl")).unwrap();
    let cut: String = us.lines().filter(|l| !l.contains("uv_submit")).map(|l| format!("{l}\n")).collect();
    let partial = tmp.path().join("partial.jsonl");
    fs::write(&partial, cut).unwrap();
    let out = vspan(&["analyze", "-i", partial.to_str().unwrap(), "--quiet", "-o", tmp.path().join("an.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(summary["unmatched"].as_u64().unwrap() > 0);
}

#[test]
fn detect_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let healthy = tmp.path().join("healthy");
    simulate(&healthy, "healthy", 3, &[]);
    let out = run_on(&healthy, "detect", &["--quiet"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    assert_eq!(serde_json::from_slice::<Value>(&out.stdout).unwrap(), serde_json::json!([]));

    let redos = tmp.path().join("redos");
    simulate(&redos, "redos_stall", 3, &[]);
    let out = run_on(&redos, "detect", &["--quiet"]);
    assert_eq!(out.status.code(), Some(3));
    let reports: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(reports.as_array().unwrap().iter().any(|r| r["kind"] == "ElStall"));

    assert_eq!(run_on(&healthy, "detect", &["--factor", "0"]).status.code(), Some(2));
}

#[test]
fn export_readfile_chrome() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(tmp.path(), "readfile_chain", 4, &[]);
    let dest = tmp.path().join("trace.json");
    let out = run_on(tmp.path(), "export", &["--format", "chrome", "-o", dest.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let doc: Value = serde_json::from_str(&fs::read_to_string(&dest).unwrap()).unwrap();
    vspan_core::export::check_nesting(&doc).unwrap();
    let events = doc["traceEvents"].as_array().unwrap();
    let root = events.iter().find(|e| e["name"] == "readFile").unwrap();
    assert_eq!(root["dur"].as_f64(), Some(300_000.0));
    assert!(events.iter().filter(|e| e["cat"] == "libuv").count() >= 4);

    let out = run_on(tmp.path(), "export", &["--format", "folded"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().all(|l| l.starts_with("readFile;ctx_")));
}

#[test]
fn metrics_report_span_identity() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(tmp.path(), "promise_loop", 5, &[]);
    let out = run_on(tmp.path(), "metrics", &[]);
    assert_eq!(out.status.code(), Some(0));
    let doc: Value = serde_json::from_slice(&out.stdout).unwrap();
    for s in doc["spans"].as_array().unwrap() {
        let (t, l, g) = (s["t_ns"].as_u64().unwrap(), s["l_ns"].as_u64().unwrap(), s["gap_sum_ns"].as_u64().unwrap());
        assert_eq!(l - t, g);
    }
}
