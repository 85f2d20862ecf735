use std::fs;
use std::path::Path;

use kgabduce::graph::write_split;
use kgabduce::synth::random_split;
use kgabduce_cli::cli::run;
use serde_json::Value;

fn dataset() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    write_split(dir.path(), &random_split(40, 4, 200, 3)).unwrap();
    dir
}

fn exec(args: &[&str]) -> (i32, String) {
    let mut out = Vec::new();
    let mut argv = vec!["kgabduce"];
    argv.extend_from_slice(args);
    let code = run(argv, &mut out);
    (code, String::from_utf8(out).unwrap())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn stats_reports_counts() {
    let d = dataset();
    let (code, out) = exec(&["stats", "--graph", p(d.path())]);
    assert_eq!(code, 0);
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["entity_count"], 40);
    assert_eq!(v["relation_count"], 4);
    assert_eq!(v["monotone"], true);
}

#[test]
fn sample_is_byte_identical_across_runs() {
    let d = dataset();
    let a = d.path().join("a.jsonl");
    let b = d.path().join("b.jsonl");
    for f in [&a, &b] {
        let (code, _) = exec(&["sample", "--graph", p(d.path()), "--per-pattern", "2", "--seed", "1", "--augment", "--out", p(f)]);
        assert_eq!(code, 0);
    }
    let (x, y) = (fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(x, y);
    assert!(String::from_utf8(x).unwrap().lines().count() >= 26);
}

#[test]
fn malformed_condition_is_a_usage_error() {
    let d = dataset();
    let (code, out) = exec(&["abduce", "--graph", p(d.path()), "--observation", "1,2", "--condition", "shape:7"]);
    assert_eq!(code, 1);
    assert!(out.is_empty());
}

#[test]
fn usage_and_data_errors_have_distinct_codes() {
    assert_eq!(exec(&["frobnicate"]).0, 1);
    assert_eq!(exec(&["stats", "--graph", "/definitely/not/here"]).0, 2);
    let d = dataset();
    fs::write(d.path().join("train.txt"), "0\t0\t999\n").unwrap();
    assert_eq!(exec(&["stats", "--graph", p(d.path())]).0, 2);
}

#[test]
fn abduce_and_score_round_trip() {
    let d = dataset();
    let (code, out) = exec(&["eval", "--graph", p(d.path()), "--hypothesis", "(p r0 (e e1))"]);
    assert_eq!(code, 0);
    let eval: Value = serde_json::from_str(&out).unwrap();
    let ids: Vec<String> = eval["conclusion"].as_array().unwrap().iter().map(|v| v.to_string()).collect();
    if ids.is_empty() {
        return;
    }
    let obs = ids.join(",");
    let (code, out) = exec(&[
        "score", "--graph", p(d.path()), "--hypothesis", "(p r0 (e e1))", "--observation", &obs, "--condition", "pattern:1p",
    ]);
    assert_eq!(code, 0);
    let s: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(s["jaccard"], 1.0);
    let (code, out) = exec(&[
        "abduce", "--graph", p(d.path()), "--observation", &obs, "--condition", "pattern:1p", "--mode", "exhaustive", "--k", "2",
    ]);
    assert_eq!(code, 0);
    let a: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(a["results"][0]["breakdown"]["jaccard"], 1.0);
}

#[test]
fn evaluate_scores_references_against_themselves() {
    let d = dataset();
    let refs = d.path().join("refs.jsonl");
    let (code, _) = exec(&["sample", "--graph", p(d.path()), "--split", "test", "--per-pattern", "1", "--seed", "4", "--out", p(&refs)]);
    assert_eq!(code, 0);
    let preds = d.path().join("preds.jsonl");
    let rows: Vec<String> = fs::read_to_string(&refs)
        .unwrap()
        .lines()
        .map(|l| {
            let v: Value = serde_json::from_str(l).unwrap();
            serde_json::json!({"hypothesis": v["hypothesis"], "condition": format!("pattern:{}", v["pattern"].as_str().unwrap())}).to_string()
        })
        .collect();
    fs::write(&preds, rows.join("\n")).unwrap();
    let (code, out) = exec(&["evaluate", "--graph", p(d.path()), "--predictions", p(&preds), "--references", p(&refs)]);
    assert_eq!(code, 0, "{out}");
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["count"], 13);
    assert_eq!(v["Jaccard"]["mean"], 1.0);
    assert_eq!(v["Smatch"]["mean"], 1.0);
}

#[test]
fn diagnose_runs_on_a_synthetic_graph() {
    let (code, out) = exec(&["diagnose", "collapse", "--synthetic-entities", "30", "--synthetic-edges", "90", "--samples", "3"]);
    assert_eq!(code, 0);
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 3);
    let (code, _) = exec(&["diagnose", "oversensitivity", "--pattern", "2p", "--samples", "5"]);
    assert_eq!(code, 0);
    assert_eq!(exec(&["diagnose", "profile", "--pattern", "9z"]).0, 1);
}
