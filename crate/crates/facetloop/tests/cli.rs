use std::path::Path;
use std::process::{Command, Output};

use facetloop::io::{read_checkpoint, read_index, read_jsonl, SessionEvent};

fn facetloop(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_facetloop"))
        .args(args)
        .current_dir(dir)
        .env_remove("FACETLOOP_CONFIG")
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn facetloop")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = facetloop(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(facetloop(dir.path(), &[]).status.code(), Some(2));
    assert_eq!(facetloop(dir.path(), &["gen-catalog", "--bogus"]).status.code(), Some(2));
    assert_eq!(facetloop(dir.path(), &["no-such-command"]).status.code(), Some(2));
    assert_eq!(facetloop(dir.path(), &["--help"]).status.code(), Some(0));
    // runtime failure, not usage
    assert_eq!(facetloop(dir.path(), &["index", "--catalog", "missing.jsonl", "--out", "x.idx"]).status.code(), Some(1));
}

#[test]
fn catalog_generation_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["--seed", "5", "gen-catalog", "--products", "500", "--out", "a.jsonl"]);
    ok(d, &["--seed", "5", "gen-catalog", "--products", "500", "--out", "b.jsonl"]);
    ok(d, &["--seed", "6", "gen-catalog", "--products", "500", "--out", "c.jsonl"]);
    let read = |n: &str| std::fs::read(d.join(n)).unwrap();
    assert_eq!(read("a.jsonl"), read("b.jsonl"));
    assert_eq!(read("a.kg.json"), read("b.kg.json"));
    assert_eq!(read("a.trends.json"), read("b.trends.json"));
    assert_ne!(read("a.jsonl"), read("c.jsonl"));
    assert_eq!(String::from_utf8(read("a.jsonl")).unwrap().lines().count(), 500);
}

#[test]
fn file_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("cfg.json"), r#"{ "run": { "ctr_bootstrap_sessions": 40 }, "eval": { "k": 10 } }"#).unwrap();
    let world = ["--catalog", "cat.jsonl", "--kg", "cat.kg.json", "--index", "cat.idx", "--trends", "cat.trends.json"];
    let with = |head: &[&'static str], tail: &[&'static str]| -> Vec<&'static str> {
        let mut v = vec!["--seed", "3", "--config", "cfg.json"];
        v.extend_from_slice(head);
        v.extend_from_slice(&world);
        v.extend_from_slice(tail);
        v
    };
    ok(d, &["--seed", "3", "gen-catalog", "--products", "1200", "--out", "cat.jsonl"]);
    ok(d, &["index", "--catalog", "cat.jsonl", "--out", "cat.idx"]);
    assert!(read_index(&d.join("cat.idx")).unwrap().doc_count() == 1200);
    ok(d, &with(&["distill"], &["--size", "40", "--out", "distill.jsonl"]));
    ok(d, &["--seed", "3", "train-sft", "--distill", "distill.jsonl", "--out", "sft.json", "--iterations", "5"]);
    ok(d, &with(&["train-grpo"], &["--init", "sft.json", "--out", "full.json", "--log", "grpo.jsonl", "--iterations", "3", "--group-size", "4"]));
    ok(d, &with(&["train-grpo"], &["--init", "sft.json", "--out", "pt.json", "--iterations", "3", "--group-size", "4", "--reward-mix", "per-task"]));
    let full = read_checkpoint(&d.join("full.json")).unwrap();
    assert!(full.ctr.is_some());
    assert_eq!(read_jsonl::<serde_json::Value>(&d.join("grpo.jsonl")).unwrap().len(), 3);

    ok(d, &with(&["simulate"], &["--params", "full.json", "--sessions", "20", "--out", "events.jsonl", "--ctr-out", "ctr.json"]));
    let events: Vec<SessionEvent> = read_jsonl(&d.join("events.jsonl")).unwrap();
    assert_eq!(events.iter().filter(|e| e.kind == "end").count(), 20);
    assert!(d.join("ctr.json").exists());

    let out = ok(
        d,
        &with(
            &["eval"],
            &["--ablation", "all", "--format", "json", "--full", "full.json", "--sft", "sft.json", "--per-task", "pt.json", "--sessions", "30"],
        ),
    );
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let rows = report["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 7);
    for r in rows {
        for m in ["p_at_10", "r_at_10", "ndcg_at_10", "ctr", "ucvr"] {
            let v = r[m].as_f64().unwrap();
            assert!((0.0..=1.0).contains(&v), "{m} = {v}");
        }
    }
    let again = ok(
        d,
        &with(
            &["eval"],
            &["--ablation", "all", "--format", "json", "--full", "full.json", "--sft", "sft.json", "--per-task", "pt.json", "--sessions", "30"],
        ),
    );
    assert_eq!(out.stdout, again.stdout);
    let text = ok(d, &with(&["eval"], &["--ablation", "rule-based", "--sessions", "10"]));
    assert!(String::from_utf8_lossy(&text.stdout).contains("rule-based"));
    // a learned row without its checkpoint is a runtime error
    assert_eq!(facetloop(d, &with(&["eval"], &["--ablation", "full", "--sessions", "5"])).status.code(), Some(1));
}
