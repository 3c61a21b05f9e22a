use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn anchorsim(args: &[&str], cwd: &Path) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_anchorsim"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "anchorsim {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

const CONFIG: &str = r#"
schema_version = 1
seed = 3
output_dir = "out"

[scenario]
fixture = "roe_v_wade_test"

[population]
pool = "pool.json"

[sampling]
strategy = "stratified"
n = 15
"#;

#[test]
fn pool_network_sample_run_replay() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("gen.toml"), "pool_size = 30\nbelief_topics = [\"abortion_rights\"]\n").unwrap();
    anchorsim(&["profiles", "generate", "--config", "gen.toml", "--seed", "9", "--out", "pool.json"], d);
    anchorsim(
        &[
            "network", "build", "--pool", "pool.json", "--case", "roe_v_wade_test", "--out", "graph.json", "--export",
            "export.json",
        ],
        d,
    );
    let export: Value = serde_json::from_str(&std::fs::read_to_string(d.join("export.json")).unwrap()).unwrap();
    assert_eq!(export["nodes"].as_array().unwrap().len(), 30);

    let cohort = stdout_json(&anchorsim(
        &["sample", "--pool", "pool.json", "--scenario", "roe_v_wade_test", "--graph", "graph.json"],
        d,
    ));
    assert_eq!(cohort["report"]["realized"], 30);

    std::fs::write(d.join("run.toml"), CONFIG).unwrap();
    let last = stdout_json(&anchorsim(&["run", "--config", "run.toml"], d));
    assert_eq!(last["tick"], 15);
    let out = d.join("out");
    for f in ["events.jsonl", "metrics.json", "pool.json", "graph.json", "config.toml", "cohort.json"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }

    let replayed = anchorsim(&["replay", "--log", "out/events.jsonl", "--compare", "out/metrics.json"], d);
    let lines = String::from_utf8(replayed.stdout).unwrap();
    assert_eq!(lines.lines().count(), 16);
    let metrics = stdout_json(&anchorsim(&["metrics", "--log", "out/events.jsonl"], d));
    assert_eq!(metrics.as_array().unwrap().len(), 16);
    assert_eq!(metrics[15], last);
}

#[test]
fn compare_discourse_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("p.json"), r#"{"sentiment": {"positive": 0.2, "neutral": 0.3, "negative": 0.5}}"#).unwrap();
    std::fs::write(d.join("q.json"), r#"{"sentiment": {"positive": 0.2, "neutral": 0.3, "negative": 0.5}}"#).unwrap();
    let rows = stdout_json(&anchorsim(&["compare-discourse", "p.json", "q.json"], d));
    assert_eq!(rows[0]["dimension"], "sentiment");
    assert!((rows[0]["cosine_similarity"].as_f64().unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn bad_config_fails_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("run.toml"), CONFIG.replace("schema_version = 1", "schema_version = 4")).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_anchorsim"))
        .args(["run", "--config", "run.toml"])
        .current_dir(d)
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("schema_version 4"));
}
