use std::path::Path;
use std::process::{Command, Output};

fn difac(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_difac"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .env("RUST_BACKTRACE", "0")
        .output()
        .unwrap()
}

fn stdout(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

const SMALL: &[&str] = &["--per-class", "5", "--n-val", "60", "--n-test", "150", "--iters", "2", "--seed", "0"];

#[test]
fn synth_then_train_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    stdout(&difac(d, &["synth", "--like", "small", "--name", "toy", "--out", "data"]));
    assert!(d.join("data/toy.content").exists());

    let mut args = vec!["train", "--dataset", "toy", "--data-dir", "data", "--method", "gcn,difac", "--out", "runs", "--k", "2"];
    args.extend_from_slice(SMALL);
    let text = stdout(&difac(d, &args));
    assert!(text.lines().any(|l| l.starts_with("gcn")), "{text}");
    assert!(text.lines().any(|l| l.starts_with("difac")), "{text}");

    let again = stdout(&difac(d, &["report", "--dir", "runs"]));
    assert_eq!(text, again);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("cfg.json"),
        r#"{"dataset": "synth-small", "methods": ["gcn"], "seeds": [7], "loop": {"iterations": 1}}"#,
    )
    .unwrap();
    let mut args = vec!["train", "--config", "cfg.json", "--out", "runs"];
    args.extend_from_slice(SMALL);
    stdout(&difac(d, &args));
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("runs/manifest.json")).unwrap()).unwrap();
    let entries = manifest["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 1);
    assert_eq!(entries[0]["seed"], 0);
    assert_eq!(manifest["config"]["loop"]["iterations"], 2);
}

#[test]
fn missing_dataset_exits_with_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = difac(dir.path(), &["train", "--dataset", "cora", "--data-dir", "nowhere"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("cora"));
}

#[test]
fn theory_writes_grid_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let text = stdout(&difac(dir.path(), &["theory", "--steps", "9", "--mc-trials", "0", "--risk-seeds", "3", "--out", "th"]));
    assert!(text.contains("0 sign exceptions"), "{text}");
    let grid = std::fs::read_to_string(dir.path().join("th/posterior_grid.csv")).unwrap();
    assert_eq!(grid.lines().count(), 1 + 9 * 9 * 9);
    assert!(dir.path().join("th/risk_delta.json").exists());
}

#[test]
fn unknown_values_are_rejected_by_the_parser() {
    let dir = tempfile::tempdir().unwrap();
    assert!(!difac(dir.path(), &["train", "--method", "gat"]).status.success());
    assert!(!difac(dir.path(), &["sweep", "--kind", "depth", "--values", "1"]).status.success());
}
