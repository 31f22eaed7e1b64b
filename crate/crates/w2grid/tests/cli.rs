//! End-to-end tests of the compiled binary: exit codes, stream formats,
//! and shell-level round trips.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_w2grid"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("binary runs");
    assert!(
        out.status.success(),
        "w2grid {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

const FIGURE2_JSONL: &str = concat!(
    r#"{"tokens":["I","am","having","aching","in","legs","and","shoulders"],"#,
    r#""entities":[{"indices":[3,4,5],"type":"Symptom"},{"indices":[3,4,7],"type":"Symptom"}]}"#,
    "\n",
);

#[test]
fn encode_produces_the_expected_grid_dump() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "fig2.jsonl", FIGURE2_JSONL);
    let out = run_ok(&["encode", "--in", input.to_str().unwrap()]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("n=8\n"));
    for line in ["3\t4\tNNW", "4\t5\tNNW", "4\t7\tNNW", "5\t3\tTHW-Symptom", "7\t3\tTHW-Symptom"]
    {
        assert!(text.contains(line), "missing {line:?} in:\n{text}");
    }
    // Exactly the five tagged cells, nothing else.
    assert_eq!(text.lines().count(), 6);
}

#[test]
fn encode_then_decode_is_the_identity_on_entities() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "fig2.jsonl", FIGURE2_JSONL);
    let dump = dir.path().join("dump.txt");
    run_ok(&["encode", "--in", input.to_str().unwrap(), "--out", dump.to_str().unwrap()]);
    let out = run_ok(&["decode", "--in", dump.to_str().unwrap()]);
    let decoded: serde_json::Value =
        serde_json::from_str(String::from_utf8(out.stdout).unwrap().lines().next().unwrap())
            .unwrap();
    assert_eq!(
        decoded["entities"],
        serde_json::json!([
            {"indices": [3, 4, 5], "type": "Symptom"},
            {"indices": [3, 4, 7], "type": "Symptom"},
        ])
    );
}

#[test]
fn dump_grid_renders_tokens_and_labels() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "fig2.jsonl", FIGURE2_JSONL);
    let out = run_ok(&["dump-grid", "--in", input.to_str().unwrap(), "--index", "0"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("aching"));
    assert!(text.contains("NNW"));
    assert!(text.contains("THW-Symptom"));
}

#[test]
fn gen_synthetic_is_deterministic_and_valid_jsonl() {
    let a = run_ok(&["gen-synthetic", "--sentences", "10", "--seed", "4"]);
    let b = run_ok(&["gen-synthetic", "--sentences", "10", "--seed", "4"]);
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    assert_eq!(text.lines().count(), 10);
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["tokens"].is_array());
    }
}

#[test]
fn exit_codes_distinguish_usage_and_data_errors() {
    // Unknown subcommand: usage error.
    let out = bin().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    // Missing input file: data error.
    let out = bin().args(["encode", "--in", "/nonexistent.jsonl"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    // Malformed corpus: data error with a line number.
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.jsonl", "not json\n");
    let out = bin().args(["encode", "--in", bad.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
    // Help is a success.
    let out = bin().arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn train_is_deterministic_and_the_checkpoint_serves_eval_and_predict() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("train.jsonl");
    run_ok(&[
        "gen-synthetic",
        "--sentences", "12",
        "--min-len", "5",
        "--max-len", "8",
        "--seed", "2",
        "--out", data.to_str().unwrap(),
    ]);
    let cfg = write(
        dir.path(),
        "cfg.json",
        r#"{"d_word": 12, "d_h": 16, "d_ed": 4, "d_et": 4, "d_c": 8,
            "d_biaffine": 8, "d_pred_hidden": 8, "dilation_rates": [1],
            "dropout": 0.0, "weight_decay": 0.0, "epochs": 3, "seed": 9}"#,
    );
    let ckpt = dir.path().join("m.ckpt");
    let args = [
        "train",
        "--data", data.to_str().unwrap(),
        "--config", cfg.to_str().unwrap(),
        "--out", ckpt.to_str().unwrap(),
    ];
    let a = run_ok(&args);
    let b = run_ok(&args);
    assert_eq!(a.stdout, b.stdout, "training logs differ across identical runs");
    let text = String::from_utf8(a.stdout).unwrap();
    assert_eq!(text.lines().count(), 3); // epoch<TAB>loss<TAB>dev_f1
    for line in text.lines() {
        assert_eq!(line.split('\t').count(), 3);
    }
    let out = run_ok(&["eval", "--data", data.to_str().unwrap(), "--model", ckpt.to_str().unwrap()]);
    let report = String::from_utf8(out.stdout).unwrap();
    for key in ["micro.f1=", "overlapped.f1=", "discontinuous.f1="] {
        assert!(report.contains(key), "missing {key} in:\n{report}");
    }
    let out = run_ok(&[
        "predict",
        "--in", data.to_str().unwrap(),
        "--model", ckpt.to_str().unwrap(),
    ]);
    let preds = String::from_utf8(out.stdout).unwrap();
    assert_eq!(preds.lines().count(), 12);
}

#[test]
fn config_typos_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.jsonl");
    run_ok(&["gen-synthetic", "--sentences", "2", "--out", data.to_str().unwrap()]);
    let cfg = write(dir.path(), "typo.json", r#"{"d_wrod": 8}"#);
    let out = bin()
        .args(["train", "--data", data.to_str().unwrap(), "--config", cfg.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("d_wrod"));
}
