use std::path::Path;
use std::process::{Command, Output};

fn tagseq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tagseq"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: [&str; 6] = ["--train-docs", "60", "--dev-docs", "10", "--test-docs", "10"];

#[test]
fn synth_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let mut args = vec!["synth", "--seed", "7", "--out", p(out)];
        args.extend(SMALL);
        let o = tagseq(&args);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in ["train.jsonl", "dev.jsonl", "test.jsonl", "synth_manifest.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn train_generate_evaluate_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let mut args = vec!["synth", "--seed", "3", "--out", p(&data)];
    args.extend(SMALL);
    assert!(tagseq(&args).status.success());

    let cfg = dir.path().join("tiny.toml");
    std::fs::write(
        &cfg,
        "[model]\nd_model = 16\nheads = 2\nd_ff = 32\nencoder_layers = 1\ndecoder_layers = 1\n",
    )
    .unwrap();
    let run = dir.path().join("run");
    let o = tagseq(&[
        "train",
        "--preset",
        "desk",
        "--config",
        p(&cfg),
        "--order",
        "asc",
        "--epochs",
        "2",
        "--deterministic",
        "--train",
        p(&data.join("train.jsonl")),
        "--dev",
        p(&data.join("dev.jsonl")),
        "--out",
        p(&run),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["model.ckpt", "last.ckpt", "loss.csv", "manifest.json", "config.toml"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["model"]["d_model"], 16);
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 2);
    assert_eq!(std::fs::read_to_string(run.join("loss.csv")).unwrap().lines().count(), 3);

    let pred = dir.path().join("pred.jsonl");
    let o = tagseq(&[
        "generate",
        "--model",
        p(&run.join("model.ckpt")),
        "--input",
        p(&data.join("test.jsonl")),
        "--beam",
        "4",
        "--vote",
        "1",
        "--max-len",
        "12",
        "--emit-nbest",
        "--out",
        p(&pred),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let lines: Vec<serde_json::Value> = std::fs::read_to_string(&pred)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 10);
    assert!(lines.iter().all(|l| l["tags"].is_array() && l["nbest"].as_array().unwrap().len() == 4));

    let report = dir.path().join("report");
    let o = tagseq(&[
        "evaluate",
        "--pred",
        p(&pred),
        "--gold",
        p(&data.join("test.jsonl")),
        "--model",
        p(&run.join("model.ckpt")),
        "--out",
        p(&report),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("weighted"));
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(report.join("report.json")).unwrap()).unwrap();
    assert_eq!(r["documents"], 10);
    assert!(r["nbest_errors"]["outputs"].as_u64().is_some());
    assert_eq!(std::fs::read_to_string(report.join("per_document.csv")).unwrap().lines().count(), 11);
}

#[test]
fn missing_gold_file_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let pred = dir.path().join("p.jsonl");
    std::fs::write(&pred, "").unwrap();
    let gold = dir.path().join("missing.jsonl");
    let o = tagseq(&["evaluate", "--pred", p(&pred), "--gold", p(&gold), "--train", p(&pred)]);
    assert_eq!(o.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_str(stderr(&o).trim()).unwrap();
    assert_eq!(err["error"], "io");
    assert!(err["message"].as_str().unwrap().contains("missing.jsonl"));
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(tagseq(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(tagseq(&["synth", "--bogus"]).status.code(), Some(2));
    assert_eq!(tagseq(&["train", "--order", "sideways", "--train", "x", "--out", "y"]).status.code(), Some(2));
    assert_eq!(tagseq(&["evaluate", "--pred", "a", "--gold", "b"]).status.code(), Some(2));
}

#[test]
fn invalid_config_combination_names_both_keys() {
    let dir = tempfile::tempdir().unwrap();
    let o = tagseq(&[
        "train",
        "--heads",
        "7",
        "--dmodel",
        "64",
        "--train",
        "unused.jsonl",
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let msg = stderr(&o);
    assert!(msg.contains("heads") && msg.contains("d_model"), "{msg}");
}

#[test]
fn build_vocab_writes_three_files() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let mut args = vec!["synth", "--out", p(&data)];
    args.extend(SMALL);
    assert!(tagseq(&args).status.success());
    let out = dir.path().join("vocab");
    let o = tagseq(&["build-vocab", "--train", p(&data.join("train.jsonl")), "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("source_vocab.json")).unwrap()).unwrap();
    assert_eq!(v["words"][0], "<pad>");
    assert!(out.join("target_vocab.json").exists() && out.join("tag_freq.json").exists());
}
