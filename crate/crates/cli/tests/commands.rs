//! Drives the `orvos` binary through its commands on tiny corpora.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use orvos_core::dataset::{load_corpus, save_predictions};
use orvos_core::stream::{predict_corpus, SegmenterOptions, SegmenterRegistry};

const TINY: &str = r#"
seed = 3

[generator]
queries = 4
queries_per_video = 2
height = 16
width = 16
min_len = 6
max_len = 8

[model]
dim = 8
vis_dim = 4
memory_tokens = 2
n_max = 4
reasoner_heads = 2
agg_heads = 2
height = 16
width = 16

[train]
iterations = 3
unroll = 4
"#;

fn orvos(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_orvos")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Workspace {
    _dir: tempfile::TempDir,
    config: PathBuf,
    data: PathBuf,
    model: PathBuf,
}

fn prepared() -> Workspace {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(&config, TINY).unwrap();
    let data = dir.path().join("data");
    let model = dir.path().join("model");
    let out = orvos(&["gen", "--config", s(&config), "--out", s(&data)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = orvos(&["train", "--config", s(&config), "--data", s(&data), "--out", s(&model)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    Workspace {
        _dir: dir,
        config,
        data,
        model,
    }
}

#[test]
fn train_writes_checkpoint_and_loss_curve() {
    let w = prepared();
    assert!(w.model.join("model.ckpt").exists());
    let curve = std::fs::read_to_string(w.model.join("loss.csv")).unwrap();
    assert_eq!(curve.lines().next(), Some("iteration,loss"));
    assert_eq!(curve.lines().count(), 4);
    let stats = orvos(&["stats", "--data", s(&w.data)]);
    assert!(stats.status.success());
    assert!(String::from_utf8_lossy(&stats.stdout).contains("mean shifts per query"));
}

#[test]
fn oracle_predictions_score_one_everywhere() {
    let w = prepared();
    let corpus = load_corpus(&w.data).unwrap();
    let seg = SegmenterRegistry::builtin().build("oracle", &SegmenterOptions::default()).unwrap();
    let preds = w.data.with_file_name("oracle.jsonl");
    save_predictions(&preds, &predict_corpus(seg.as_ref(), &corpus).unwrap()).unwrap();
    let report = w.data.with_file_name("report.csv");
    let out = orvos(&[
        "eval", "--data", s(&w.data), "--preds", s(&preds), "--report", s(&report), "--per-category",
        "--shift-window", "2",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(&report).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("scope,category,J,F,JF"));
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 5, "{line}");
        if !fields[2].is_empty() {
            assert_eq!(&fields[2..], ["1.000000"; 3], "{line}");
        }
    }
}

#[test]
fn audit_passes_the_model_and_fails_the_mutant() {
    let w = prepared();
    let ckpt = w.model.join("model.ckpt");
    let base = ["audit", "--config", s(&w.config), "--data", s(&w.data), "--ckpt", s(&ckpt)];
    let ok = orvos(&base);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    let mut args = base.to_vec();
    args.extend(["--mutant", "leak-future"]);
    let bad = orvos(&args);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stdout).contains("FAIL"));

    let preds = w.data.with_file_name("preds.jsonl");
    let out = orvos(&[
        "run", "--config", s(&w.config), "--data", s(&w.data), "--ckpt", s(&ckpt), "--out", s(&preds), "--arm",
        "baseline",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[model]\ndepth = 3\n").unwrap();
    let out = orvos(&["gen", "--config", s(&bad), "--out", s(&dir.path().join("d"))]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert_eq!(stderr.lines().count(), 1, "{stderr}");
    assert_eq!(orvos(&["gen"]).status.code(), Some(2));
    assert_eq!(orvos(&["audit", "--data", "x", "--ckpt", "y", "--mutant", "peek"]).status.code(), Some(2));
    let missing = orvos(&["stats", "--data", s(&dir.path().join("nowhere"))]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn dumped_defaults_reload_and_generation_follows_the_seed() {
    let dir = tempfile::tempdir().unwrap();
    let dump = orvos(&["dump-config"]);
    assert!(dump.status.success());
    let cfg = dir.path().join("defaults.toml");
    std::fs::write(&cfg, &dump.stdout).unwrap();
    let text = String::from_utf8_lossy(&dump.stdout);
    assert!(text.contains("[train]") && text.contains("[generator]") && text.contains("[model]"));

    let tiny = dir.path().join("tiny.toml");
    std::fs::write(&tiny, TINY).unwrap();
    let gen = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        assert!(orvos(&["gen", "--config", s(&tiny), "--out", s(&out), "--seed", seed]).status.success());
        load_corpus(&out).unwrap()
    };
    assert_eq!(gen("a", "5"), gen("b", "5"));
    assert_ne!(gen("a2", "5"), gen("c", "6"));
}
