use std::path::{Path, PathBuf};

use diver::cli::{build_embedder, build_llm};
use diver::config::{LlmBackend, PipelineConfig};
use diver::error::AppError;
use diver::pipeline::{run_pipeline, Backends, PipelineOutput};

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/toy")
}

fn toy_config(run_dir: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::load(&fixture().join("pipeline.conf")).unwrap();
    cfg.run_dir = run_dir.to_path_buf();
    cfg
}

fn run(cfg: &PipelineConfig) -> Result<PipelineOutput, AppError> {
    let embedder = build_embedder(cfg)?;
    let llm = build_llm(cfg)?;
    run_pipeline(cfg, Backends { embedder: embedder.as_ref(), llm: llm.as_ref() })
}

#[test]
fn toy_run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config(&dir.path().join("run"));
    let out = run(&cfg).unwrap();
    for f in [
        "config.snapshot",
        "cleaned.jsonl",
        "chunks.jsonl",
        "bm25.idx",
        "dense.idx",
        "bm25.trec",
        "expanded.jsonl",
        "hybrid.trec",
        "final.trec",
        "report.json",
        "report.txt",
    ] {
        assert!(cfg.run_dir.join(f).is_file(), "{f} missing");
    }
    assert_eq!(out.report.documents, 12);
    assert_eq!(out.report.queries, 3);
    assert_eq!(out.report.judged_queries, 3);
    assert_eq!(out.run.len(), 3);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(cfg.run_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["run_id"].as_str().unwrap().len(), 12);
    let trec = std::fs::read_to_string(cfg.run_dir.join("final.trec")).unwrap();
    assert!(trec.lines().all(|l| l.split_whitespace().count() == 6));
}

#[test]
fn repeated_runs_are_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = toy_config(&dir.path().join("a"));
    let b = toy_config(&dir.path().join("b"));
    run(&a).unwrap();
    run(&b).unwrap();
    for f in ["final.trec", "hybrid.trec", "bm25.trec", "expanded.jsonl"] {
        let x = std::fs::read(a.run_dir.join(f)).unwrap();
        let y = std::fs::read(b.run_dir.join(f)).unwrap();
        assert_eq!(x, y, "{f} differs between runs");
    }
}

#[test]
fn bad_weights_fail_before_any_work() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = toy_config(&dir.path().join("run"));
    cfg.set("rerank.w_rerank", "0.7").unwrap();
    let err = run(&cfg).unwrap_err();
    assert_eq!(err.exit_code(), 2, "{err}");
    assert!(!cfg.run_dir.exists());
}

#[test]
fn missing_corpus_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = toy_config(&dir.path().join("run"));
    cfg.corpus = dir.path().join("absent.jsonl");
    assert_eq!(run(&cfg).unwrap_err().exit_code(), 2);
    assert!(!cfg.run_dir.exists());
}

#[test]
fn recorded_cassette_replays_the_same_run() {
    let dir = tempfile::tempdir().unwrap();
    let tape = dir.path().join("tape.jsonl");
    let mut rec = toy_config(&dir.path().join("rec"));
    rec.cassette = Some(tape.clone());
    rec.record = true;
    run(&rec).unwrap();
    assert!(std::fs::read_to_string(&tape).unwrap().lines().count() > 0);

    let mut replay = toy_config(&dir.path().join("replay"));
    replay.llm_backend = LlmBackend::Replay;
    replay.cassette = Some(tape);
    run(&replay).unwrap();
    assert_eq!(
        std::fs::read(rec.run_dir.join("final.trec")).unwrap(),
        std::fs::read(replay.run_dir.join("final.trec")).unwrap()
    );
}

#[test]
fn replay_without_a_recording_is_a_backend_failure() {
    let dir = tempfile::tempdir().unwrap();
    let tape = dir.path().join("empty.jsonl");
    std::fs::write(&tape, "").unwrap();
    let mut cfg = toy_config(&dir.path().join("run"));
    cfg.llm_backend = LlmBackend::Replay;
    cfg.cassette = Some(tape);
    assert_eq!(run(&cfg).unwrap_err().exit_code(), 3);
}
