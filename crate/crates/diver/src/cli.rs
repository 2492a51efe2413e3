//! Command-line interface. Each subcommand runs one stage; `run` executes the
//! whole pipeline from a config file.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use diver_core::contrastive::{train_toy, TrainConfig};
use diver_core::corpus::{Chunk, Document, Query};
use diver_core::dense::{Embedder, HashEmbedder};
use diver_core::eval::{evaluate_run, macro_average, RunFile, DEFAULT_K};
use diver_core::fusion::{minmax_normalize, Provenance, ScoredList};
use diver_core::llm::{Completion, LlmError};
use diver_core::preprocess::ChunkParams;
use serde::Serialize;

use crate::backends::{MockScript, Recorder, Replayer};
use crate::config::{EmbedBackend, LlmBackend, PipelineConfig, RerankMode};
use crate::curate::{curate_dataset, CurateOptions, PairRecord};
use crate::error::{AppError, AppResult};
use crate::index_io::{load_bm25, load_vectors, save_bm25, save_vectors};
use crate::jsonl::{
    load_chunks, load_corpus, load_judgments, load_queries, read_records, write_chunks, write_corpus, write_records,
    ExpandedRecord, LoadOptions, TrainingRecord,
};
use crate::pipeline::{
    build_bm25, build_vectors, chunk_documents, clean_documents, expand_queries, load_prompts, rerank_query,
    run_pipeline, Backends, HybridSearcher, PassageRetriever,
};
use crate::remote::{ChatClient, HttpCaller, RemoteEmbedder, RetryPolicy};
use crate::trec::{read_run, write_run, write_run_to};

#[derive(Debug, Parser)]
#[command(name = "diver", version, about = "Reasoning-intensive retrieval pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Settings file plus `key=value` overrides. Backend choice, seeds and field
/// names come from here for every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// Config file in `key = value` format.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set llm.backend=mock`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> AppResult<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        cfg.apply_overrides(&self.overrides)?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Point,
    List,
    Both,
}

impl From<ModeArg> for RerankMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Point => RerankMode::Point,
            ModeArg::List => RerankMode::List,
            ModeArg::Both => RerankMode::Both,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Clean document text.
    Clean {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Split cleaned documents into semantic chunks.
    Chunk {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4096)]
        max_tokens: usize,
        #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
        threshold: f64,
        #[arg(long, default_value_t = 0.2)]
        overlap: f64,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Build the BM25 index, and the dense index when `--dense-out` is given.
    Index {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        dense_out: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Search an index and print TREC run lines.
    Search {
        #[arg(long)]
        index: PathBuf,
        /// Dense index; when given, results are the hybrid fusion.
        #[arg(long)]
        dense: Option<PathBuf>,
        #[arg(long)]
        query: String,
        #[arg(long, default_value = "q")]
        query_id: String,
        #[arg(long, default_value_t = 100)]
        k: usize,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Iterative query expansion against an index.
    Expand {
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        dense: Option<PathBuf>,
        /// Documents (corpus or chunk records) supplying passage text.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 2)]
        rounds: usize,
        #[arg(long, default_value_t = 5)]
        topk: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Rerank the head of a run with the completion backend.
    Rerank {
        #[arg(long)]
        run: PathBuf,
        /// Documents (corpus or chunk records) supplying passage text.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::Both)]
        mode: ModeArg,
        #[arg(long, default_value_t = 100)]
        depth: usize,
        #[arg(long)]
        prompt_dir: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Score runs with nDCG@k. Repeat `--run`/`--judgments` for a macro average.
    Eval {
        #[arg(long, required = true)]
        run: Vec<PathBuf>,
        #[arg(long, required = true)]
        judgments: Vec<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_K)]
        k: usize,
        /// Also write the summary as JSON here.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Train the toy embedder with InfoNCE.
    TrainToy {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 32)]
        dim: usize,
        #[arg(long, default_value_t = 256)]
        features: usize,
        #[arg(long, default_value_t = 200)]
        epochs: usize,
        #[arg(long, default_value_t = 0.1)]
        lr: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        /// Write weights and loss trace as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Annotate and filter query-document pairs into training triples.
    Curate {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        generate_positives: bool,
        #[arg(long)]
        hard_negatives: bool,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Run every stage end to end.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

fn load_options(cfg: &PipelineConfig) -> LoadOptions {
    LoadOptions { fields: cfg.fields.clone(), permissive: cfg.permissive, allow_empty_text: false }
}

fn policy(cfg: &PipelineConfig) -> RetryPolicy {
    RetryPolicy {
        max_attempts: cfg.max_attempts,
        timeout: Duration::from_secs(cfg.timeout_secs),
        ..RetryPolicy::default()
    }
}

fn backend_config(e: LlmError) -> AppError {
    match e {
        LlmError::Config(m) => AppError::Config(m),
        other => AppError::Backend(other.to_string()),
    }
}

/// Completion backend selected by `llm.*` keys, wrapped in a cassette
/// recorder when `llm.record` is set.
pub fn build_llm(cfg: &PipelineConfig) -> AppResult<Box<dyn Completion + Sync>> {
    let base: Box<dyn Completion + Sync> = match cfg.llm_backend {
        LlmBackend::Mock => match (&cfg.llm_script, &cfg.llm_fallback) {
            (Some(p), fallback) => Box::new(MockScript::load(p, fallback.clone())?),
            (None, Some(f)) => Box::new(MockScript::by_digest(HashMap::new(), Some(f.clone()))),
            (None, None) => return Err(AppError::Config("llm.backend = mock needs llm.script or llm.fallback".into())),
        },
        LlmBackend::Remote => {
            let http = HttpCaller::new(
                remote_url(crate::remote::LLM_URL_VAR)?,
                remote_key(crate::remote::LLM_KEY_VAR),
                policy(cfg),
            )
            .map_err(backend_config)?
            .with_max_in_flight(cfg.max_in_flight)
            .with_run_id(cfg.tag.clone());
            let model = if cfg.llm_model.is_empty() {
                std::env::var(crate::remote::LLM_MODEL_VAR).unwrap_or_default()
            } else {
                cfg.llm_model.clone()
            };
            Box::new(ChatClient::new(http, model))
        }
        LlmBackend::Replay => {
            let p = cfg
                .cassette
                .as_ref()
                .ok_or_else(|| AppError::Config("llm.backend = replay needs llm.cassette".into()))?;
            return Ok(Box::new(Replayer::load(p)?));
        }
    };
    match (&cfg.cassette, cfg.record) {
        (Some(p), true) => Ok(Box::new(Recorder::new(base, p, cfg.tag.clone())?)),
        (None, true) => Err(AppError::Config("llm.record = true needs llm.cassette".into())),
        _ => Ok(base),
    }
}

fn remote_url(var: &str) -> AppResult<String> {
    std::env::var(var)
        .ok()
        .filter(|v| !v.trim().is_empty())
        .ok_or_else(|| AppError::Config(format!("{var} is not set")))
}

fn remote_key(var: &str) -> Option<String> {
    std::env::var(var).ok().filter(|v| !v.trim().is_empty())
}

/// Embedder selected by `dense.*` keys.
pub fn build_embedder(cfg: &PipelineConfig) -> AppResult<Box<dyn Embedder + Sync>> {
    match cfg.embed_backend {
        EmbedBackend::Hash => Ok(Box::new(HashEmbedder::with_seed(cfg.embed_dim, cfg.seed)?)),
        EmbedBackend::Remote => {
            let http = HttpCaller::new(
                remote_url(crate::remote::EMBED_URL_VAR)?,
                remote_key(crate::remote::EMBED_KEY_VAR),
                policy(cfg),
            )
            .map_err(backend_config)?
            .with_max_in_flight(cfg.max_in_flight)
            .with_run_id(cfg.tag.clone());
            let model = std::env::var(crate::remote::EMBED_MODEL_VAR).unwrap_or_default();
            Ok(Box::new(RemoteEmbedder::new(http, model, cfg.embed_dim)))
        }
    }
}

fn is_chunk_file(path: &Path) -> AppResult<bool> {
    let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("{}");
    let v: serde_json::Value =
        serde_json::from_str(first).map_err(|e| AppError::Data(format!("{}:1: invalid JSON: {e}", path.display())))?;
    Ok(v.get("chunk_index").is_some())
}

/// Document texts from a corpus file or a chunk file. Chunks are stitched
/// back together with their overlap prefixes removed.
pub fn load_texts(path: &Path, opts: &LoadOptions) -> AppResult<HashMap<String, String>> {
    if !is_chunk_file(path)? {
        return Ok(load_corpus(path, opts)?.records.into_iter().map(|d| (d.id, d.text)).collect());
    }
    let mut chunks: Vec<Chunk> = load_chunks(path)?;
    chunks.sort_by(|a, b| a.doc_id.cmp(&b.doc_id).then(a.chunk_index.cmp(&b.chunk_index)));
    let mut texts: HashMap<String, String> = HashMap::new();
    for c in &chunks {
        let t = texts.entry(c.doc_id.clone()).or_default();
        if !t.is_empty() {
            t.push(' ');
        }
        t.push_str(c.core_text().trim());
    }
    Ok(texts)
}

fn load_query_list(path: &Path, opts: &LoadOptions) -> AppResult<Vec<Query>> {
    Ok(load_queries(path, opts)?.0.records)
}

#[derive(Serialize)]
struct TrainDump<'a> {
    feature_dim: usize,
    embed_dim: usize,
    weights: &'a [f64],
    trace: &'a [f64],
}

#[derive(Serialize)]
struct EvalDump {
    datasets: Vec<(String, f64)>,
    macro_mean: f64,
    per_query: Vec<(String, std::collections::BTreeMap<String, f64>)>,
}

/// Runs one parsed command, printing results to `out`.
pub fn execute(command: Command, out: &mut dyn Write) -> AppResult<()> {
    let stdout_err = |e: std::io::Error| AppError::Data(format!("writing output: {e}"));
    match command {
        Command::Clean { input, out: path, cfg } => {
            let cfg = cfg.resolve()?;
            let loaded = load_corpus(&input, &load_options(&cfg))?;
            let cleaned = clean_documents(&loaded.records)?;
            write_corpus(&path, &cleaned, &cfg.fields)?;
            writeln!(out, "cleaned {} documents ({} skipped lines)", cleaned.len(), loaded.skipped.len())
                .map_err(stdout_err)?;
        }
        Command::Chunk { input, out: path, max_tokens, threshold, overlap, cfg } => {
            let cfg = cfg.resolve()?;
            let params = ChunkParams {
                max_chunk_tokens: max_tokens,
                similarity_threshold: threshold,
                overlap_fraction: overlap,
                ..cfg.chunk
            };
            params.validate().map_err(|e| AppError::Config(e.to_string()))?;
            let docs: Vec<Document> = load_corpus(&input, &load_options(&cfg))?.records;
            let embedder = build_embedder(&cfg)?;
            let chunks = chunk_documents(&docs, embedder.as_ref(), &params, cfg.workers)?;
            write_chunks(&path, &chunks)?;
            writeln!(out, "wrote {} chunks from {} documents", chunks.len(), docs.len()).map_err(stdout_err)?;
        }
        Command::Index { input, out: path, dense_out, cfg } => {
            let cfg = cfg.resolve()?;
            let chunks = load_chunks(&input)?;
            save_bm25(&path, &build_bm25(&chunks, cfg.bm25, cfg.analyzer)?)?;
            if let Some(d) = dense_out {
                let embedder = build_embedder(&cfg)?;
                save_vectors(&d, &build_vectors(&chunks, embedder.as_ref())?)?;
            }
            writeln!(out, "indexed {} chunks", chunks.len()).map_err(stdout_err)?;
        }
        Command::Search { index, dense, query, query_id, k, cfg } => {
            let cfg = cfg.resolve()?;
            if k == 0 {
                return Err(AppError::Config("--k must be >= 1".into()));
            }
            let bm25 = load_bm25(&index)?;
            let vectors = dense.as_deref().map(load_vectors).transpose()?;
            let embedder = build_embedder(&cfg)?;
            let searcher = HybridSearcher {
                bm25: &bm25,
                vectors: vectors.as_ref(),
                embedder: embedder.as_ref(),
                instruction: cfg.query_instruction.as_deref(),
                candidates: cfg.candidates.max(k),
                w_dense: cfg.w_dense,
            };
            let mut list = if vectors.is_some() { searcher.hybrid(&query)? } else { searcher.sparse(&query)? };
            list.truncate(k);
            let mut run = RunFile::new();
            run.insert_list(query_id, &list)?;
            write_run_to(out, &run, &cfg.tag).map_err(stdout_err)?;
        }
        Command::Expand { queries, index, dense, corpus, rounds, topk, out: path, cfg } => {
            let cfg = cfg.resolve()?;
            let opts = load_options(&cfg);
            let queries = load_query_list(&queries, &opts)?;
            let texts = load_texts(&corpus, &opts)?;
            let bm25 = load_bm25(&index)?;
            let vectors = dense.as_deref().map(load_vectors).transpose()?;
            let embedder = build_embedder(&cfg)?;
            let llm = build_llm(&cfg)?;
            let searcher = HybridSearcher {
                bm25: &bm25,
                vectors: vectors.as_ref(),
                embedder: embedder.as_ref(),
                instruction: cfg.query_instruction.as_deref(),
                candidates: cfg.candidates,
                w_dense: if vectors.is_some() { cfg.w_dense } else { 0.0 },
            };
            let retriever = PassageRetriever { searcher: &searcher, texts: &texts };
            let mut exp = cfg.expansion_config();
            exp.rounds = rounds;
            exp.top_k = topk;
            let records = expand_queries(&queries, &retriever, llm.as_ref(), &exp, cfg.workers)?;
            write_records(&path, &records)?;
            writeln!(out, "expanded {} queries", records.len()).map_err(stdout_err)?;
        }
        Command::Rerank { run, corpus, queries, mode, depth, prompt_dir, out: path, cfg } => {
            let cfg = cfg.resolve()?;
            let rcfg = cfg.rerank_config();
            rcfg.validate().map_err(|e| AppError::Config(e.to_string()))?;
            let mode = RerankMode::from(mode);
            if depth == 0 || (mode != RerankMode::Point && depth > rcfg.listwise_pool) {
                return Err(AppError::Config(format!(
                    "--depth must lie in 1..={} for listwise modes",
                    rcfg.listwise_pool
                )));
            }
            let prompts = load_prompts(prompt_dir.as_deref().or(cfg.prompt_dir.as_deref()))?;
            let opts = load_options(&cfg);
            let texts = load_texts(&corpus, &opts)?;
            let queries: HashMap<String, String> = load_query_text(&queries, &opts)?;
            let input = read_run(&run)?;
            let llm = build_llm(&cfg)?;
            let mut result = RunFile::new();
            for (qid, ranking) in input.iter() {
                let q = queries
                    .get(qid)
                    .ok_or_else(|| AppError::Data(format!("run query `{qid}` is not in the queries file")))?;
                let mut list = ScoredList::from_ordered(ranking.to_vec(), Provenance::Hybrid)?;
                if list.entries().iter().any(|(_, s)| !(0.0..=1.0).contains(s)) {
                    list = minmax_normalize(&list)?;
                }
                let o =
                    rerank_query(q, &list, &texts, llm.as_ref(), &rcfg, &prompts, mode, depth, cfg.rerank_doc_tokens)
                        .map_err(|e| e.context(format!("query `{qid}`")))?;
                result.insert_list(qid, &o.list)?;
            }
            write_run(&path, &result, &cfg.tag)?;
            writeln!(out, "reranked {} queries", result.len()).map_err(stdout_err)?;
        }
        Command::Eval { run, judgments, k, json } => {
            if run.len() != judgments.len() {
                return Err(AppError::Config("give one --judgments per --run".into()));
            }
            if k == 0 {
                return Err(AppError::Config("--k must be >= 1".into()));
            }
            let mut evals = Vec::new();
            for (r, j) in run.iter().zip(&judgments) {
                let name = r.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                let e = evaluate_run(&read_run(r)?, &load_judgments(j, &LoadOptions::default())?, k)?;
                for q in &e.missing {
                    log::warn!("{}: judged query `{q}` missing from run; scored 0", r.display());
                }
                evals.push((name, e));
            }
            let summary = macro_average(evals.iter().map(|(n, e)| (n.as_str(), e)))?;
            let width =
                evals.iter().flat_map(|(_, e)| e.per_query.keys().map(String::len)).chain([8]).max().unwrap_or(8);
            for (name, e) in &evals {
                writeln!(out, "# {name}").map_err(stdout_err)?;
                for (q, s) in &e.per_query {
                    writeln!(out, "{q:<width$}  {s:.4}").map_err(stdout_err)?;
                }
                writeln!(out, "{:<width$}  {:.4}", "mean", e.mean).map_err(stdout_err)?;
            }
            if evals.len() > 1 {
                writeln!(out, "{:<width$}  {:.4}", "macro", summary.macro_mean).map_err(stdout_err)?;
            }
            if let Some(p) = json {
                let dump = EvalDump {
                    datasets: summary.per_dataset.clone(),
                    macro_mean: summary.macro_mean,
                    per_query: evals.iter().map(|(n, e)| (n.clone(), e.per_query.clone())).collect(),
                };
                let text = serde_json::to_string_pretty(&dump).map_err(|e| AppError::Data(e.to_string()))?;
                std::fs::write(&p, text + "\n").map_err(|e| AppError::io(&p, e))?;
            }
        }
        Command::TrainToy { data, dim, features, epochs, lr, seed, temperature, out: path } => {
            let records: Vec<TrainingRecord> = read_records(&data)?;
            let examples = records
                .into_iter()
                .enumerate()
                .map(|(i, r)| {
                    r.into_example().map_err(|e| AppError::Data(format!("{}: record {}: {e}", data.display(), i + 1)))
                })
                .collect::<AppResult<Vec<_>>>()?;
            let config = TrainConfig {
                epochs,
                learning_rate: lr,
                seed,
                feature_dim: features,
                embed_dim: dim,
                temperature,
                ..TrainConfig::default()
            };
            let outcome = train_toy(&examples, &config).map_err(|f| match f.error {
                diver_core::Error::Diverged { .. } => {
                    AppError::Data(format!("{} after {} epochs", f.error, f.trace.len()))
                }
                e @ (diver_core::Error::OutOfRange { .. } | diver_core::Error::InvalidParameter(_)) => {
                    AppError::Config(e.to_string())
                }
                e => AppError::from(e),
            })?;
            let first = outcome.trace.first().copied().unwrap_or(f64::NAN);
            let last = outcome.trace.last().copied().unwrap_or(f64::NAN);
            writeln!(out, "examples {}  epochs {epochs}  loss {first:.6} -> {last:.6}", examples.len())
                .map_err(stdout_err)?;
            if let Some(p) = path {
                let e = &outcome.embedder;
                let dump = TrainDump {
                    feature_dim: e.feature_dim(),
                    embed_dim: e.embed_dim(),
                    weights: e.weights(),
                    trace: &outcome.trace,
                };
                let text = serde_json::to_string(&dump).map_err(|e| AppError::Data(e.to_string()))?;
                std::fs::write(&p, text + "\n").map_err(|e| AppError::io(&p, e))?;
            }
        }
        Command::Curate { pairs, out: path, generate_positives, hard_negatives, cfg } => {
            let cfg = cfg.resolve()?;
            let pairs: Vec<PairRecord> = read_records(&pairs)?;
            let llm = build_llm(&cfg)?;
            let result = curate_dataset(pairs, llm.as_ref(), CurateOptions { generate_positives, hard_negatives })?;
            write_records(&path, &result.records)?;
            let s = &result.stats;
            writeln!(
                out,
                "pairs {}  positives {}  negatives {}  dropped {}  unparsable {}  generated +{} -{}  records {}",
                s.pairs,
                s.positives,
                s.negatives,
                s.dropped,
                s.unparsable,
                s.generated_positives,
                s.generated_negatives,
                result.records.len()
            )
            .map_err(stdout_err)?;
        }
        Command::Run { cfg } => {
            let cfg = cfg.resolve()?;
            cfg.validate()?;
            let embedder = build_embedder(&cfg)?;
            let llm = build_llm(&cfg)?;
            let output = run_pipeline(&cfg, Backends { embedder: embedder.as_ref(), llm: llm.as_ref() })?;
            out.write_all(output.report.table().as_bytes()).map_err(stdout_err)?;
            writeln!(out, "artifacts in {}", cfg.run_dir.display()).map_err(stdout_err)?;
        }
    }
    Ok(())
}

fn load_query_text(path: &Path, opts: &LoadOptions) -> AppResult<HashMap<String, String>> {
    let records: Vec<serde_json::Value> = read_records(path)?;
    let expanded = records.first().is_some_and(|r| r.get("original").is_some());
    if expanded {
        let rs: Vec<ExpandedRecord> = read_records(path)?;
        return Ok(rs.into_iter().map(|r| (r.id, r.original)).collect());
    }
    Ok(load_query_list(path, opts)?.into_iter().map(|q| (q.id, q.text)).collect())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match execute(cli.command, &mut lock) {
        Ok(()) => 0,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
