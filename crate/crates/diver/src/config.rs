//! Pipeline configuration in a flat `key = value` text format.
//!
//! Blank lines and lines starting with `#` are ignored. Free-text values may
//! be written as JSON strings (`expand.separator = "\n"`); anything else is
//! taken verbatim after trimming. Relative paths in a file resolve against the
//! file's directory. `key=value` overrides apply on top.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use diver_core::bm25::{Analyzer, Bm25Params};
use diver_core::expand::ExpansionConfig;
use diver_core::preprocess::ChunkParams;
use diver_core::rerank::RerankConfig;

use crate::error::{AppError, AppResult};
use crate::jsonl::FieldMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LlmBackend {
    Mock,
    Remote,
    Replay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbedBackend {
    Hash,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RerankMode {
    Point,
    List,
    Both,
}

macro_rules! keyword_enum {
    ($ty:ty, $what:literal, $($name:literal => $v:expr),+) => {
        impl FromStr for $ty {
            type Err = AppError;
            fn from_str(s: &str) -> AppResult<Self> {
                match s {
                    $($name => Ok($v),)+
                    other => Err(AppError::Config(format!(
                        concat!("unknown ", $what, " `{}` (expected one of: {})"),
                        other,
                        [$($name),+].join(", ")
                    ))),
                }
            }
        }
        impl $ty {
            pub fn as_str(&self) -> &'static str {
                $(if *self == $v { return $name; })+
                unreachable!()
            }
        }
    };
}

keyword_enum!(LlmBackend, "llm backend", "mock" => LlmBackend::Mock, "remote" => LlmBackend::Remote, "replay" => LlmBackend::Replay);
keyword_enum!(EmbedBackend, "embedding backend", "hash" => EmbedBackend::Hash, "remote" => EmbedBackend::Remote);
keyword_enum!(RerankMode, "rerank mode", "point" => RerankMode::Point, "list" => RerankMode::List, "both" => RerankMode::Both);

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub corpus: PathBuf,
    pub queries: PathBuf,
    /// Separate judgments file; when absent, gold ids come from the queries.
    pub judgments: Option<PathBuf>,
    pub run_dir: PathBuf,
    pub seed: u64,
    pub tag: String,
    pub fields: FieldMap,
    pub permissive: bool,
    pub chunk: ChunkParams,
    pub bm25: Bm25Params,
    pub analyzer: Analyzer,
    pub embed_backend: EmbedBackend,
    pub embed_dim: usize,
    pub query_instruction: Option<String>,
    pub w_dense: f64,
    /// Depth of each retriever's list before normalization and fusion.
    pub candidates: usize,
    pub expansion: ExpansionConfig,
    pub rerank: RerankConfig,
    pub rerank_mode: RerankMode,
    /// Hybrid candidates handed to the reranker.
    pub rerank_depth: usize,
    /// Document text shown to the reranker is cut to this many tokens.
    pub rerank_doc_tokens: usize,
    pub prompt_dir: Option<PathBuf>,
    pub llm_backend: LlmBackend,
    pub llm_model: String,
    pub llm_script: Option<PathBuf>,
    pub llm_fallback: Option<String>,
    pub cassette: Option<PathBuf>,
    pub record: bool,
    pub max_in_flight: usize,
    pub max_attempts: u32,
    pub timeout_secs: u64,
    pub workers: usize,
    pub eval_k: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            corpus: PathBuf::from("corpus.jsonl"),
            queries: PathBuf::from("queries.jsonl"),
            judgments: None,
            run_dir: PathBuf::from("runs/default"),
            seed: 7,
            tag: "diver".into(),
            fields: FieldMap::default(),
            permissive: false,
            chunk: ChunkParams::default(),
            bm25: Bm25Params::default(),
            analyzer: Analyzer { remove_stopwords: true, stem: true },
            embed_backend: EmbedBackend::Hash,
            embed_dim: 256,
            query_instruction: None,
            w_dense: 0.5,
            candidates: 2000,
            expansion: ExpansionConfig::default(),
            rerank: RerankConfig::default(),
            rerank_mode: RerankMode::Both,
            rerank_depth: 100,
            rerank_doc_tokens: 512,
            prompt_dir: None,
            llm_backend: LlmBackend::Mock,
            llm_model: String::new(),
            llm_script: None,
            llm_fallback: None,
            cassette: None,
            record: false,
            max_in_flight: 8,
            max_attempts: 3,
            timeout_secs: 120,
            workers: 1,
            eval_k: 10,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> AppResult<T> {
    value.parse().map_err(|_| AppError::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> AppResult<bool> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(AppError::Config(format!("`{key}`: expected true or false, got `{value}`"))),
    }
}

fn text(key: &str, value: &str) -> AppResult<String> {
    if value.starts_with('"') {
        serde_json::from_str(value).map_err(|e| AppError::Config(format!("`{key}`: bad quoted string: {e}")))
    } else {
        Ok(value.to_string())
    }
}

fn optional_text(key: &str, value: &str) -> AppResult<Option<String>> {
    Ok(Some(text(key, value)?).filter(|s| !s.is_empty()))
}

fn quoted(s: &str) -> String {
    serde_json::to_string(s).expect("strings serialize")
}

fn path_text(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl PipelineConfig {
    /// Parses config text; relative paths resolve against `base`.
    pub fn parse_str(input: &str, base: Option<&Path>) -> AppResult<Self> {
        let mut cfg = Self::default();
        for (i, raw) in input.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| AppError::Config(format!("line {}: expected `key = value`", i + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| AppError::Config(format!("line {}: {}", i + 1, e.message())))?;
        }
        if let Some(base) = base {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> AppResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::Config(format!("{}: {e}", path.display())))?;
        Self::parse_str(&text, path.parent())
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> AppResult<()> {
        for o in overrides {
            let o = o.as_ref();
            let (key, value) =
                o.split_once('=').ok_or_else(|| AppError::Config(format!("override `{o}`: expected key=value")))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.corpus);
        fix(&mut self.queries);
        fix(&mut self.run_dir);
        for p in
            [&mut self.judgments, &mut self.prompt_dir, &mut self.llm_script, &mut self.cassette].into_iter().flatten()
        {
            fix(p);
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> AppResult<()> {
        let opt_path = |v: &str| Some(PathBuf::from(v)).filter(|p| !p.as_os_str().is_empty());
        match key {
            "corpus" => self.corpus = PathBuf::from(value),
            "queries" => self.queries = PathBuf::from(value),
            "judgments" => self.judgments = opt_path(value),
            "run_dir" => self.run_dir = PathBuf::from(value),
            "seed" => self.seed = parse(key, value)?,
            "tag" => self.tag = text(key, value)?,
            "fields.doc_id" => self.fields.doc_id = text(key, value)?,
            "fields.doc_text" => self.fields.doc_text = text(key, value)?,
            "fields.query_id" => self.fields.query_id = text(key, value)?,
            "fields.query_text" => self.fields.query_text = text(key, value)?,
            "fields.gold_ids" => self.fields.gold_ids = text(key, value)?,
            "fields.excluded_ids" => self.fields.excluded_ids = text(key, value)?,
            "load.permissive" => self.permissive = parse_bool(key, value)?,
            "chunk.max_tokens" => self.chunk.max_chunk_tokens = parse(key, value)?,
            "chunk.threshold" => self.chunk.similarity_threshold = parse(key, value)?,
            "chunk.overlap" => self.chunk.overlap_fraction = parse(key, value)?,
            "chunk.min_sentences" => self.chunk.min_sentences_per_chunk = parse(key, value)?,
            "bm25.k1" => self.bm25.k1 = parse(key, value)?,
            "bm25.b" => self.bm25.b = parse(key, value)?,
            "bm25.stopwords" => self.analyzer.remove_stopwords = parse_bool(key, value)?,
            "bm25.stem" => self.analyzer.stem = parse_bool(key, value)?,
            "dense.backend" => self.embed_backend = value.parse()?,
            "dense.dim" => self.embed_dim = parse(key, value)?,
            "dense.query_instruction" => self.query_instruction = optional_text(key, value)?,
            "hybrid.w_dense" => self.w_dense = parse(key, value)?,
            "hybrid.candidates" => self.candidates = parse(key, value)?,
            "expand.rounds" => self.expansion.rounds = parse(key, value)?,
            "expand.top_k" => self.expansion.top_k = parse(key, value)?,
            "expand.doc_tokens" => self.expansion.doc_truncate_tokens = parse(key, value)?,
            "expand.temperature" => self.expansion.temperature = parse(key, value)?,
            "expand.separator" => self.expansion.separator = text(key, value)?,
            "expand.max_output_tokens" => self.expansion.max_output_tokens = parse(key, value)?,
            "rerank.mode" => self.rerank_mode = value.parse()?,
            "rerank.depth" => self.rerank_depth = parse(key, value)?,
            "rerank.doc_tokens" => self.rerank_doc_tokens = parse(key, value)?,
            "rerank.scale_max" => self.rerank.scale_max = parse(key, value)?,
            "rerank.w_rerank" => self.rerank.w_rerank = parse(key, value)?,
            "rerank.w_retriever" => self.rerank.w_retriever = parse(key, value)?,
            "rerank.listwise_pool" => self.rerank.listwise_pool = parse(key, value)?,
            "rerank.w_point" => self.rerank.w_point = parse(key, value)?,
            "rerank.w_list" => self.rerank.w_list = parse(key, value)?,
            "rerank.parse_retries" => self.rerank.parse_retries = parse(key, value)?,
            "rerank.window" => self.rerank.window = parse(key, value)?,
            "rerank.stride" => self.rerank.stride = parse(key, value)?,
            "rerank.temperature" => self.rerank.temperature = parse(key, value)?,
            "rerank.max_output_tokens" => self.rerank.max_output_tokens = parse(key, value)?,
            "rerank.prompt_dir" => self.prompt_dir = opt_path(value),
            "llm.backend" => self.llm_backend = value.parse()?,
            "llm.model" => self.llm_model = text(key, value)?,
            "llm.script" => self.llm_script = opt_path(value),
            "llm.fallback" => self.llm_fallback = optional_text(key, value)?,
            "llm.cassette" => self.cassette = opt_path(value),
            "llm.record" => self.record = parse_bool(key, value)?,
            "llm.max_in_flight" => self.max_in_flight = parse(key, value)?,
            "llm.max_attempts" => self.max_attempts = parse(key, value)?,
            "llm.timeout_secs" => self.timeout_secs = parse(key, value)?,
            "workers" => self.workers = parse(key, value)?,
            "eval.k" => self.eval_k = parse(key, value)?,
            _ => return Err(AppError::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Every key with its current value, in canonical order. Parsing the
    /// rendered snapshot reproduces the config.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let b = |v: bool| v.to_string();
        vec![
            ("corpus", self.corpus.display().to_string()),
            ("queries", self.queries.display().to_string()),
            ("judgments", path_text(&self.judgments)),
            ("run_dir", self.run_dir.display().to_string()),
            ("seed", self.seed.to_string()),
            ("tag", quoted(&self.tag)),
            ("fields.doc_id", quoted(&self.fields.doc_id)),
            ("fields.doc_text", quoted(&self.fields.doc_text)),
            ("fields.query_id", quoted(&self.fields.query_id)),
            ("fields.query_text", quoted(&self.fields.query_text)),
            ("fields.gold_ids", quoted(&self.fields.gold_ids)),
            ("fields.excluded_ids", quoted(&self.fields.excluded_ids)),
            ("load.permissive", b(self.permissive)),
            ("chunk.max_tokens", self.chunk.max_chunk_tokens.to_string()),
            ("chunk.threshold", format!("{:?}", self.chunk.similarity_threshold)),
            ("chunk.overlap", format!("{:?}", self.chunk.overlap_fraction)),
            ("chunk.min_sentences", self.chunk.min_sentences_per_chunk.to_string()),
            ("bm25.k1", format!("{:?}", self.bm25.k1)),
            ("bm25.b", format!("{:?}", self.bm25.b)),
            ("bm25.stopwords", b(self.analyzer.remove_stopwords)),
            ("bm25.stem", b(self.analyzer.stem)),
            ("dense.backend", self.embed_backend.as_str().into()),
            ("dense.dim", self.embed_dim.to_string()),
            ("dense.query_instruction", quoted(self.query_instruction.as_deref().unwrap_or(""))),
            ("hybrid.w_dense", format!("{:?}", self.w_dense)),
            ("hybrid.candidates", self.candidates.to_string()),
            ("expand.rounds", self.expansion.rounds.to_string()),
            ("expand.top_k", self.expansion.top_k.to_string()),
            ("expand.doc_tokens", self.expansion.doc_truncate_tokens.to_string()),
            ("expand.temperature", format!("{:?}", self.expansion.temperature)),
            ("expand.separator", quoted(&self.expansion.separator)),
            ("expand.max_output_tokens", self.expansion.max_output_tokens.to_string()),
            ("rerank.mode", self.rerank_mode.as_str().into()),
            ("rerank.depth", self.rerank_depth.to_string()),
            ("rerank.doc_tokens", self.rerank_doc_tokens.to_string()),
            ("rerank.scale_max", self.rerank.scale_max.to_string()),
            ("rerank.w_rerank", format!("{:?}", self.rerank.w_rerank)),
            ("rerank.w_retriever", format!("{:?}", self.rerank.w_retriever)),
            ("rerank.listwise_pool", self.rerank.listwise_pool.to_string()),
            ("rerank.w_point", format!("{:?}", self.rerank.w_point)),
            ("rerank.w_list", format!("{:?}", self.rerank.w_list)),
            ("rerank.parse_retries", self.rerank.parse_retries.to_string()),
            ("rerank.window", self.rerank.window.to_string()),
            ("rerank.stride", self.rerank.stride.to_string()),
            ("rerank.temperature", format!("{:?}", self.rerank.temperature)),
            ("rerank.max_output_tokens", self.rerank.max_output_tokens.to_string()),
            ("rerank.prompt_dir", path_text(&self.prompt_dir)),
            ("llm.backend", self.llm_backend.as_str().into()),
            ("llm.model", quoted(&self.llm_model)),
            ("llm.script", path_text(&self.llm_script)),
            ("llm.fallback", quoted(self.llm_fallback.as_deref().unwrap_or(""))),
            ("llm.cassette", path_text(&self.cassette)),
            ("llm.record", b(self.record)),
            ("llm.max_in_flight", self.max_in_flight.to_string()),
            ("llm.max_attempts", self.max_attempts.to_string()),
            ("llm.timeout_secs", self.timeout_secs.to_string()),
            ("workers", self.workers.to_string()),
            ("eval.k", self.eval_k.to_string()),
        ]
    }

    pub fn snapshot(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Expansion settings with the configured model filled in.
    pub fn expansion_config(&self) -> ExpansionConfig {
        ExpansionConfig { model_id: self.llm_model.clone(), ..self.expansion.clone() }
    }

    /// Rerank settings with the configured model filled in.
    pub fn rerank_config(&self) -> RerankConfig {
        RerankConfig { model_id: self.llm_model.clone(), ..self.rerank.clone() }
    }

    /// Checks parameter ranges, weight sums and input paths. Nothing is read
    /// or written.
    pub fn validate(&self) -> AppResult<()> {
        let cfg = |e: diver_core::Error| AppError::Config(e.to_string());
        self.chunk.validate().map_err(cfg)?;
        self.bm25.validate().map_err(cfg)?;
        self.expansion.validate().map_err(cfg)?;
        self.rerank.validate().map_err(cfg)?;
        if !(0.0..=1.0).contains(&self.w_dense) {
            return Err(AppError::Config(format!("hybrid.w_dense must lie in [0, 1], got {}", self.w_dense)));
        }
        for (key, v) in [
            ("hybrid.candidates", self.candidates),
            ("rerank.depth", self.rerank_depth),
            ("rerank.doc_tokens", self.rerank_doc_tokens),
            ("dense.dim", self.embed_dim),
            ("workers", self.workers),
            ("eval.k", self.eval_k),
            ("llm.max_in_flight", self.max_in_flight),
        ] {
            if v == 0 {
                return Err(AppError::Config(format!("{key} must be >= 1")));
            }
        }
        if self.rerank_mode != RerankMode::Point && self.rerank_depth > self.rerank.listwise_pool {
            return Err(AppError::Config(format!(
                "rerank.depth ({}) exceeds rerank.listwise_pool ({})",
                self.rerank_depth, self.rerank.listwise_pool
            )));
        }
        if self.max_attempts == 0 {
            return Err(AppError::Config("llm.max_attempts must be >= 1".into()));
        }
        let must_exist = |key: &str, p: &Path| {
            if p.exists() {
                Ok(())
            } else {
                Err(AppError::Config(format!("{key}: {} does not exist", p.display())))
            }
        };
        must_exist("corpus", &self.corpus)?;
        must_exist("queries", &self.queries)?;
        if let Some(p) = &self.judgments {
            must_exist("judgments", p)?;
        }
        if let Some(p) = &self.prompt_dir {
            must_exist("rerank.prompt_dir", p)?;
        }
        if let Some(p) = &self.llm_script {
            must_exist("llm.script", p)?;
        }
        match self.llm_backend {
            LlmBackend::Replay => match &self.cassette {
                Some(p) => must_exist("llm.cassette", p)?,
                None => return Err(AppError::Config("llm.backend = replay needs llm.cassette".into())),
            },
            _ if self.record && self.cassette.is_none() => {
                return Err(AppError::Config("llm.record = true needs llm.cassette".into()))
            }
            _ => {}
        }
        Ok(())
    }
}
