//! Stage functions and the end-to-end runner: load, clean, chunk, index,
//! BM25 baseline, expand, hybrid retrieve, rerank, evaluate.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use diver_core::bm25::{Analyzer, Bm25Index, Bm25Params};
use diver_core::corpus::{Chunk, Document, Judgments, Query};
use diver_core::dense::{dense_search, Embedder, VectorIndex};
use diver_core::eval::{evaluate_run, RunEvaluation, RunFile};
use diver_core::expand::{expand_query, ExpansionConfig, Passage, Retriever};
use diver_core::fusion::{hybrid_fuse, max_over_chunk_keys, minmax_normalize, Provenance, ScoredList};
use diver_core::llm::{Completion, CompletionRequest, LlmError};
use diver_core::preprocess::{chunk_document, clean_text, truncate_tokens, ChunkParams};
use diver_core::rerank::{
    combine_point_list, listwise_list, listwise_rank, pointwise_list, pointwise_score, PromptSet, RerankConfig,
};
use serde::Serialize;

use crate::backends::prompt_digest;
use crate::config::{PipelineConfig, RerankMode};
use crate::error::{AppError, AppResult, StageExt};
use crate::index_io::{save_bm25, save_vectors};
use crate::jsonl::{
    load_corpus, load_judgments, load_queries, write_chunks, write_corpus, write_records, ExpandedRecord, LoadOptions,
};
use crate::trec::write_run;

pub const POINTWISE_PROMPT_FILE: &str = "pointwise_v1.txt";
pub const LISTWISE_PROMPT_FILE: &str = "listwise_v1.txt";
const EMBED_BATCH: usize = 64;

/// Model backends for one run.
#[derive(Clone, Copy)]
pub struct Backends<'a> {
    pub embedder: &'a (dyn Embedder + Sync),
    pub llm: &'a (dyn Completion + Sync),
}

/// Maps `f` over `items` on up to `workers` threads. Results keep input
/// order, and the reported error is the one for the earliest item.
pub fn par_map<T, R, F>(items: &[T], workers: usize, f: F) -> AppResult<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> AppResult<R> + Sync,
{
    if workers <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<AppResult<R>>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..workers.min(items.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(item) = items.get(i) else { break };
                let r = f(item);
                *slots[i].lock().expect("result slot") = Some(r);
            });
        }
    });
    slots.into_iter().map(|m| m.into_inner().expect("result slot").expect("every slot filled")).collect()
}

pub fn clean_documents(docs: &[Document]) -> AppResult<Vec<Document>> {
    docs.iter().map(|d| Document::new(d.id.clone(), clean_text(&d.text)).map_err(AppError::from)).collect()
}

pub fn chunk_documents(
    docs: &[Document],
    embedder: &(dyn Embedder + Sync),
    params: &ChunkParams,
    workers: usize,
) -> AppResult<Vec<Chunk>> {
    let per_doc = par_map(docs, workers, |d| {
        chunk_document(d, embedder, params).map_err(|e| AppError::from(e).context(format!("document `{}`", d.id)))
    })?;
    Ok(per_doc.into_iter().flatten().collect())
}

pub fn build_bm25(chunks: &[Chunk], params: Bm25Params, analyzer: Analyzer) -> AppResult<Bm25Index> {
    Ok(Bm25Index::build(chunks.iter().map(|c| (c.key(), c.text.clone())), params, analyzer)?)
}

pub fn build_vectors(chunks: &[Chunk], embedder: &(dyn Embedder + Sync)) -> AppResult<VectorIndex> {
    let mut items = Vec::with_capacity(chunks.len());
    for batch in chunks.chunks(EMBED_BATCH) {
        let texts: Vec<&str> = batch.iter().map(|c| c.text.as_str()).collect();
        let vecs = embedder.embed_batch(&texts, None)?;
        if vecs.len() != batch.len() {
            return Err(AppError::Backend(format!(
                "embedder returned {} vectors for {} texts",
                vecs.len(),
                batch.len()
            )));
        }
        items.extend(batch.iter().map(Chunk::key).zip(vecs));
    }
    Ok(VectorIndex::build(items)?)
}

/// Reads prompt templates from `dir` when given, falling back to the built-in
/// versions for files that are absent.
pub fn load_prompts(dir: Option<&Path>) -> AppResult<PromptSet> {
    let mut prompts = PromptSet::default();
    if let Some(dir) = dir {
        for (file, slot) in
            [(POINTWISE_PROMPT_FILE, &mut prompts.pointwise), (LISTWISE_PROMPT_FILE, &mut prompts.listwise)]
        {
            let p = dir.join(file);
            if p.exists() {
                *slot = std::fs::read_to_string(&p).map_err(|e| AppError::io(&p, e))?.trim_end().to_string();
            }
        }
    }
    prompts.validate().map_err(|e| AppError::Config(format!("prompt templates: {e}")))?;
    Ok(prompts)
}

/// BM25 plus optional dense retrieval over chunk-keyed indexes, reported per
/// document.
pub struct HybridSearcher<'a> {
    pub bm25: &'a Bm25Index,
    pub vectors: Option<&'a VectorIndex>,
    pub embedder: &'a (dyn Embedder + Sync),
    pub instruction: Option<&'a str>,
    pub candidates: usize,
    pub w_dense: f64,
}

impl HybridSearcher<'_> {
    /// Document-level BM25 ranking from the top `candidates` chunks.
    pub fn sparse(&self, query: &str) -> AppResult<ScoredList> {
        let chunks = self.bm25.search(query, self.candidates)?;
        Ok(max_over_chunk_keys(&chunks)?)
    }

    pub fn dense(&self, query: &str) -> AppResult<ScoredList> {
        let Some(vectors) = self.vectors else {
            return Ok(ScoredList::empty(Provenance::Dense));
        };
        let qv = self.embedder.embed(query, self.instruction)?;
        let chunks = dense_search(vectors, &qv, self.candidates)?;
        Ok(max_over_chunk_keys(&chunks)?)
    }

    /// Min-max normalizes each side over its candidate list, then fuses.
    pub fn hybrid(&self, query: &str) -> AppResult<ScoredList> {
        let norm = |l: ScoredList| if l.is_empty() { Ok(l) } else { minmax_normalize(&l) };
        let sparse = norm(self.sparse(query)?)?;
        let dense = norm(self.dense(query)?)?;
        Ok(hybrid_fuse(&dense, &sparse, self.w_dense)?)
    }
}

/// Expansion-time retriever: hybrid search returning document passages.
pub struct PassageRetriever<'a> {
    pub searcher: &'a HybridSearcher<'a>,
    pub texts: &'a HashMap<String, String>,
}

impl Retriever for PassageRetriever<'_> {
    fn retrieve(&self, query: &str, depth: usize) -> diver_core::Result<Vec<Passage>> {
        let list = self.searcher.hybrid(query).map_err(|e| match e {
            AppError::Backend(m) => diver_core::Error::Embedder(m),
            other => diver_core::Error::InvalidParameter(other.to_string()),
        })?;
        list.ids()
            .take(depth)
            .map(|id| {
                let text = self.texts.get(id).ok_or_else(|| diver_core::Error::UnknownItem(id.to_string()))?;
                Ok(Passage { id: id.to_string(), text: text.clone() })
            })
            .collect()
    }
}

pub fn expand_queries(
    queries: &[Query],
    retriever: &(dyn Retriever + Sync),
    llm: &(dyn Completion + Sync),
    config: &ExpansionConfig,
    workers: usize,
) -> AppResult<Vec<ExpandedRecord>> {
    par_map(queries, workers, |q| {
        let out = expand_query(q, retriever, llm, config).map_err(|f| {
            let round = f.state.round + 1;
            AppError::from(f.error).context(format!("query `{}`, expansion round {round}", q.id))
        })?;
        Ok(ExpandedRecord { id: q.id.clone(), original: q.text.clone(), expanded: out.expanded })
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RerankOutcome {
    pub list: ScoredList,
    pub pointwise_warnings: usize,
    pub listwise_warnings: usize,
}

/// Reranks the head of `retrieval` (hybrid scores in `[0, 1]`). Only the
/// reranked head is returned.
#[allow(clippy::too_many_arguments)]
pub fn rerank_query(
    query: &str,
    retrieval: &ScoredList,
    texts: &HashMap<String, String>,
    llm: &(dyn Completion + Sync),
    config: &RerankConfig,
    prompts: &PromptSet,
    mode: RerankMode,
    depth: usize,
    doc_tokens: usize,
) -> AppResult<RerankOutcome> {
    let mut head = retrieval.clone();
    head.truncate(depth);
    if head.is_empty() {
        return Ok(RerankOutcome {
            list: head.with_provenance(Provenance::Final),
            pointwise_warnings: 0,
            listwise_warnings: 0,
        });
    }
    let passages: Vec<Passage> = head
        .ids()
        .map(|id| {
            let text =
                texts.get(id).ok_or_else(|| AppError::Data(format!("unknown document `{id}` in retrieval list")))?;
            Ok(Passage { id: id.to_string(), text: truncate_tokens(text, doc_tokens).to_string() })
        })
        .collect::<AppResult<_>>()?;

    let mut pointwise_warnings = 0;
    let point = if mode == RerankMode::List {
        None
    } else {
        let mut scores = Vec::with_capacity(passages.len());
        for p in &passages {
            let s = pointwise_score(query, &p.text, llm, config, prompts)?;
            pointwise_warnings += usize::from(s.warning);
            scores.push((p.id.clone(), s.score));
        }
        Some(pointwise_list(&scores, &head, config)?)
    };
    let (order, listwise_warnings) = if mode == RerankMode::Point {
        (None, 0)
    } else {
        let out = listwise_rank(query, &passages, llm, config, prompts)?;
        (Some(out.order), out.warnings)
    };
    let list = match (point, order) {
        (Some(p), Some(o)) => combine_point_list(&p, &o, &head, config)?,
        (Some(p), None) => p.with_provenance(Provenance::Final),
        (None, Some(o)) => listwise_list(&o)?.with_provenance(Provenance::Final),
        (None, None) => unreachable!("every mode ranks"),
    };
    Ok(RerankOutcome { list, pointwise_warnings, listwise_warnings })
}

/// Counts completions served to the pipeline.
struct Counted<'a> {
    inner: &'a (dyn Completion + Sync),
    calls: AtomicUsize,
}

impl Completion for Counted<'_> {
    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(request)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunScores {
    pub mean: f64,
    pub per_query: BTreeMap<String, f64>,
    pub missing: Vec<String>,
}

impl From<RunEvaluation> for RunScores {
    fn from(e: RunEvaluation) -> Self {
        Self { mean: e.mean, per_query: e.per_query, missing: e.missing }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub run_id: String,
    pub seed: u64,
    pub k: usize,
    pub documents: usize,
    pub chunks: usize,
    pub queries: usize,
    pub judged_queries: usize,
    pub skipped_lines: usize,
    pub llm_calls: usize,
    pub pointwise_warnings: usize,
    pub listwise_warnings: usize,
    /// `None` when no judgments are available.
    pub bm25: Option<RunScores>,
    pub hybrid: Option<RunScores>,
    #[serde(rename = "final")]
    pub final_: Option<RunScores>,
}

impl Report {
    /// Aligned per-query table of nDCG for each run, then the means.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "run {}  seed {}  nDCG@{}", self.run_id, self.seed, self.k);
        let (Some(b), Some(h), Some(f)) = (&self.bm25, &self.hybrid, &self.final_) else {
            out.push_str("no judgments; nothing scored\n");
            return out;
        };
        let width = b.per_query.keys().map(String::len).chain([5]).max().unwrap_or(5);
        let _ = writeln!(out, "{:<width$}  {:>8}  {:>8}  {:>8}", "query", "bm25", "hybrid", "final");
        for (q, s) in &b.per_query {
            let _ = writeln!(out, "{q:<width$}  {s:>8.4}  {:>8.4}  {:>8.4}", h.per_query[q], f.per_query[q]);
        }
        let _ = writeln!(out, "{:<width$}  {:>8.4}  {:>8.4}  {:>8.4}", "mean", b.mean, h.mean, f.mean);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub baseline: RunFile,
    pub hybrid: RunFile,
    pub run: RunFile,
    pub report: Report,
}

fn run_of(lists: &[(String, ScoredList)]) -> AppResult<RunFile> {
    let mut run = RunFile::new();
    for (qid, list) in lists {
        run.insert_list(qid.clone(), list)?;
    }
    Ok(run)
}

fn score(run: &RunFile, judgments: &Judgments, k: usize) -> AppResult<Option<RunScores>> {
    if judgments.is_empty() {
        return Ok(None);
    }
    let e = evaluate_run(run, judgments, k)?;
    for q in &e.missing {
        log::warn!("judged query `{q}` has no results; scored 0");
    }
    Ok(Some(e.into()))
}

/// Runs every stage in order and persists each artifact under `run_dir`.
/// A failing stage is named in the error; earlier artifacts stay on disk.
pub fn run_pipeline(cfg: &PipelineConfig, backends: Backends<'_>) -> AppResult<PipelineOutput> {
    cfg.validate()?;
    let prompts = load_prompts(cfg.prompt_dir.as_deref())?;
    let dir = &cfg.run_dir;
    std::fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    let snapshot = cfg.snapshot();
    let run_id = prompt_digest(&snapshot)[..12].to_string();
    std::fs::write(dir.join("config.snapshot"), &snapshot).map_err(|e| AppError::io(dir, e))?;
    log::info!("run={run_id} dir={}", dir.display());
    let counted = Counted { inner: backends.llm, calls: AtomicUsize::new(0) };
    let llm: &(dyn Completion + Sync) = &counted;

    let opts = LoadOptions { fields: cfg.fields.clone(), permissive: cfg.permissive, allow_empty_text: false };
    let (docs, queries, judgments, skipped) = (|| {
        let docs = load_corpus(&cfg.corpus, &opts)?;
        let (queries, mut judgments) = load_queries(&cfg.queries, &opts)?;
        if let Some(p) = &cfg.judgments {
            judgments = load_judgments(p, &opts)?;
        }
        let skipped = docs.skipped.len() + queries.skipped.len();
        AppResult::Ok((docs.records, queries.records, judgments, skipped))
    })()
    .stage("load")?;

    let cleaned = clean_documents(&docs).stage("clean")?;
    write_corpus(&dir.join("cleaned.jsonl"), &cleaned, &cfg.fields).stage("clean")?;
    let texts: HashMap<String, String> = cleaned.iter().map(|d| (d.id.clone(), d.text.clone())).collect();

    let chunks = chunk_documents(&cleaned, backends.embedder, &cfg.chunk, cfg.workers).stage("chunk")?;
    write_chunks(&dir.join("chunks.jsonl"), &chunks).stage("chunk")?;

    let bm25 = build_bm25(&chunks, cfg.bm25, cfg.analyzer).stage("index")?;
    save_bm25(&dir.join("bm25.idx"), &bm25).stage("index")?;
    let vectors = build_vectors(&chunks, backends.embedder).stage("index")?;
    save_vectors(&dir.join("dense.idx"), &vectors).stage("index")?;

    let searcher = HybridSearcher {
        bm25: &bm25,
        vectors: Some(&vectors),
        embedder: backends.embedder,
        instruction: cfg.query_instruction.as_deref(),
        candidates: cfg.candidates,
        w_dense: cfg.w_dense,
    };

    let baseline = (|| {
        let lists = par_map(&queries, cfg.workers, |q| Ok((q.id.clone(), searcher.sparse(&q.text)?)))?;
        run_of(&lists)
    })()
    .stage("baseline")?;
    write_run(&dir.join("bm25.trec"), &baseline, &format!("{}-bm25", cfg.tag)).stage("baseline")?;

    let retriever = PassageRetriever { searcher: &searcher, texts: &texts };
    let expanded = expand_queries(&queries, &retriever, llm, &cfg.expansion_config(), cfg.workers).stage("expand")?;
    write_records(&dir.join("expanded.jsonl"), &expanded).stage("expand")?;

    let hybrid_lists =
        par_map(&expanded, cfg.workers, |e| Ok((e.id.clone(), searcher.hybrid(&e.expanded)?))).stage("retrieve")?;
    let hybrid = run_of(&hybrid_lists).stage("retrieve")?;
    write_run(&dir.join("hybrid.trec"), &hybrid, &format!("{}-hybrid", cfg.tag)).stage("retrieve")?;

    let rerank_cfg = cfg.rerank_config();
    let originals: HashMap<&str, &str> = queries.iter().map(|q| (q.id.as_str(), q.text.as_str())).collect();
    let reranked = par_map(&hybrid_lists, cfg.workers, |(qid, list)| {
        let out = rerank_query(
            originals[qid.as_str()],
            list,
            &texts,
            llm,
            &rerank_cfg,
            &prompts,
            cfg.rerank_mode,
            cfg.rerank_depth,
            cfg.rerank_doc_tokens,
        )
        .map_err(|e| e.context(format!("query `{qid}`")))?;
        Ok((qid.clone(), out))
    })
    .stage("rerank")?;
    let final_lists: Vec<(String, ScoredList)> = reranked.iter().map(|(q, o)| (q.clone(), o.list.clone())).collect();
    let run = run_of(&final_lists).stage("rerank")?;
    write_run(&dir.join("final.trec"), &run, &cfg.tag).stage("rerank")?;

    let report = (|| {
        AppResult::Ok(Report {
            run_id: run_id.clone(),
            seed: cfg.seed,
            k: cfg.eval_k,
            documents: cleaned.len(),
            chunks: chunks.len(),
            queries: queries.len(),
            judged_queries: judgments.len(),
            skipped_lines: skipped,
            llm_calls: 0,
            pointwise_warnings: reranked.iter().map(|(_, o)| o.pointwise_warnings).sum(),
            listwise_warnings: reranked.iter().map(|(_, o)| o.listwise_warnings).sum(),
            bm25: score(&baseline, &judgments, cfg.eval_k)?,
            hybrid: score(&hybrid, &judgments, cfg.eval_k)?,
            final_: score(&run, &judgments, cfg.eval_k)?,
        })
    })()
    .stage("evaluate")?;
    let report = Report { llm_calls: counted.calls.load(Ordering::SeqCst), ..report };
    let json = serde_json::to_string_pretty(&report).map_err(|e| AppError::Data(e.to_string())).stage("evaluate")?;
    std::fs::write(dir.join("report.json"), json + "\n").map_err(|e| AppError::io(dir, e)).stage("evaluate")?;
    std::fs::write(dir.join("report.txt"), report.table()).map_err(|e| AppError::io(dir, e)).stage("evaluate")?;
    log::info!("run={run_id} finished");
    Ok(PipelineOutput { baseline, hybrid, run, report })
}
