//! Training-data curation: annotate query-document pairs, keep confident
//! positives and negatives, optionally synthesize positives and hard
//! negatives, and emit training triples.

use std::collections::BTreeMap;

use diver_core::contrastive::{
    annotate_pair, build_curation_prompt, curate_pairs, parse_generated_documents, parse_hard_negative, AnnotatedPair,
    CurationPrompt,
};
use diver_core::llm::{Completion, CompletionRequest};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, AppResult};
use crate::jsonl::TrainingRecord;

/// Input pair. A present `score` skips annotation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRecord {
    pub query: String,
    pub doc: String,
    #[serde(default)]
    pub score: Option<i64>,
    #[serde(default)]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CurateOptions {
    /// Ask for synthetic positives for queries left without one.
    pub generate_positives: bool,
    /// Ask for one synthetic hard negative per positive.
    pub hard_negatives: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CurateStats {
    pub pairs: usize,
    pub unparsable: usize,
    pub positives: usize,
    pub negatives: usize,
    pub dropped: usize,
    pub generated_positives: usize,
    pub generated_negatives: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CurateOutput {
    pub records: Vec<TrainingRecord>,
    pub stats: CurateStats,
}

#[derive(Default)]
struct PerQuery {
    positives: Vec<String>,
    negatives: Vec<String>,
}

pub fn curate_dataset(pairs: Vec<PairRecord>, llm: &dyn Completion, opts: CurateOptions) -> AppResult<CurateOutput> {
    let mut stats = CurateStats { pairs: pairs.len(), ..CurateStats::default() };
    let mut order: Vec<String> = Vec::new();
    let mut annotated = Vec::with_capacity(pairs.len());
    for p in pairs {
        if !order.contains(&p.query) {
            order.push(p.query.clone());
        }
        let pair = match p.score {
            Some(score) => {
                Some(AnnotatedPair { query: p.query, doc: p.doc, score, reason: p.reason.unwrap_or_default() })
            }
            None => annotate_pair(&p.query, &p.doc, llm)?,
        };
        match pair {
            Some(a) => annotated.push(a),
            None => stats.unparsable += 1,
        }
    }
    let curated = curate_pairs(annotated)?;
    stats.positives = curated.positives.len();
    stats.negatives = curated.negatives.len();
    stats.dropped = curated.dropped.len();

    let mut by_query: BTreeMap<String, PerQuery> = BTreeMap::new();
    for a in curated.positives {
        by_query.entry(a.query).or_default().positives.push(a.doc);
    }
    for a in curated.negatives {
        by_query.entry(a.query).or_default().negatives.push(a.doc);
    }

    let mut records = Vec::new();
    for query in order {
        let mut entry = by_query.remove(&query).unwrap_or_default();
        if entry.positives.is_empty() && opts.generate_positives {
            let prompt = build_curation_prompt(CurationPrompt::PositiveGen { query: &query })?;
            let docs = parse_generated_documents(&llm.complete(&CompletionRequest::new(prompt))?);
            stats.generated_positives += docs.len();
            entry.positives = docs;
        }
        for positive in entry.positives {
            let mut negatives = entry.negatives.clone();
            if opts.hard_negatives {
                let prompt =
                    build_curation_prompt(CurationPrompt::HardNegativeGen { query: &query, positive: &positive })?;
                match parse_hard_negative(&llm.complete(&CompletionRequest::new(prompt))?) {
                    Some(n) => {
                        stats.generated_negatives += 1;
                        negatives.push(n);
                    }
                    None => log::warn!("hard-negative reply for `{query}` unusable; skipped"),
                }
            }
            records.push(TrainingRecord { query: query.clone(), positive, negatives });
        }
    }
    if records.is_empty() {
        return Err(AppError::Data("curation kept no positive pairs".into()));
    }
    Ok(CurateOutput { records, stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::FnCompletion;
    use diver_core::llm::LlmError;

    fn pair(q: &str, d: &str, score: Option<i64>) -> PairRecord {
        PairRecord { query: q.into(), doc: d.into(), score, reason: None }
    }

    #[test]
    fn thresholds_partition_pairs() {
        let llm = FnCompletion(|_: &CompletionRequest| -> Result<String, LlmError> { panic!("no calls expected") });
        let pairs = vec![
            pair("q", "good", Some(7)),
            pair("q", "meh4", Some(4)),
            pair("q", "meh6", Some(6)),
            pair("q", "bad", Some(3)),
            pair("q", "great", Some(10)),
        ];
        let out = curate_dataset(pairs, &llm, CurateOptions::default()).unwrap();
        assert_eq!(out.stats.positives, 2);
        assert_eq!(out.stats.negatives, 1);
        assert_eq!(out.stats.dropped, 2);
        assert_eq!(out.records.len(), 2);
        assert_eq!(out.records[0].positive, "good");
        assert_eq!(out.records[0].negatives, vec!["bad".to_string()]);
    }

    #[test]
    fn annotation_and_generation_use_the_backend() {
        let long = "x".repeat(320);
        let llm = FnCompletion(move |r: &CompletionRequest| -> Result<String, LlmError> {
            if r.prompt.contains("simulated Google search engine") {
                Ok(r#"Document 1:{"title":"T","content":"generated answer"}"#.into())
            } else if r.prompt.contains("hard negative") {
                Ok(format!("{{\"hard negative document\": \"{long}\"}}"))
            } else if r.prompt.contains("alpha") {
                Ok(r#"{"score": 2, "reason": "off topic"}"#.into())
            } else {
                Ok("unparsable".into())
            }
        });
        let pairs = vec![pair("alpha", "d1", None), pair("alpha", "d2", None)];
        let opts = CurateOptions { generate_positives: true, hard_negatives: true };
        let out = curate_dataset(pairs, &llm, opts).unwrap();
        assert_eq!(out.stats.negatives, 2);
        assert_eq!(out.stats.generated_positives, 1);
        assert_eq!(out.stats.generated_negatives, 1);
        assert_eq!(out.records[0].positive, "T\ngenerated answer");
        assert_eq!(out.records[0].negatives.len(), 3);
    }
}
