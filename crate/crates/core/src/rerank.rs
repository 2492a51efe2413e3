//! LLM reranking: pointwise helpfulness scores interpolated with the
//! retriever, listwise ordering over sliding windows, and their combination.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::expand::{format_passages, Passage};
use crate::fusion::{minmax_normalize, Provenance, ScoredList, UNIT_TOLERANCE};
use crate::llm::{Completion, CompletionRequest};
use crate::prompt::{check_placeholders, render};
use crate::{Error, Result};

pub const POINTWISE_PROMPT_V1: &str = include_str!("../prompts/pointwise_v1.txt");
pub const LISTWISE_PROMPT_V1: &str = include_str!("../prompts/listwise_v1.txt");

const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct RerankConfig {
    pub scale_max: u32,
    pub w_rerank: f64,
    pub w_retriever: f64,
    pub listwise_pool: usize,
    pub w_point: f64,
    pub w_list: f64,
    pub parse_retries: u32,
    /// Passages per listwise request.
    pub window: usize,
    pub stride: usize,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub model_id: String,
}

impl Default for RerankConfig {
    fn default() -> Self {
        Self {
            scale_max: 10,
            w_rerank: 0.6,
            w_retriever: 0.4,
            listwise_pool: 100,
            w_point: 0.5,
            w_list: 0.5,
            parse_retries: 1,
            window: 20,
            stride: 10,
            temperature: 0.0,
            max_output_tokens: 1024,
            model_id: String::new(),
        }
    }
}

impl RerankConfig {
    pub fn validate(&self) -> Result<()> {
        for (what, w) in [
            ("w_rerank", self.w_rerank),
            ("w_retriever", self.w_retriever),
            ("w_point", self.w_point),
            ("w_list", self.w_list),
        ] {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::OutOfRange { what, value: w });
            }
        }
        if (self.w_rerank + self.w_retriever - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(Error::InvalidParameter(format!(
                "w_rerank + w_retriever must equal 1, got {}",
                self.w_rerank + self.w_retriever
            )));
        }
        if (self.w_point + self.w_list - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(Error::InvalidParameter(format!(
                "w_point + w_list must equal 1, got {}",
                self.w_point + self.w_list
            )));
        }
        if self.scale_max == 0 {
            return Err(Error::InvalidParameter("scale_max must be >= 1".into()));
        }
        if self.listwise_pool == 0 || self.window == 0 || self.stride == 0 || self.stride > self.window {
            return Err(Error::InvalidParameter("need pool >= 1 and 1 <= stride <= window".into()));
        }
        Ok(())
    }

    fn request(&self, prompt: String) -> CompletionRequest {
        CompletionRequest::new(prompt)
            .temperature(self.temperature)
            .max_output_tokens(self.max_output_tokens)
            .model(self.model_id.clone())
    }
}

/// Prompt templates. Pointwise uses `{query}`, `{document}`, `{scale_max}`;
/// listwise uses `{query}`, `{passages}`, `{num}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    pub pointwise: String,
    pub listwise: String,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self {
            pointwise: String::from(POINTWISE_PROMPT_V1.trim_end()),
            listwise: String::from(LISTWISE_PROMPT_V1.trim_end()),
        }
    }
}

impl PromptSet {
    pub fn validate(&self) -> Result<()> {
        check_placeholders(&self.pointwise, &["query", "document", "scale_max"])?;
        check_placeholders(&self.listwise, &["query", "passages", "num"])
    }
}

/// First integer in `text`; a `-` directly before the digits makes it
/// negative. Saturates instead of overflowing.
pub fn parse_first_integer(text: &str) -> Option<i64> {
    let bytes = text.as_bytes();
    let start = bytes.iter().position(u8::is_ascii_digit)?;
    let negative = start > 0 && bytes[start - 1] == b'-';
    let mut value: i64 = 0;
    for b in bytes[start..].iter().take_while(|b| b.is_ascii_digit()) {
        value = value.saturating_mul(10).saturating_add(i64::from(b - b'0'));
    }
    Some(if negative { -value } else { value })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PointwiseScore {
    pub score: u32,
    /// Set when no integer could be parsed and the score fell back to 0.
    pub warning: bool,
    pub attempts: u32,
}

/// Asks for a 0..=scale_max helpfulness score, re-asking up to
/// `parse_retries` times when the reply holds no integer.
pub fn pointwise_score<L: Completion + ?Sized>(
    query: &str,
    doc_text: &str,
    llm: &L,
    config: &RerankConfig,
    prompts: &PromptSet,
) -> Result<PointwiseScore> {
    if doc_text.trim().is_empty() {
        return Err(Error::Empty("document text"));
    }
    let scale = format!("{}", config.scale_max);
    let prompt = render(&prompts.pointwise, &[("query", query), ("document", doc_text), ("scale_max", &scale)])?;
    let mut attempts = 0;
    for attempt in 0..=config.parse_retries {
        let p = if attempt == 0 {
            prompt.clone()
        } else {
            format!("{prompt}\n\nYour previous reply contained no number. Reply with one integer from 0 to {scale}.")
        };
        attempts += 1;
        let reply = llm.complete(&config.request(p))?;
        if let Some(v) = parse_first_integer(&reply) {
            let score = v.clamp(0, i64::from(config.scale_max)) as u32;
            return Ok(PointwiseScore { score, warning: false, attempts });
        }
    }
    Ok(PointwiseScore { score: 0, warning: true, attempts })
}

/// `w_rerank * llm_score / scale_max + w_retriever * retriever_score`.
pub fn pointwise_final(llm_score: u32, retriever_score: f64, config: &RerankConfig) -> Result<f64> {
    if !(-UNIT_TOLERANCE..=1.0 + UNIT_TOLERANCE).contains(&retriever_score) {
        return Err(Error::OutOfRange { what: "retriever score", value: retriever_score });
    }
    if llm_score > config.scale_max {
        return Err(Error::OutOfRange { what: "llm score", value: f64::from(llm_score) });
    }
    let llm = f64::from(llm_score) / f64::from(config.scale_max);
    Ok(config.w_rerank * llm + config.w_retriever * retriever_score.clamp(0.0, 1.0))
}

/// Zero-based positions named as `[i]` in `response`, in order of first
/// mention. Out-of-range and repeated identifiers are dropped.
pub fn parse_ranking(response: &str, n: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    let mut rest = response;
    while let Some(open) = rest.find('[') {
        rest = &rest[open + 1..];
        let Some(close) = rest.find(']') else { break };
        if let Ok(i) = rest[..close].trim().parse::<usize>() {
            if (1..=n).contains(&i) && seen.insert(i) {
                out.push(i - 1);
            }
        }
    }
    out
}

/// Extends a partial ranking with the omitted positions in original order.
pub fn complete_permutation(mut ranked: Vec<usize>, n: usize) -> Vec<usize> {
    let mut present = alloc::vec![false; n];
    ranked.retain(|&i| i < n && !core::mem::replace(&mut present[i], true));
    ranked.extend((0..n).filter(|i| !present[*i]));
    ranked
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ListwiseOutcome {
    pub order: Vec<String>,
    /// Windows whose reply held no usable identifier.
    pub warnings: usize,
    pub calls: usize,
}

/// Orders `candidates` (given in retrieval order) by LLM judgement. Pools
/// larger than `config.window` are ranked back-to-front in overlapping
/// windows.
pub fn listwise_rank<L: Completion + ?Sized>(
    query: &str,
    candidates: &[Passage],
    llm: &L,
    config: &RerankConfig,
    prompts: &PromptSet,
) -> Result<ListwiseOutcome> {
    let n = candidates.len();
    if n == 0 || n > config.listwise_pool {
        return Err(Error::InvalidParameter(format!(
            "listwise pool holds {n} candidates, expected 1..={}",
            config.listwise_pool
        )));
    }
    crate::corpus::ensure_unique_ids(candidates.iter().map(|c| c.id.as_str()))?;
    let mut order: Vec<usize> = (0..n).collect();
    let mut outcome = ListwiseOutcome { order: Vec::new(), warnings: 0, calls: 0 };
    if n > 1 {
        let mut end = n;
        let mut start = n.saturating_sub(config.window);
        loop {
            let window: Vec<usize> = order[start..end].to_vec();
            let (ranked, parsed) = rank_window(query, candidates, &window, llm, config, prompts)?;
            outcome.calls += 1;
            if !parsed {
                outcome.warnings += 1;
            }
            order[start..end].copy_from_slice(&ranked);
            if start == 0 {
                break;
            }
            end -= config.stride.min(end);
            start = end.saturating_sub(config.window);
        }
    }
    outcome.order = order.into_iter().map(|i| candidates[i].id.clone()).collect();
    Ok(outcome)
}

fn rank_window<L: Completion + ?Sized>(
    query: &str,
    candidates: &[Passage],
    window: &[usize],
    llm: &L,
    config: &RerankConfig,
    prompts: &PromptSet,
) -> Result<(Vec<usize>, bool)> {
    let texts: Vec<&str> = window.iter().map(|&i| candidates[i].text.as_str()).collect();
    let passages = format_passages(&texts);
    let num = format!("{}", window.len());
    let prompt = render(&prompts.listwise, &[("query", query), ("passages", &passages), ("num", &num)])?;
    for _ in 0..=config.parse_retries {
        let reply = llm.complete(&config.request(prompt.clone()))?;
        let parsed = parse_ranking(&reply, window.len());
        if !parsed.is_empty() {
            let local = complete_permutation(parsed, window.len());
            return Ok((local.into_iter().map(|i| window[i]).collect(), true));
        }
    }
    Ok((window.to_vec(), false))
}

/// Rank `r` (1-based) of `n` maps to `(n - r + 1) / n`.
pub fn listwise_scores(order: &[String]) -> Vec<(String, f64)> {
    let n = order.len() as f64;
    order.iter().enumerate().map(|(r, id)| (id.clone(), (n - r as f64) / n)).collect()
}

/// Sorts by score, then by the retrieval score, then by id.
fn order_with_tiebreak(
    mut entries: Vec<(String, f64)>,
    retrieval: &ScoredList,
    provenance: Provenance,
) -> Result<ScoredList> {
    let prior: BTreeMap<&str, f64> = retrieval.entries().iter().map(|(i, s)| (i.as_str(), *s)).collect();
    let key = |id: &str| prior.get(id).copied().unwrap_or(f64::NEG_INFINITY);
    entries
        .sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| key(&b.0).total_cmp(&key(&a.0))).then_with(|| a.0.cmp(&b.0)));
    ScoredList::from_ordered(entries, provenance)
}

/// Pointwise-only final list: `pointwise_final` for every candidate.
pub fn pointwise_list(
    llm_scores: &[(String, u32)],
    retrieval: &ScoredList,
    config: &RerankConfig,
) -> Result<ScoredList> {
    let entries = llm_scores
        .iter()
        .map(|(id, s)| {
            let r = retrieval.score(id).ok_or_else(|| Error::UnknownItem(id.clone()))?;
            Ok((id.clone(), pointwise_final(*s, r, config)?))
        })
        .collect::<Result<Vec<_>>>()?;
    order_with_tiebreak(entries, retrieval, Provenance::RerankPoint)
}

/// Listwise-only final list scored by [`listwise_scores`].
pub fn listwise_list(order: &[String]) -> Result<ScoredList> {
    ScoredList::from_ordered(listwise_scores(order), Provenance::RerankList)
}

/// `w_point * minmax(point) + w_list * listwise_score`, ties broken by the
/// retrieval score and then id.
pub fn combine_point_list(
    point: &ScoredList,
    list_order: &[String],
    retrieval: &ScoredList,
    config: &RerankConfig,
) -> Result<ScoredList> {
    let point_ids: BTreeSet<&str> = point.ids().collect();
    let list_ids: BTreeSet<&str> = list_order.iter().map(String::as_str).collect();
    if point_ids != list_ids || list_ids.len() != list_order.len() {
        return Err(Error::IdSetMismatch);
    }
    let normalized = minmax_normalize(point)?;
    let listwise: BTreeMap<String, f64> = listwise_scores(list_order).into_iter().collect();
    let entries = normalized
        .entries()
        .iter()
        .map(|(id, p)| (id.clone(), config.w_point * p + config.w_list * listwise[id]))
        .collect();
    order_with_tiebreak(entries, retrieval, Provenance::Final)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::LlmError;
    use alloc::string::ToString;
    use alloc::vec;
    use core::cell::RefCell;

    struct Replies(RefCell<Vec<&'static str>>);

    impl Completion for Replies {
        fn complete(&self, _: &CompletionRequest) -> core::result::Result<String, LlmError> {
            let mut r = self.0.borrow_mut();
            if r.is_empty() {
                return Err(LlmError::ScriptExhausted { served: 0 });
            }
            Ok(r.remove(0).to_string())
        }
    }

    fn replies(xs: &[&'static str]) -> Replies {
        Replies(RefCell::new(xs.to_vec()))
    }

    fn passages(ids: &[&str]) -> Vec<Passage> {
        ids.iter().map(|i| Passage { id: i.to_string(), text: format!("text of {i}") }).collect()
    }

    fn ids(l: &ScoredList) -> Vec<&str> {
        l.ids().collect()
    }

    #[test]
    fn pointwise_parsing_and_clamping() {
        let c = RerankConfig::default();
        let p = PromptSet::default();
        assert_eq!(pointwise_score("q", "d", &replies(&["8"]), &c, &p).unwrap().score, 8);
        assert_eq!(pointwise_score("q", "d", &replies(&["Score: 12 because..."]), &c, &p).unwrap().score, 10);
        assert_eq!(pointwise_score("q", "d", &replies(&["-3"]), &c, &p).unwrap().score, 0);
        let fallback = pointwise_score("q", "d", &replies(&["no idea", "no idea"]), &c, &p).unwrap();
        assert_eq!(fallback, PointwiseScore { score: 0, warning: true, attempts: 2 });
        assert!(pointwise_score("q", " ", &replies(&[]), &c, &p).is_err());
    }

    #[test]
    fn pointwise_final_arithmetic() {
        let c = RerankConfig::default();
        assert_eq!(pointwise_final(10, 1.0, &c).unwrap(), 1.0);
        assert_eq!(pointwise_final(0, 0.0, &c).unwrap(), 0.0);
        assert!((pointwise_final(8, 0.5, &c).unwrap() - 0.68).abs() < 1e-12);
        assert!(pointwise_final(5, 1.5, &c).is_err());
    }

    #[test]
    fn config_weight_sums_enforced() {
        let bad = RerankConfig { w_rerank: 0.7, ..RerankConfig::default() };
        assert!(bad.validate().is_err());
        let bad = RerankConfig { w_list: 0.2, ..RerankConfig::default() };
        assert!(bad.validate().is_err());
        assert!(RerankConfig::default().validate().is_ok());
        assert!(PromptSet::default().validate().is_ok());
    }

    #[test]
    fn listwise_reference_cases() {
        let c = RerankConfig::default();
        let p = PromptSet::default();
        let one = listwise_rank("q", &passages(&["a"]), &replies(&[]), &c, &p).unwrap();
        assert_eq!((one.order, one.calls), (vec!["a".to_string()], 0));
        let abc = passages(&["a", "b", "c"]);
        let r = listwise_rank("q", &abc, &replies(&["[2] > [1] > [3]"]), &c, &p).unwrap();
        assert_eq!(r.order, ["b", "a", "c"]);
        let r = listwise_rank("q", &abc, &replies(&["[3] > [3] > [1]"]), &c, &p).unwrap();
        assert_eq!(r.order, ["c", "a", "b"]);
        let r = listwise_rank("q", &abc, &replies(&["garbage", "still garbage"]), &c, &p).unwrap();
        assert_eq!((r.order, r.warnings), (vec!["a".into(), "b".into(), "c".into()], 1));
    }

    #[test]
    fn sliding_windows_cover_pool_back_to_front() {
        let c = RerankConfig { window: 4, stride: 2, ..RerankConfig::default() };
        let pool = passages(&["a", "b", "c", "d", "e", "f"]);
        // Each window reply reverses its passages.
        let r = listwise_rank("q", &pool, &replies(&["[4] > [3] > [2] > [1]"; 2]), &c, &PromptSet::default()).unwrap();
        assert_eq!(r.calls, 2);
        // [c d e f] -> [f e d c]; then [a b f e] -> [e f b a]
        assert_eq!(r.order, ["e", "f", "b", "a", "d", "c"]);
    }

    #[test]
    fn parse_ranking_ignores_noise() {
        assert_eq!(parse_ranking("[2] > [ 1 ] > [9] > [x] > [2]", 3), [1, 0]);
        assert_eq!(complete_permutation(vec![2, 0], 4), [2, 0, 1, 3]);
        assert!(parse_ranking("none", 3).is_empty());
    }

    #[test]
    fn combine_reference_case() {
        let c = RerankConfig::default();
        let point =
            ScoredList::from_unsorted(vec![("a".into(), 1.0), ("b".into(), 0.0)], Provenance::RerankPoint).unwrap();
        let retrieval = point.clone();
        let out = combine_point_list(&point, &["b".into(), "a".into()], &retrieval, &c).unwrap();
        assert_eq!(out.entries(), &[("a".to_string(), 0.75), ("b".to_string(), 0.5)]);
        assert_eq!(out.provenance(), Provenance::Final);
    }

    #[test]
    fn combine_endpoints_and_errors() {
        let point = ScoredList::from_unsorted(
            vec![("a".into(), 0.9), ("b".into(), 0.5), ("c".into(), 0.1)],
            Provenance::RerankPoint,
        )
        .unwrap();
        let list = ["c".to_string(), "b".into(), "a".into()];
        let only_point = RerankConfig { w_point: 1.0, w_list: 0.0, ..RerankConfig::default() };
        assert_eq!(ids(&combine_point_list(&point, &list, &point, &only_point).unwrap()), ["a", "b", "c"]);
        let only_list = RerankConfig { w_point: 0.0, w_list: 1.0, ..RerankConfig::default() };
        assert_eq!(ids(&combine_point_list(&point, &list, &point, &only_list).unwrap()), ["c", "b", "a"]);
        assert_eq!(
            combine_point_list(&point, &["a".into()], &point, &RerankConfig::default()),
            Err(Error::IdSetMismatch)
        );
    }

    #[test]
    fn ties_fall_back_to_retrieval_score() {
        let retrieval =
            ScoredList::from_unsorted(vec![("z".into(), 0.9), ("a".into(), 0.1)], Provenance::Hybrid).unwrap();
        let out = pointwise_list(
            &[("a".into(), 5), ("z".into(), 5)],
            &retrieval,
            &RerankConfig { w_rerank: 1.0, w_retriever: 0.0, ..RerankConfig::default() },
        )
        .unwrap();
        assert_eq!(ids(&out), ["z", "a"]);
    }

    #[test]
    fn first_integer_parser() {
        assert_eq!(parse_first_integer("abc 7 and 9"), Some(7));
        assert_eq!(parse_first_integer("x-4"), Some(-4));
        assert_eq!(parse_first_integer("99999999999999999999999"), Some(i64::MAX));
        assert_eq!(parse_first_integer("none"), None);
    }
}
