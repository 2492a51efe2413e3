//! Binary-gain nDCG@k and run-level aggregation.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use crate::corpus::Judgments;
use crate::fusion::ScoredList;
use crate::math;
use crate::{Error, Result};

pub const DEFAULT_K: usize = 10;

/// nDCG@k with binary gains and a `log2(rank + 1)` discount. Excluded ids are
/// dropped from the ranking before the cut at `k`.
pub fn ndcg_at_k<S: AsRef<str>>(
    ranking: &[S],
    gold: &BTreeSet<String>,
    excluded: &BTreeSet<String>,
    k: usize,
) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be >= 1".into()));
    }
    let relevant = gold.iter().filter(|g| !excluded.contains(*g)).count();
    if relevant == 0 {
        return Err(Error::Empty("gold set after exclusion"));
    }
    let mut seen = BTreeSet::new();
    for id in ranking {
        if !seen.insert(id.as_ref()) {
            return Err(Error::DuplicateId(String::from(id.as_ref())));
        }
    }
    let dcg: f64 = ranking
        .iter()
        .map(AsRef::as_ref)
        .filter(|id| !excluded.contains(*id))
        .take(k)
        .enumerate()
        .filter(|(_, id)| gold.contains(*id))
        .map(|(i, _)| discount(i))
        .sum();
    let idcg: f64 = (0..relevant.min(k)).map(discount).sum();
    Ok((dcg / idcg).clamp(0.0, 1.0))
}

/// `1 / log2(i + 2)` for zero-based position `i`.
fn discount(i: usize) -> f64 {
    1.0 / math::log2(i as f64 + 2.0)
}

/// Per-query ranked lists.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunFile {
    queries: BTreeMap<String, Vec<(String, f64)>>,
}

impl RunFile {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds one query's ranking; doc ids must be unique and scores
    /// non-increasing.
    pub fn insert(&mut self, query_id: impl Into<String>, ranking: Vec<(String, f64)>) -> Result<()> {
        let query_id = query_id.into();
        let mut seen = BTreeSet::new();
        for (doc, s) in &ranking {
            if !s.is_finite() {
                return Err(Error::NonFinite("run score"));
            }
            if !seen.insert(doc.as_str()) {
                return Err(Error::DuplicateId(doc.clone()));
            }
        }
        if ranking.windows(2).any(|w| w[0].1 < w[1].1) {
            return Err(Error::InvalidParameter(alloc::format!(
                "scores for query `{query_id}` are not non-increasing"
            )));
        }
        if self.queries.contains_key(&query_id) {
            return Err(Error::DuplicateId(query_id));
        }
        self.queries.insert(query_id, ranking);
        Ok(())
    }

    pub fn insert_list(&mut self, query_id: impl Into<String>, list: &ScoredList) -> Result<()> {
        self.insert(query_id, list.entries().to_vec())
    }

    pub fn get(&self, query_id: &str) -> Option<&[(String, f64)]> {
        self.queries.get(query_id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[(String, f64)])> {
        self.queries.iter().map(|(q, r)| (q.as_str(), r.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunEvaluation {
    pub per_query: BTreeMap<String, f64>,
    /// Judged queries absent from the run; each scored 0.
    pub missing: Vec<String>,
    pub mean: f64,
}

/// Scores every judged query. Queries the run lacks count as 0 and are listed
/// in `missing`; unjudged queries in the run are ignored.
pub fn evaluate_run(run: &RunFile, judgments: &Judgments, k: usize) -> Result<RunEvaluation> {
    if judgments.is_empty() {
        return Err(Error::Empty("judgments"));
    }
    let mut per_query = BTreeMap::new();
    let mut missing = Vec::new();
    for (qid, j) in judgments.iter() {
        let score = match run.get(qid) {
            Some(ranking) => {
                let ids: Vec<&str> = ranking.iter().map(|(d, _)| d.as_str()).collect();
                ndcg_at_k(&ids, &j.gold, &j.excluded, k)?
            }
            None => {
                missing.push(String::from(qid));
                0.0
            }
        };
        per_query.insert(String::from(qid), score);
    }
    let mean = per_query.values().sum::<f64>() / per_query.len() as f64;
    Ok(RunEvaluation { per_query, missing, mean })
}

/// Dataset-level means and their unweighted (macro) average.
#[derive(Debug, Clone, PartialEq)]
pub struct MacroSummary {
    pub per_dataset: Vec<(String, f64)>,
    pub macro_mean: f64,
}

pub fn macro_average<'a>(datasets: impl IntoIterator<Item = (&'a str, &'a RunEvaluation)>) -> Result<MacroSummary> {
    let per_dataset: Vec<(String, f64)> = datasets.into_iter().map(|(n, e)| (String::from(n), e.mean)).collect();
    if per_dataset.is_empty() {
        return Err(Error::Empty("dataset list"));
    }
    let macro_mean = per_dataset.iter().map(|(_, m)| m).sum::<f64>() / per_dataset.len() as f64;
    Ok(MacroSummary { per_dataset, macro_mean })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn set(xs: &[&str]) -> BTreeSet<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn reference_values() {
        let none = set(&[]);
        assert_eq!(ndcg_at_k(&["a", "b", "c"], &set(&["a", "b"]), &none, 10).unwrap(), 1.0);
        assert_eq!(ndcg_at_k(&["x", "y"], &set(&["a"]), &none, 10).unwrap(), 0.0);
        let v = ndcg_at_k(&["d1", "d2", "d3"], &set(&["d2"]), &none, 10).unwrap();
        assert!((v - 0.630_929_753_571_457_5).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let none = set(&[]);
        assert!(ndcg_at_k(&["a"], &none, &none, 10).is_err());
        assert!(ndcg_at_k(&["a", "a"], &set(&["a"]), &none, 10).is_err());
        assert!(ndcg_at_k(&["a"], &set(&["a"]), &none, 0).is_err());
    }

    #[test]
    fn missing_query_scores_zero() {
        let mut j = Judgments::new();
        j.insert("q1", ["d1"], Vec::<String>::new()).unwrap();
        j.insert("q2", ["d2"], Vec::<String>::new()).unwrap();
        let mut run = RunFile::new();
        run.insert("q1", vec![("d1".into(), 1.0)]).unwrap();
        let e = evaluate_run(&run, &j, 10).unwrap();
        assert_eq!(e.missing, ["q2"]);
        assert_eq!(e.per_query["q2"], 0.0);
        assert_eq!(e.mean, 0.5);
    }

    #[test]
    fn run_validation() {
        let mut run = RunFile::new();
        assert!(run.insert("q", vec![("a".into(), 1.0), ("a".into(), 0.5)]).is_err());
        assert!(run.insert("q", vec![("a".into(), 0.1), ("b".into(), 0.5)]).is_err());
    }

    #[test]
    fn macro_mean_weights_datasets_equally() {
        let a = RunEvaluation { per_query: BTreeMap::new(), missing: vec![], mean: 1.0 };
        let b = RunEvaluation { per_query: BTreeMap::new(), missing: vec![], mean: 0.0 };
        let m = macro_average([("a", &a), ("b", &b)]).unwrap();
        assert_eq!(m.macro_mean, 0.5);
    }
}
