//! Okapi BM25 over an in-memory inverted index.
//!
//! Items are numbered in ascending id order, so every posting list sorted by
//! item number is also sorted by item id.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::fusion::{Provenance, ScoredList};
use crate::math;
use crate::{Error, Result};

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "but", "by", "for", "if", "in", "into", "is", "it", "no", "not", "of",
    "on", "or", "such", "that", "the", "their", "then", "there", "these", "they", "this", "to", "was", "will", "with",
];

/// Lowercases and splits on runs of non-alphanumeric characters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Analyzer {
    pub remove_stopwords: bool,
    /// Light plural stripping (`-ies`, `-s`).
    pub stem: bool,
}

impl Analyzer {
    pub fn analyze(&self, text: &str) -> Vec<String> {
        text.split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(|t| t.to_lowercase())
            .filter(|t| !(self.remove_stopwords && STOPWORDS.binary_search(&t.as_str()).is_ok()))
            .map(|t| if self.stem { s_stem(t) } else { t })
            .collect()
    }
}

fn s_stem(mut w: String) -> String {
    if w.ends_with("ies") && !w.ends_with("eies") && !w.ends_with("aies") {
        w.truncate(w.len() - 3);
        w.push('y');
    } else if w.ends_with('s') && !w.ends_with("us") && !w.ends_with("ss") && w.len() > 1 {
        w.truncate(w.len() - 1);
    }
    w
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<()> {
        if !(self.k1.is_finite() && self.k1 >= 0.0) {
            return Err(Error::OutOfRange { what: "k1", value: self.k1 });
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(Error::OutOfRange { what: "b", value: self.b });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub item: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bm25Index {
    params: Bm25Params,
    analyzer: Analyzer,
    ids: Vec<String>,
    doc_lengths: Vec<u32>,
    avg_doc_length: f64,
    postings: BTreeMap<String, Vec<Posting>>,
}

/// `ln(1 + (N - df + 0.5) / (df + 0.5))`, always positive.
pub fn idf(item_count: usize, df: usize) -> f64 {
    let (n, df) = (item_count as f64, df as f64);
    math::ln(1.0 + (n - df + 0.5) / (df + 0.5))
}

impl Bm25Index {
    pub fn build<I>(items: I, params: Bm25Params, analyzer: Analyzer) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        params.validate()?;
        let mut items: Vec<(String, String)> = items.into_iter().collect();
        if items.is_empty() {
            return Err(Error::Empty("item list"));
        }
        if items.len() > u32::MAX as usize {
            return Err(Error::InvalidParameter("too many items".into()));
        }
        items.sort_by(|a, b| a.0.cmp(&b.0));
        if let Some(w) = items.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::DuplicateId(w[0].0.clone()));
        }

        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_lengths = Vec::with_capacity(items.len());
        let mut ids = Vec::with_capacity(items.len());
        for (n, (id, text)) in items.into_iter().enumerate() {
            let terms = analyzer.analyze(&text);
            doc_lengths.push(terms.len() as u32);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in terms {
                *tf.entry(t).or_default() += 1;
            }
            for (term, tf) in tf {
                postings.entry(term).or_default().push(Posting { item: n as u32, tf });
            }
            ids.push(id);
        }
        let avg_doc_length = mean_length(&doc_lengths);
        Ok(Self { params, analyzer, ids, doc_lengths, avg_doc_length, postings })
    }

    /// Reassembles an index from stored parts, re-checking every invariant.
    pub fn from_parts(
        params: Bm25Params,
        analyzer: Analyzer,
        ids: Vec<String>,
        doc_lengths: Vec<u32>,
        postings: BTreeMap<String, Vec<Posting>>,
    ) -> Result<Self> {
        params.validate()?;
        if ids.is_empty() {
            return Err(Error::Empty("item list"));
        }
        if ids.len() != doc_lengths.len() {
            return Err(Error::InvalidParameter("ids and lengths differ in count".into()));
        }
        if let Some(w) = ids.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter(alloc::format!("ids not strictly sorted at `{}`", w[1])));
        }
        let mut term_totals = vec![0u64; ids.len()];
        for list in postings.values() {
            if list.windows(2).any(|w| w[0].item >= w[1].item) {
                return Err(Error::InvalidParameter("posting list not sorted".into()));
            }
            for p in list {
                let slot = term_totals
                    .get_mut(p.item as usize)
                    .ok_or_else(|| Error::InvalidParameter("posting references unknown item".into()))?;
                *slot += u64::from(p.tf);
            }
        }
        if term_totals.iter().zip(&doc_lengths).any(|(t, l)| *t != u64::from(*l)) {
            return Err(Error::InvalidParameter("document lengths disagree with postings".into()));
        }
        let avg_doc_length = mean_length(&doc_lengths);
        Ok(Self { params, analyzer, ids, doc_lengths, avg_doc_length, postings })
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn analyzer(&self) -> Analyzer {
        self.analyzer
    }

    pub fn item_count(&self) -> usize {
        self.ids.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn doc_lengths(&self) -> &[u32] {
        &self.doc_lengths
    }

    pub fn postings(&self) -> &BTreeMap<String, Vec<Posting>> {
        &self.postings
    }

    pub fn doc_length(&self, item_id: &str) -> Option<u32> {
        self.position(item_id).map(|p| self.doc_lengths[p])
    }

    fn position(&self, item_id: &str) -> Option<usize> {
        self.ids.binary_search_by(|i| i.as_str().cmp(item_id)).ok()
    }

    fn term_weight(&self, tf: u32, dl: u32, df: usize) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let tf = f64::from(tf);
        let norm = if self.avg_doc_length > 0.0 { 1.0 - b + b * f64::from(dl) / self.avg_doc_length } else { 1.0 };
        idf(self.ids.len(), df) * tf * (k1 + 1.0) / (tf + k1 * norm)
    }

    /// BM25 of one item for already-analyzed query terms. Repeated terms count
    /// once per occurrence.
    pub fn score(&self, query_terms: &[String], item_id: &str) -> Result<f64> {
        let pos = self.position(item_id).ok_or_else(|| Error::UnknownItem(item_id.to_string()))?;
        let item = pos as u32;
        let dl = self.doc_lengths[pos];
        let mut total = 0.0;
        for term in query_terms {
            if let Some(list) = self.postings.get(term) {
                if let Ok(i) = list.binary_search_by_key(&item, |p| p.item) {
                    total += self.term_weight(list[i].tf, dl, list.len());
                }
            }
        }
        Ok(total)
    }

    /// Top-`k` items for `query_text`, positive scores only.
    pub fn search(&self, query_text: &str, k: usize) -> Result<ScoredList> {
        self.search_padded(query_text, k, false)
    }

    /// As [`search`](Self::search); with `pad` set, fills up to `k` results
    /// with zero-score items in id order.
    pub fn search_padded(&self, query_text: &str, k: usize, pad: bool) -> Result<ScoredList> {
        if k == 0 {
            return Err(Error::InvalidParameter("k must be >= 1".into()));
        }
        let terms = self.analyzer.analyze(query_text);
        let mut acc = vec![0.0f64; self.ids.len()];
        let mut hit = vec![false; self.ids.len()];
        for term in &terms {
            if let Some(list) = self.postings.get(term) {
                for p in list {
                    let i = p.item as usize;
                    acc[i] += self.term_weight(p.tf, self.doc_lengths[i], list.len());
                    hit[i] = true;
                }
            }
        }
        let mut entries: Vec<(String, f64)> = acc
            .iter()
            .zip(&hit)
            .enumerate()
            .filter(|(_, (_, h))| **h)
            .map(|(i, (s, _))| (self.ids[i].clone(), *s))
            .collect();
        entries.sort_by(crate::fusion::rank_order);
        entries.truncate(k);
        if pad && entries.len() < k {
            let missing = k - entries.len();
            entries
                .extend(self.ids.iter().zip(&hit).filter(|(_, h)| !**h).take(missing).map(|(id, _)| (id.clone(), 0.0)));
        }
        ScoredList::from_ordered(entries, Provenance::Sparse)
    }
}

fn mean_length(lengths: &[u32]) -> f64 {
    if lengths.is_empty() {
        return 0.0;
    }
    lengths.iter().map(|l| f64::from(*l)).sum::<f64>() / lengths.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn index(docs: &[(&str, &str)]) -> Bm25Index {
        Bm25Index::build(
            docs.iter().map(|(i, t)| (i.to_string(), t.to_string())),
            Bm25Params::default(),
            Analyzer::default(),
        )
        .unwrap()
    }

    #[test]
    fn stopwords_sorted_for_binary_search() {
        assert!(STOPWORDS.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn single_document_postings() {
        let idx = index(&[("d", "a b a")]);
        assert_eq!(idx.postings()["a"], [Posting { item: 0, tf: 2 }]);
        assert_eq!(idx.postings()["b"], [Posting { item: 0, tf: 1 }]);
        assert_eq!(idx.avg_doc_length(), 3.0);
        assert_eq!(idx.item_count(), 1);
    }

    #[test]
    fn analyzer_lowercases_and_splits_on_punctuation() {
        assert_eq!(Analyzer::default().analyze("Hello, WORLD!"), ["hello", "world"]);
        let a = Analyzer { remove_stopwords: true, stem: true };
        assert_eq!(a.analyze("The cats and the puppies"), ["cat", "puppy"]);
    }

    #[test]
    fn build_errors() {
        assert_eq!(
            Bm25Index::build(Vec::new(), Bm25Params::default(), Analyzer::default()),
            Err(Error::Empty("item list"))
        );
        let dup = [("x".to_string(), "a".to_string()), ("x".to_string(), "b".to_string())];
        assert_eq!(
            Bm25Index::build(dup, Bm25Params::default(), Analyzer::default()),
            Err(Error::DuplicateId("x".into()))
        );
    }

    #[test]
    fn absent_term_scores_zero_everywhere() {
        let idx = index(&[("d1", "cat"), ("d2", "dog")]);
        let q = ["zebra".to_string()];
        assert_eq!(idx.score(&q, "d1").unwrap(), 0.0);
        assert!(idx.search("zebra", 5).unwrap().is_empty());
        assert!(idx.score(&q, "nope").is_err());
    }

    #[test]
    fn identical_docs_tie_and_sort_by_id() {
        let idx = index(&[("b", "red fox"), ("a", "red fox"), ("c", "blue")]);
        let hits = idx.search("fox", 10).unwrap();
        assert_eq!(hits.ids().collect::<Vec<_>>(), ["a", "b"]);
        assert_eq!(hits.entries()[0].1, hits.entries()[1].1);
    }

    #[test]
    fn repeated_query_terms_add() {
        let idx = index(&[("d1", "cat dog"), ("d2", "bird")]);
        let once = idx.score(&["cat".into()], "d1").unwrap();
        let twice = idx.score(&["cat".into(), "cat".into()], "d1").unwrap();
        assert!((twice - 2.0 * once).abs() < 1e-12);
    }

    #[test]
    fn padding_fills_with_zero_scores() {
        let idx = index(&[("d1", "cat"), ("d2", "dog"), ("d3", "emu")]);
        let hits = idx.search_padded("cat", 3, true).unwrap();
        assert_eq!(hits.ids().collect::<Vec<_>>(), ["d1", "d2", "d3"]);
        assert_eq!(hits.entries()[2].1, 0.0);
    }

    #[test]
    fn from_parts_round_trip_and_validation() {
        let idx = index(&[("d1", "cat cat dog"), ("d2", "cat")]);
        let rebuilt = Bm25Index::from_parts(
            idx.params(),
            idx.analyzer(),
            idx.ids().to_vec(),
            idx.doc_lengths().to_vec(),
            idx.postings().clone(),
        )
        .unwrap();
        assert_eq!(rebuilt, idx);
        let bad = Bm25Index::from_parts(
            idx.params(),
            idx.analyzer(),
            idx.ids().to_vec(),
            alloc::vec![1, 1],
            idx.postings().clone(),
        );
        assert!(bad.is_err());
    }
}
