//! Ranked score lists, min-max normalization, chunk-to-document
//! aggregation and dense/sparse interpolation.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::corpus::split_chunk_key;
use crate::{Error, Result};

/// Slack allowed when checking that a score lies in `[0, 1]`.
pub const UNIT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Sparse,
    Dense,
    Hybrid,
    RerankPoint,
    RerankList,
    Final,
}

/// Descending score, then ascending id.
pub fn rank_order(a: &(String, f64), b: &(String, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

/// An ordered `(item_id, score)` list with unique ids and finite,
/// non-increasing scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredList {
    entries: Vec<(String, f64)>,
    provenance: Provenance,
}

impl ScoredList {
    /// Sorts by descending score with ties broken by ascending id.
    pub fn from_unsorted(mut entries: Vec<(String, f64)>, provenance: Provenance) -> Result<Self> {
        validate(&entries)?;
        entries.sort_by(rank_order);
        Ok(Self { entries, provenance })
    }

    /// Keeps the caller's order, which must already be non-increasing in score.
    pub fn from_ordered(entries: Vec<(String, f64)>, provenance: Provenance) -> Result<Self> {
        validate(&entries)?;
        if entries.windows(2).any(|w| w[0].1 < w[1].1) {
            return Err(Error::InvalidParameter("scores must be non-increasing".into()));
        }
        Ok(Self { entries, provenance })
    }

    pub fn empty(provenance: Provenance) -> Self {
        Self { entries: Vec::new(), provenance }
    }

    pub fn entries(&self) -> &[(String, f64)] {
        &self.entries
    }

    pub fn into_entries(self) -> Vec<(String, f64)> {
        self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(id, _)| id.as_str())
    }

    pub fn score(&self, id: &str) -> Option<f64> {
        self.entries.iter().find(|(i, _)| i == id).map(|(_, s)| *s)
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn truncate(&mut self, k: usize) {
        self.entries.truncate(k);
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }
}

fn validate(entries: &[(String, f64)]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for (id, s) in entries {
        if !s.is_finite() {
            return Err(Error::NonFinite("score"));
        }
        if !seen.insert(id.as_str()) {
            return Err(Error::DuplicateId(id.clone()));
        }
    }
    Ok(())
}

/// `(s - min) / (max - min)`; a constant list maps to 0.5 everywhere.
pub fn minmax_normalize(list: &ScoredList) -> Result<ScoredList> {
    if list.is_empty() {
        return Err(Error::Empty("score list"));
    }
    let (min, max) =
        list.entries.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, s)| (lo.min(*s), hi.max(*s)));
    let span = max - min;
    let entries = list
        .entries
        .iter()
        .map(|(id, s)| {
            let n = if span > 0.0 { ((s - min) / span).clamp(0.0, 1.0) } else { 0.5 };
            (id.clone(), n)
        })
        .collect();
    // Order survives an increasing affine map, but ties created by rounding
    // must still follow the id rule.
    ScoredList::from_unsorted(entries, list.provenance)
}

/// Collapses chunk scores to one score per document: the maximum over that
/// document's chunks.
pub fn max_over_chunks<'a, I>(chunk_scores: I, provenance: Provenance) -> Result<ScoredList>
where
    I: IntoIterator<Item = ((&'a str, usize), f64)>,
{
    let mut best: BTreeMap<&str, f64> = BTreeMap::new();
    for ((doc_id, _), score) in chunk_scores {
        if !score.is_finite() {
            return Err(Error::NonFinite("chunk score"));
        }
        best.entry(doc_id).and_modify(|b| *b = b.max(score)).or_insert(score);
    }
    let entries = best.into_iter().map(|(d, s)| (String::from(d), s)).collect();
    ScoredList::from_unsorted(entries, provenance)
}

/// [`max_over_chunks`] for a list whose ids are chunk keys (`doc#index`).
pub fn max_over_chunk_keys(list: &ScoredList) -> Result<ScoredList> {
    let parsed = list
        .entries
        .iter()
        .map(|(key, s)| {
            split_chunk_key(key)
                .map(|k| (k, *s))
                .ok_or_else(|| Error::InvalidParameter(format!("`{key}` is not a chunk key")))
        })
        .collect::<Result<Vec<_>>>()?;
    max_over_chunks(parsed, list.provenance)
}

/// `w_dense * dense + (1 - w_dense) * sparse` over the union of ids; an id
/// missing from one side contributes 0 from it.
pub fn hybrid_fuse(dense: &ScoredList, sparse: &ScoredList, w_dense: f64) -> Result<ScoredList> {
    if !(0.0..=1.0).contains(&w_dense) {
        return Err(Error::OutOfRange { what: "dense weight", value: w_dense });
    }
    for (_, s) in dense.entries.iter().chain(&sparse.entries) {
        if !(-UNIT_TOLERANCE..=1.0 + UNIT_TOLERANCE).contains(s) {
            return Err(Error::OutOfRange { what: "fusion input score (normalize first)", value: *s });
        }
    }
    let mut fused: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
    for (id, s) in &dense.entries {
        fused.entry(id).or_default().0 = s.clamp(0.0, 1.0);
    }
    for (id, s) in &sparse.entries {
        fused.entry(id).or_default().1 = s.clamp(0.0, 1.0);
    }
    let entries = fused
        .into_iter()
        .map(|(id, (d, s))| (String::from(id), (w_dense * d + (1.0 - w_dense) * s).clamp(0.0, 1.0)))
        .collect();
    ScoredList::from_unsorted(entries, Provenance::Hybrid)
}
