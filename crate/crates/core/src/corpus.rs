//! Corpus, query and relevance-judgment types.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub text: String,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::Empty("document id"));
        }
        Ok(Self { id, text: text.into() })
    }
}

/// A contiguous fragment of a document. `doc_id` is inherited from the
/// source document, so several chunks may share it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chunk {
    pub doc_id: String,
    pub chunk_index: usize,
    /// Overlap prefix (if any) followed by the chunk's own sentences.
    pub text: String,
    /// Tokens in the chunk's own sentences, overlap excluded.
    pub token_count: usize,
    /// Byte length of the overlap prefix at the start of `text`, joiner included.
    pub overlap_len: usize,
}

impl Chunk {
    /// The chunk text without the overlap borrowed from its predecessor.
    pub fn core_text(&self) -> &str {
        &self.text[self.overlap_len..]
    }

    pub fn key(&self) -> String {
        chunk_key(&self.doc_id, self.chunk_index)
    }
}

/// Item key used when chunks are indexed: `<doc_id>#<chunk_index>`.
pub fn chunk_key(doc_id: &str, chunk_index: usize) -> String {
    format!("{doc_id}#{chunk_index}")
}

/// Inverse of [`chunk_key`]. Splits on the last `#`.
pub fn split_chunk_key(key: &str) -> Option<(&str, usize)> {
    let (doc, idx) = key.rsplit_once('#')?;
    if doc.is_empty() {
        return None;
    }
    Some((doc, idx.parse().ok()?))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub id: String,
    pub text: String,
}

impl Query {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::Empty("query text"));
        }
        Ok(Self { id: id.into(), text })
    }
}

/// Rejects the first repeated id.
pub fn ensure_unique_ids<'a>(ids: impl IntoIterator<Item = &'a str>) -> Result<()> {
    let mut seen = BTreeSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(Error::DuplicateId(id.to_string()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QueryJudgment {
    pub gold: BTreeSet<String>,
    pub excluded: BTreeSet<String>,
}

/// Gold and excluded document ids per query.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Judgments {
    by_query: BTreeMap<String, QueryJudgment>,
}

impl Judgments {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds one query's judgments. Duplicate ids inside either list collapse;
    /// an empty gold set, a gold/excluded overlap or a repeated query id is an
    /// error.
    pub fn insert<G, E>(&mut self, query_id: impl Into<String>, gold: G, excluded: E) -> Result<()>
    where
        G: IntoIterator,
        G::Item: Into<String>,
        E: IntoIterator,
        E::Item: Into<String>,
    {
        let query_id = query_id.into();
        let gold: BTreeSet<String> = gold.into_iter().map(Into::into).collect();
        let excluded: BTreeSet<String> = excluded.into_iter().map(Into::into).collect();
        if gold.is_empty() {
            return Err(Error::InvalidParameter(format!("query `{query_id}` has no gold ids")));
        }
        if let Some(id) = gold.intersection(&excluded).next() {
            return Err(Error::InvalidParameter(format!("query `{query_id}` lists `{id}` as both gold and excluded")));
        }
        if self.by_query.contains_key(&query_id) {
            return Err(Error::DuplicateId(query_id));
        }
        self.by_query.insert(query_id, QueryJudgment { gold, excluded });
        Ok(())
    }

    pub fn get(&self, query_id: &str) -> Option<&QueryJudgment> {
        self.by_query.get(query_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &QueryJudgment)> {
        self.by_query.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.by_query.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_query.is_empty()
    }
}
