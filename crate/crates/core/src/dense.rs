//! Embedding contract, cosine similarity and exhaustive vector search.
//!
//! A text is represented by one vector per backend call. Remote models stand
//! behind [`Embedder`]; [`HashEmbedder`] is the deterministic local stand-in
//! that feature-hashes lowercase character trigrams.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::fusion::{Provenance, ScoredList};
use crate::math;
use crate::{Error, Result};

const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f64>,
    normalized: bool,
}

impl EmbeddingVector {
    /// Wraps raw values without normalizing them.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("embedding"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding"));
        }
        let normalized = (math::norm(&values) - 1.0).abs() <= NORM_TOLERANCE;
        Ok(Self { values, normalized })
    }

    /// Scales `values` to unit L2 norm.
    pub fn normalized(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("embedding"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding"));
        }
        let n = math::norm(&values);
        if n == 0.0 {
            return Err(Error::ZeroVector);
        }
        values.iter_mut().for_each(|v| *v /= n);
        Ok(Self { values, normalized: true })
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn norm(&self) -> f64 {
        math::norm(&self.values)
    }
}

/// Text-to-vector backend. Implementations must be deterministic for a fixed
/// input and return vectors in input order.
pub trait Embedder {
    fn dimension(&self) -> usize;

    fn embed_batch(&self, texts: &[&str], instruction: Option<&str>) -> Result<Vec<EmbeddingVector>>;

    fn embed(&self, text: &str, instruction: Option<&str>) -> Result<EmbeddingVector> {
        let mut out = self.embed_batch(&[text], instruction)?;
        out.pop().ok_or(Error::Embedder("backend returned no vector".into()))
    }
}

impl<T: Embedder + ?Sized> Embedder for &T {
    fn dimension(&self) -> usize {
        (**self).dimension()
    }

    fn embed_batch(&self, texts: &[&str], instruction: Option<&str>) -> Result<Vec<EmbeddingVector>> {
        (**self).embed_batch(texts, instruction)
    }
}

impl<T: Embedder + ?Sized> Embedder for alloc::boxed::Box<T> {
    fn dimension(&self) -> usize {
        (**self).dimension()
    }

    fn embed_batch(&self, texts: &[&str], instruction: Option<&str>) -> Result<Vec<EmbeddingVector>> {
        (**self).embed_batch(texts, instruction)
    }
}

/// Unnormalized bag of hashed lowercase character trigrams. Texts shorter than
/// three characters hash as a single gram.
pub fn trigram_features(text: &str, dim: usize, seed: u64) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    if dim == 0 {
        return out;
    }
    let chars: Vec<char> = text.chars().flat_map(char::to_lowercase).collect();
    let mut buf = [0u8; 12];
    let mut bump = |gram: &[char]| {
        let mut len = 0;
        for c in gram {
            len += c.encode_utf8(&mut buf[len..]).len();
        }
        let bucket = (math::fnv1a(seed, &buf[..len]) % dim as u64) as usize;
        out[bucket] += 1.0;
    };
    match chars.len() {
        0 => {}
        1 | 2 => bump(&chars),
        _ => chars.windows(3).for_each(bump),
    }
    out
}

/// Deterministic local embedder over hashed character trigrams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashEmbedder {
    dim: usize,
    seed: u64,
}

impl HashEmbedder {
    pub const DEFAULT_SEED: u64 = 0x5eed_d1e5;

    pub fn new(dim: usize) -> Result<Self> {
        Self::with_seed(dim, Self::DEFAULT_SEED)
    }

    pub fn with_seed(dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("embedding dimension must be >= 1".into()));
        }
        Ok(Self { dim, seed })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn embed_one(&self, text: &str, instruction: Option<&str>) -> Result<EmbeddingVector> {
        if text.trim().is_empty() {
            return Err(Error::Empty("text to embed"));
        }
        let features = match instruction {
            Some(ins) => {
                let mut joined = String::with_capacity(ins.len() + text.len());
                joined.push_str(ins);
                joined.push_str(text);
                trigram_features(&joined, self.dim, self.seed)
            }
            None => trigram_features(text, self.dim, self.seed),
        };
        EmbeddingVector::normalized(features).map_err(|_| Error::DegenerateEmbedding(text.to_string()))
    }
}

impl Embedder for HashEmbedder {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[&str], instruction: Option<&str>) -> Result<Vec<EmbeddingVector>> {
        texts.iter().map(|t| self.embed_one(t, instruction)).collect()
    }
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64> {
    cosine_slices(u.values(), v.values())
}

pub(crate) fn cosine_slices(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch { expected: u.len(), found: v.len() });
    }
    let (nu, nv) = (math::norm(u), math::norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((math::dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Flat in-memory vector store.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VectorIndex {
    ids: Vec<String>,
    vectors: Vec<EmbeddingVector>,
    dimension: usize,
}

impl VectorIndex {
    pub fn build(items: impl IntoIterator<Item = (String, EmbeddingVector)>) -> Result<Self> {
        let mut index = Self::default();
        let mut seen = BTreeSet::new();
        for (id, v) in items {
            if index.vectors.is_empty() {
                index.dimension = v.dimension();
            } else if v.dimension() != index.dimension {
                return Err(Error::DimensionMismatch { expected: index.dimension, found: v.dimension() });
            }
            if !seen.insert(id.clone()) {
                return Err(Error::DuplicateId(id));
            }
            index.ids.push(id);
            index.vectors.push(v);
        }
        Ok(index)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &EmbeddingVector)> {
        self.ids.iter().map(String::as_str).zip(&self.vectors)
    }

    pub fn get(&self, id: &str) -> Option<&EmbeddingVector> {
        self.ids.iter().position(|i| i == id).map(|p| &self.vectors[p])
    }
}

/// Exhaustive cosine scan; top-`k` by score, ties broken by id.
pub fn dense_search(index: &VectorIndex, query: &EmbeddingVector, k: usize) -> Result<ScoredList> {
    if index.is_empty() {
        return Err(Error::Empty("vector index"));
    }
    if k == 0 {
        return Err(Error::InvalidParameter("k must be >= 1".into()));
    }
    if query.dimension() != index.dimension {
        return Err(Error::DimensionMismatch { expected: index.dimension, found: query.dimension() });
    }
    let scored = index.iter().map(|(id, v)| Ok((id.to_string(), cosine(query, v)?))).collect::<Result<Vec<_>>>()?;
    let mut list = ScoredList::from_unsorted(scored, Provenance::Dense)?;
    list.truncate(k);
    Ok(list)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::sqrt;

    fn v(xs: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(xs.to_vec()).unwrap()
    }

    #[test]
    fn hash_embedder_is_deterministic_and_unit_norm() {
        let e = HashEmbedder::new(64).unwrap();
        let a = e.embed("any text at all", None).unwrap();
        let b = e.embed("any text at all", None).unwrap();
        assert_eq!(a.values(), b.values());
        assert!((a.norm() - 1.0).abs() < 1e-6);
        assert!(a.is_normalized());
    }

    #[test]
    fn repeated_trigram_lands_in_one_bucket() {
        let e = HashEmbedder::new(8).unwrap();
        let x = e.embed("aaaa", None).unwrap();
        let nonzero: Vec<f64> = x.values().iter().copied().filter(|c| *c != 0.0).collect();
        assert_eq!(nonzero.len(), 1);
        assert!((nonzero[0].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn blank_text_is_rejected() {
        let e = HashEmbedder::new(8).unwrap();
        assert!(e.embed("   ", None).is_err());
    }

    #[test]
    fn cosine_reference_values() {
        let e1 = v(&[1.0, 0.0, 0.0]);
        let e2 = v(&[0.0, 1.0, 0.0]);
        assert_eq!(cosine(&e1, &e1).unwrap(), 1.0);
        assert_eq!(cosine(&e1, &e2).unwrap(), 0.0);
        let diag = v(&[1.0 / sqrt(2.0), 1.0 / sqrt(2.0), 0.0]);
        assert!((cosine(&diag, &e1).unwrap() - 0.707_106_781_186_547_5).abs() < 1e-12);
    }

    #[test]
    fn cosine_errors() {
        assert_eq!(cosine(&v(&[0.0, 0.0]), &v(&[1.0, 0.0])), Err(Error::ZeroVector));
        assert!(matches!(cosine(&v(&[1.0]), &v(&[1.0, 0.0])), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn search_puts_identical_vector_first() {
        let idx = VectorIndex::build([
            ("a".to_string(), v(&[1.0, 0.0])),
            ("b".to_string(), v(&[0.0, 1.0])),
            ("c".to_string(), v(&[0.6, 0.8])),
        ])
        .unwrap();
        let hits = dense_search(&idx, &v(&[0.0, 1.0]), 10).unwrap();
        assert_eq!(hits.ids().collect::<Vec<_>>(), ["b", "c", "a"]);
        assert_eq!(hits.entries()[0].1, 1.0);
    }

    #[test]
    fn index_rejects_duplicates_and_mixed_dimensions() {
        assert!(VectorIndex::build([("a".to_string(), v(&[1.0])), ("a".to_string(), v(&[1.0]))]).is_err());
        assert!(VectorIndex::build([("a".to_string(), v(&[1.0])), ("b".to_string(), v(&[1.0, 0.0]))]).is_err());
        assert!(dense_search(&VectorIndex::default(), &v(&[1.0]), 1).is_err());
    }
}
