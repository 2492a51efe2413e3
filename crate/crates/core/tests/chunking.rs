use diver_core::corpus::Document;
use diver_core::dense::{Embedder, EmbeddingVector, HashEmbedder};
use diver_core::preprocess::{chunk_document, clean_text, count_tokens, ChunkParams};
use diver_core::Result;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

fn squash(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn synthetic_doc(rng: &mut ChaCha8Rng, i: usize) -> Document {
    const WORDS: [&str; 16] = [
        "enzyme", "orbit", "lattice", "proof", "river", "tensor", "market", "voltage", "glacier", "sonnet", "kernel",
        "protein", "bridge", "theorem", "delta", "harvest",
    ];
    let sentences = 1 + rng.next_u32() as usize % 60;
    let mut text = String::new();
    for s in 0..sentences {
        // Some sentences are long enough to exercise small budgets.
        let len = 3 + rng.next_u32() as usize % if s % 7 == 0 { 200 } else { 25 };
        let words: Vec<&str> = (0..len).map(|_| WORDS[rng.next_u32() as usize % WORDS.len()]).collect();
        text.push_str(&words.join(" "));
        text.push_str(if rng.next_u32().is_multiple_of(5) { "!\n" } else { ". " });
        if rng.next_u32().is_multiple_of(9) {
            text.push_str("\n\n\n");
        }
    }
    Document::new(format!("doc{i:02}"), clean_text(&text)).unwrap()
}

fn check_corpus(params: &ChunkParams) {
    let emb = HashEmbedder::new(64).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..50 {
        let doc = synthetic_doc(&mut rng, i);
        let chunks = chunk_document(&doc, &emb, params).unwrap();
        assert!(!chunks.is_empty());
        for (n, c) in chunks.iter().enumerate() {
            assert_eq!(c.doc_id, doc.id);
            assert_eq!(c.chunk_index, n);
            assert!(c.token_count <= params.max_chunk_tokens, "{} > {}", c.token_count, params.max_chunk_tokens);
            assert_eq!(c.token_count, count_tokens(c.core_text()));
            assert!(!c.text.trim().is_empty());
            if n == 0 {
                assert_eq!(c.overlap_len, 0);
            }
        }
        let rebuilt = chunks.iter().map(|c| c.core_text()).collect::<Vec<_>>().join(" ");
        assert_eq!(squash(&rebuilt), squash(&doc.text), "reconstruction of {}", doc.id);
    }
}

#[test]
fn synthetic_corpus_default_params() {
    check_corpus(&ChunkParams::default());
}

#[test]
fn synthetic_corpus_small_budget() {
    check_corpus(&ChunkParams { max_chunk_tokens: 40, ..ChunkParams::default() });
    check_corpus(&ChunkParams { max_chunk_tokens: 5, similarity_threshold: 0.2, ..ChunkParams::default() });
}

#[test]
fn permissive_threshold_gives_one_chunk() {
    let params = ChunkParams { similarity_threshold: -1.0, max_chunk_tokens: usize::MAX, ..ChunkParams::default() };
    let emb = HashEmbedder::new(64).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in 0..50 {
        let doc = synthetic_doc(&mut rng, i);
        assert_eq!(chunk_document(&doc, &emb, &params).unwrap().len(), 1);
    }
}

/// Sentences mentioning "cat" point one way, everything else the other.
struct Topics;

impl Embedder for Topics {
    fn dimension(&self) -> usize {
        2
    }

    fn embed_batch(&self, texts: &[&str], _: Option<&str>) -> Result<Vec<EmbeddingVector>> {
        texts
            .iter()
            .map(|t| EmbeddingVector::normalized(if t.contains("cat") { vec![1.0, 0.0] } else { vec![0.0, 1.0] }))
            .collect()
    }
}

#[test]
fn orthogonal_topics_split_at_boundary() {
    let doc = Document::new(
        "t",
        "The cat sat. A cat purred. Every cat naps. Stocks fell today. Bonds rallied late. Markets closed flat.",
    )
    .unwrap();
    let chunks = chunk_document(&doc, &Topics, &ChunkParams::default()).unwrap();
    assert_eq!(chunks.len(), 2);
    assert_eq!(chunks[0].text, "The cat sat. A cat purred. Every cat naps.");
    assert_eq!(chunks[1].core_text(), "Stocks fell today. Bonds rallied late. Markets closed flat.");
    assert!(chunks[1].text.starts_with("cat naps. "));
}

#[test]
fn single_sentence() {
    let doc = Document::new("s", "Only one sentence here.").unwrap();
    let chunks = chunk_document(&doc, &HashEmbedder::new(16).unwrap(), &ChunkParams::default()).unwrap();
    assert_eq!(chunks.len(), 1);
    assert_eq!(chunks[0].text, "Only one sentence here.");
    assert_eq!(chunks[0].chunk_index, 0);
}

#[test]
fn word_count_oracle() {
    let text = vec!["tok"; 4096].join(" ");
    assert_eq!(count_tokens(&text), 4096);
    assert_eq!(count_tokens("one two  three"), 3);
    assert_eq!(count_tokens(""), 0);
}
