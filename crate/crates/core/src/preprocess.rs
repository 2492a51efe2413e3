//! Rule-based document cleaning and semantic chunking with overlap.
//!
//! Chunking walks the sentences of a cleaned document and grows a chunk while
//! each new sentence stays close (cosine against the running mean of the
//! chunk's sentence embeddings) and the token budget allows it. Every chunk
//! after the first then borrows a character suffix of its predecessor as
//! leading context. Chunks keep the source document id.

use alloc::string::String;
use alloc::vec::Vec;

use crate::corpus::{Chunk, Document};
use crate::dense::{cosine_slices, Embedder};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChunkParams {
    pub max_chunk_tokens: usize,
    pub similarity_threshold: f64,
    pub overlap_fraction: f64,
    pub min_sentences_per_chunk: usize,
}

impl Default for ChunkParams {
    fn default() -> Self {
        Self { max_chunk_tokens: 4096, similarity_threshold: 0.5, overlap_fraction: 0.20, min_sentences_per_chunk: 1 }
    }
}

impl ChunkParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_chunk_tokens == 0 {
            return Err(Error::InvalidParameter("max_chunk_tokens must be >= 1".into()));
        }
        if !(-1.0..=1.0).contains(&self.similarity_threshold) {
            return Err(Error::OutOfRange { what: "similarity_threshold", value: self.similarity_threshold });
        }
        if !(0.0..1.0).contains(&self.overlap_fraction) {
            return Err(Error::OutOfRange { what: "overlap_fraction", value: self.overlap_fraction });
        }
        if self.min_sentences_per_chunk == 0 {
            return Err(Error::InvalidParameter("min_sentences_per_chunk must be >= 1".into()));
        }
        Ok(())
    }
}

/// Token counting used for chunk budgets and passage truncation.
///
/// Budgets are accounted as sums of per-sentence counts, so counters should
/// be additive across whitespace-separated pieces.
pub trait TokenCounter {
    fn count(&self, text: &str) -> usize;
}

/// Counts whitespace-delimited words.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceCounter;

impl TokenCounter for WhitespaceCounter {
    fn count(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }
}

pub fn count_tokens(text: &str) -> usize {
    WhitespaceCounter.count(text)
}

/// Prefix of `text` holding at most `max_tokens` whitespace-delimited words,
/// original spacing kept.
pub fn truncate_tokens(text: &str, max_tokens: usize) -> &str {
    let text = text.trim_start();
    let mut seen = 0;
    let mut in_word = false;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if in_word {
                seen += 1;
                if seen == max_tokens {
                    return &text[..i];
                }
            }
            in_word = false;
        } else {
            if !in_word && seen == max_tokens {
                return text[..i].trim_end();
            }
            in_word = true;
        }
    }
    text
}

fn ends_sentence(line: &str) -> bool {
    matches!(
        line.chars().next_back(),
        Some('.' | '!' | '?' | ':' | ';' | '"' | '\'' | ')' | ']' | '}' | '\u{201d}' | '\u{2019}' | '\u{bb}')
    )
}

fn continues_sentence(line: &str) -> bool {
    line.chars().next().is_some_and(|c| c.is_lowercase() || c.is_numeric())
}

fn collapse_blanks_in_line(line: &str) -> String {
    let mut out = String::with_capacity(line.len());
    let mut in_run = false;
    for c in line.chars() {
        if c == ' ' || c == '\t' {
            if !in_run {
                out.push(' ');
            }
            in_run = true;
        } else {
            out.push(c);
            in_run = false;
        }
    }
    let trimmed = out.trim_end().len();
    out.truncate(trimmed);
    out
}

/// Removes layout noise from scraped text:
///
/// * runs of spaces/tabs become one space and trailing whitespace goes;
/// * a line that continues an unfinished sentence (previous line lacks
///   terminal punctuation or a closing quote/bracket, this line starts with a
///   lowercase letter or digit) is joined to it with a space;
/// * consecutive blank lines collapse to one.
///
/// Idempotent.
pub fn clean_text(text: &str) -> String {
    let normalized;
    let text = if text.contains('\r') {
        normalized = text.replace("\r\n", "\n").replace('\r', "\n");
        normalized.as_str()
    } else {
        text
    };

    let mut lines: Vec<String> = Vec::new();
    for raw in text.split('\n') {
        let line = collapse_blanks_in_line(raw);
        if line.is_empty() {
            if lines.last().is_some_and(String::is_empty) {
                continue;
            }
            lines.push(line);
            continue;
        }
        if let Some(prev) = lines.last_mut() {
            let head = line.trim_start();
            if !prev.is_empty() && !ends_sentence(prev) && continues_sentence(head) {
                prev.push(' ');
                prev.push_str(head);
                continue;
            }
        }
        lines.push(line);
    }
    lines.join("\n")
}

/// Byte spans of sentences: text up to `.`, `!` or `?` followed by whitespace
/// or end of text, trimmed. No abbreviation handling.
pub fn split_sentences(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = 0;
    let mut iter = text.char_indices().peekable();
    while let Some((i, c)) = iter.next() {
        if matches!(c, '.' | '!' | '?') && iter.peek().is_none_or(|(_, n)| n.is_whitespace()) {
            let end = i + c.len_utf8();
            push_trimmed(text, start, end, &mut spans);
            start = end;
        }
    }
    push_trimmed(text, start, text.len(), &mut spans);
    spans
}

fn push_trimmed(text: &str, start: usize, end: usize, spans: &mut Vec<(usize, usize)>) {
    let slice = &text[start..end];
    let lead = slice.len() - slice.trim_start().len();
    let trail = slice.trim_end().len();
    if trail > lead {
        spans.push((start + lead, start + trail));
    }
}

/// Cuts a span whose token count exceeds `max` into word-aligned pieces that
/// fit. A single word over budget is cut by characters.
fn split_to_budget(
    text: &str,
    (start, end): (usize, usize),
    counter: &dyn TokenCounter,
    max: usize,
    out: &mut Vec<((usize, usize), usize)>,
) {
    let n = counter.count(&text[start..end]);
    if n <= max {
        out.push(((start, end), n));
        return;
    }
    let mut words = Vec::new();
    let mut word_start = None;
    for (i, c) in text[start..end].char_indices() {
        match (c.is_whitespace(), word_start) {
            (false, None) => word_start = Some(start + i),
            (true, Some(ws)) => {
                words.push((ws, start + i));
                word_start = None;
            }
            _ => {}
        }
    }
    if let Some(ws) = word_start {
        words.push((ws, end));
    }

    let mut piece: Option<(usize, usize, usize)> = None;
    for (ws, we) in words {
        let wn = counter.count(&text[ws..we]);
        if wn > max {
            if let Some((ps, pe, pn)) = piece.take() {
                out.push(((ps, pe), pn));
            }
            split_word(text, (ws, we), counter, max, out);
            continue;
        }
        piece = match piece {
            Some((ps, _, pn)) if pn + wn <= max => Some((ps, we, pn + wn)),
            Some((ps, pe, pn)) => {
                out.push(((ps, pe), pn));
                Some((ws, we, wn))
            }
            None => Some((ws, we, wn)),
        };
    }
    if let Some((ps, pe, pn)) = piece {
        out.push(((ps, pe), pn));
    }
}

fn split_word(
    text: &str,
    (start, end): (usize, usize),
    counter: &dyn TokenCounter,
    max: usize,
    out: &mut Vec<((usize, usize), usize)>,
) {
    let mut piece_start = start;
    let mut last_fit = start;
    for (i, c) in text[start..end].char_indices() {
        let next = start + i + c.len_utf8();
        if counter.count(&text[piece_start..next]) > max && last_fit > piece_start {
            out.push(((piece_start, last_fit), counter.count(&text[piece_start..last_fit])));
            piece_start = last_fit;
        }
        last_fit = next;
    }
    if end > piece_start {
        out.push(((piece_start, end), counter.count(&text[piece_start..end])));
    }
}

/// Start of the overlap suffix borrowed from `prev`: the last
/// `fraction` of its characters, moved back to the start of a word.
fn overlap_suffix(prev: &str, fraction: f64) -> &str {
    let chars = prev.chars().count();
    let take = (fraction * chars as f64) as usize;
    if take == 0 {
        return "";
    }
    let mut pos = prev.char_indices().nth(chars - take).map_or(prev.len(), |(i, _)| i);
    if prev[pos..].starts_with(char::is_whitespace) {
        return prev[pos..].trim_start();
    }
    while pos > 0 {
        let before = prev[..pos].chars().next_back().expect("pos > 0");
        if before.is_whitespace() {
            break;
        }
        pos -= before.len_utf8();
    }
    prev[pos..].trim_start()
}

/// Semantic chunking with the whitespace token counter.
pub fn chunk_document(doc: &Document, embedder: &dyn Embedder, params: &ChunkParams) -> Result<Vec<Chunk>> {
    chunk_document_with(doc, embedder, params, &WhitespaceCounter)
}

pub fn chunk_document_with(
    doc: &Document,
    embedder: &dyn Embedder,
    params: &ChunkParams,
    counter: &dyn TokenCounter,
) -> Result<Vec<Chunk>> {
    params.validate()?;
    let text = doc.text.as_str();
    let mut units = Vec::new();
    for span in split_sentences(text) {
        split_to_budget(text, span, counter, params.max_chunk_tokens, &mut units);
    }
    if units.is_empty() {
        return Err(Error::EmptyDocument(doc.id.clone()));
    }

    let unit_texts: Vec<&str> = units.iter().map(|((s, e), _)| &text[*s..*e]).collect();
    let embeddings = embedder.embed_batch(&unit_texts, None)?;
    if embeddings.len() != units.len() {
        return Err(Error::Embedder("embedding count differs from sentence count".into()));
    }

    // (first unit, last unit, tokens)
    let mut groups: Vec<(usize, usize, usize)> = Vec::new();
    let mut centroid: Vec<f64> = Vec::new();
    for (i, (&(_, tokens), emb)) in units.iter().zip(&embeddings).enumerate() {
        let joins = match groups.last() {
            None => false,
            Some(&(first, last, used)) => {
                let members = last - first + 1;
                let fits = used.saturating_add(tokens) <= params.max_chunk_tokens;
                let cohesive = members < params.min_sentences_per_chunk || {
                    let sim = cosine_slices(emb.values(), &centroid).unwrap_or(0.0);
                    sim >= params.similarity_threshold
                };
                fits && cohesive
            }
        };
        if joins {
            let g = groups.last_mut().expect("joins implies a group");
            g.1 = i;
            g.2 += tokens;
            centroid.iter_mut().zip(emb.values()).for_each(|(c, v)| *c += v);
        } else {
            groups.push((i, i, tokens));
            centroid = emb.values().to_vec();
        }
    }

    let mut chunks: Vec<Chunk> = Vec::with_capacity(groups.len());
    let mut prev_core: Option<&str> = None;
    for (index, (first, last, tokens)) in groups.into_iter().enumerate() {
        let core = &text[units[first].0 .0..units[last].0 .1];
        let suffix = prev_core.map_or("", |p| overlap_suffix(p, params.overlap_fraction));
        let (chunk_text, overlap_len) = if suffix.is_empty() {
            (String::from(core), 0)
        } else {
            let mut t = String::with_capacity(suffix.len() + 1 + core.len());
            t.push_str(suffix);
            t.push(' ');
            t.push_str(core);
            (t, suffix.len() + 1)
        };
        chunks.push(Chunk {
            doc_id: doc.id.clone(),
            chunk_index: index,
            text: chunk_text,
            token_count: tokens,
            overlap_len,
        });
        prev_core = Some(core);
    }
    Ok(chunks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::{EmbeddingVector, HashEmbedder};
    use alloc::vec;

    #[test]
    fn clean_text_reference_cases() {
        assert_eq!(clean_text(""), "");
        assert_eq!(clean_text("A complete sentence.\n\n\n\nNext."), "A complete sentence.\n\nNext.");
        assert_eq!(clean_text("The result was\nsignificant  for  all"), "The result was significant for all");
    }

    #[test]
    fn clean_text_keeps_finished_lines_apart() {
        assert_eq!(clean_text("Done.\nnext line"), "Done.\nnext line");
        assert_eq!(clean_text("Heading\nCapitalised"), "Heading\nCapitalised");
        assert_eq!(clean_text("value is\n42 units"), "value is 42 units");
        assert_eq!(clean_text("Trailing. \t \nX\r\nY"), "Trailing.\nX\nY");
    }

    #[test]
    fn clean_text_merges_chains() {
        let once = clean_text("one\ntwo\nthree\n\n\nfour.");
        assert_eq!(once, "one two three\n\nfour.");
        assert_eq!(clean_text(&once), once);
    }

    #[test]
    fn token_counting() {
        assert_eq!(count_tokens(""), 0);
        assert_eq!(count_tokens("one two  three"), 3);
        let long = vec!["w"; 4096].join(" ");
        assert_eq!(count_tokens(&long), 4096);
    }

    #[test]
    fn truncation_keeps_leading_words() {
        assert_eq!(truncate_tokens("a  b c d", 2), "a  b");
        assert_eq!(truncate_tokens("a b", 5), "a b");
        assert_eq!(truncate_tokens("  a b", 1), "a");
        assert_eq!(truncate_tokens("a b", 0), "");
    }

    #[test]
    fn sentence_spans() {
        let t = "One. Two!  Three?Four. tail";
        let s: Vec<&str> = split_sentences(t).into_iter().map(|(a, b)| &t[a..b]).collect();
        assert_eq!(s, ["One.", "Two!", "Three?Four.", "tail"]);
        assert!(split_sentences("   ").is_empty());
    }

    #[test]
    fn single_sentence_document() {
        let doc = Document::new("d", "Just one sentence here.").unwrap();
        let e = HashEmbedder::new(32).unwrap();
        let chunks = chunk_document(&doc, &e, &ChunkParams::default()).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].chunk_index, 0);
        assert_eq!(chunks[0].text, "Just one sentence here.");
        assert_eq!(chunks[0].token_count, 4);
    }

    #[test]
    fn empty_document_is_rejected() {
        let doc = Document::new("d", "  \n ").unwrap();
        let e = HashEmbedder::new(8).unwrap();
        assert_eq!(chunk_document(&doc, &e, &ChunkParams::default()), Err(Error::EmptyDocument("d".into())));
    }

    struct TopicEmbedder;

    impl Embedder for TopicEmbedder {
        fn dimension(&self) -> usize {
            2
        }
        fn embed_batch(&self, texts: &[&str], _: Option<&str>) -> Result<Vec<EmbeddingVector>> {
            texts
                .iter()
                .map(|t| {
                    let v = if t.contains("cat") { vec![1.0, 0.0] } else { vec![0.0, 1.0] };
                    EmbeddingVector::normalized(v)
                })
                .collect()
        }
    }

    #[test]
    fn orthogonal_topics_split_at_boundary() {
        let doc =
            Document::new("d", "The cat sat. A cat purred. The cat slept. Stocks fell today. Markets rallied later.")
                .unwrap();
        let params = ChunkParams { overlap_fraction: 0.0, ..ChunkParams::default() };
        let chunks = chunk_document(&doc, &TopicEmbedder, &params).unwrap();
        assert_eq!(chunks.len(), 2);
        assert_eq!(chunks[0].text, "The cat sat. A cat purred. The cat slept.");
        assert_eq!(chunks[1].text, "Stocks fell today. Markets rallied later.");
    }

    #[test]
    fn overlap_prefix_comes_from_previous_chunk() {
        let doc = Document::new("d", "The cat sat on the warm mat. Stocks fell sharply today.").unwrap();
        let params = ChunkParams { overlap_fraction: 0.5, ..ChunkParams::default() };
        let chunks = chunk_document(&doc, &TopicEmbedder, &params).unwrap();
        assert_eq!(chunks.len(), 2);
        assert_eq!(chunks[1].core_text(), "Stocks fell sharply today.");
        let prefix = &chunks[1].text[..chunks[1].overlap_len - 1];
        assert!(chunks[0].text.ends_with(prefix));
        assert_eq!(prefix, "the warm mat.");
    }

    #[test]
    fn token_budget_closes_chunks() {
        let doc = Document::new("d", "a b c. d e f. g h i.").unwrap();
        let params = ChunkParams {
            max_chunk_tokens: 4,
            similarity_threshold: -1.0,
            overlap_fraction: 0.0,
            min_sentences_per_chunk: 1,
        };
        let e = HashEmbedder::new(16).unwrap();
        let chunks = chunk_document(&doc, &e, &params).unwrap();
        assert_eq!(chunks.iter().map(|c| c.token_count).collect::<Vec<_>>(), [3, 3, 3]);
    }

    #[test]
    fn oversized_sentence_is_cut_into_word_pieces() {
        let doc = Document::new("d", "w1 w2 w3 w4 w5 w6 w7").unwrap();
        let params = ChunkParams {
            max_chunk_tokens: 3,
            similarity_threshold: -1.0,
            overlap_fraction: 0.0,
            min_sentences_per_chunk: 1,
        };
        let e = HashEmbedder::new(16).unwrap();
        let chunks = chunk_document(&doc, &e, &params).unwrap();
        let texts: Vec<&str> = chunks.iter().map(|c| c.text.as_str()).collect();
        assert_eq!(texts, ["w1 w2 w3", "w4 w5 w6", "w7"]);
    }

    #[test]
    fn invalid_params_rejected() {
        let bad = ChunkParams { overlap_fraction: 1.0, ..ChunkParams::default() };
        assert!(bad.validate().is_err());
        let bad = ChunkParams { max_chunk_tokens: 0, ..ChunkParams::default() };
        assert!(bad.validate().is_err());
    }
}
