//! JSON Lines readers and writers for corpora, queries, judgments, chunks,
//! expansions and training data.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use diver_core::contrastive::TrainingExample;
use diver_core::corpus::{Chunk, Document, Judgments, Query};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{AppError, AppResult};

/// Record field names. Defaults follow the BRIGHT-style layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldMap {
    pub doc_id: String,
    pub doc_text: String,
    pub query_id: String,
    pub query_text: String,
    pub gold_ids: String,
    pub excluded_ids: String,
}

impl Default for FieldMap {
    fn default() -> Self {
        Self {
            doc_id: "id".into(),
            doc_text: "content".into(),
            query_id: "id".into(),
            query_text: "query".into(),
            gold_ids: "gold_ids".into(),
            excluded_ids: "excluded_ids".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadOptions {
    pub fields: FieldMap,
    /// Skip malformed lines instead of failing on the first one.
    pub permissive: bool,
    /// Accept documents whose text is empty.
    pub allow_empty_text: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Loaded<T> {
    pub records: Vec<T>,
    /// `(line number, reason)` of every skipped line in permissive mode.
    pub skipped: Vec<(usize, String)>,
}

fn open(path: &Path) -> AppResult<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| AppError::io(path, e))
}

fn create(path: &Path) -> AppResult<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| AppError::io(path, e))
}

/// Calls `f` on every non-blank line parsed as a JSON object, with its
/// 1-based line number. In permissive mode errors from `f` are collected
/// instead of returned.
fn for_each_object<F>(path: &Path, permissive: bool, mut f: F) -> AppResult<Vec<(usize, String)>>
where
    F: FnMut(usize, &Map<String, Value>) -> Result<(), String>,
{
    let mut skipped = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let n = i + 1;
        let line = line.map_err(|e| AppError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let result = match serde_json::from_str::<Value>(&line) {
            Ok(Value::Object(m)) => f(n, &m),
            Ok(_) => Err("record is not a JSON object".to_string()),
            Err(e) => Err(format!("invalid JSON: {e}")),
        };
        if let Err(why) = result {
            if permissive {
                log::warn!("{}:{n}: skipped: {why}", path.display());
                skipped.push((n, why));
            } else {
                return Err(AppError::Data(format!("{}:{n}: {why}", path.display())));
            }
        }
    }
    Ok(skipped)
}

fn str_field<'a>(m: &'a Map<String, Value>, key: &str) -> Result<&'a str, String> {
    match m.get(key) {
        Some(Value::String(s)) => Ok(s),
        Some(_) => Err(format!("field `{key}` must be a string")),
        None => Err(format!("missing field `{key}`")),
    }
}

/// Ids may be written as strings or integers.
fn id_field(m: &Map<String, Value>, key: &str) -> Result<String, String> {
    match m.get(key) {
        Some(Value::String(s)) if !s.is_empty() => Ok(s.clone()),
        Some(Value::Number(n)) => Ok(n.to_string()),
        Some(_) => Err(format!("field `{key}` must be a non-empty string")),
        None => Err(format!("missing field `{key}`")),
    }
}

fn id_list(m: &Map<String, Value>, key: &str, required: bool) -> Result<Vec<String>, String> {
    match m.get(key) {
        None | Some(Value::Null) if !required => Ok(Vec::new()),
        None => Err(format!("missing field `{key}`")),
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| match v {
                Value::String(s) => Ok(s.clone()),
                Value::Number(n) => Ok(n.to_string()),
                _ => Err(format!("field `{key}` must hold string ids")),
            })
            .collect(),
        Some(_) => Err(format!("field `{key}` must be an array")),
    }
}

pub fn load_corpus(path: &Path, opts: &LoadOptions) -> AppResult<Loaded<Document>> {
    let mut records = Vec::new();
    let mut first_seen: HashMap<String, usize> = HashMap::new();
    let f = &opts.fields;
    let skipped = for_each_object(path, opts.permissive, |n, m| {
        let id = id_field(m, &f.doc_id)?;
        let text = str_field(m, &f.doc_text)?;
        if text.trim().is_empty() && !opts.allow_empty_text {
            return Err(format!("document `{id}` has empty text"));
        }
        if let Some(prev) = first_seen.get(&id) {
            return Err(format!("duplicate document id `{id}` (first on line {prev})"));
        }
        first_seen.insert(id.clone(), n);
        records.push(Document::new(id, text).map_err(|e| e.to_string())?);
        Ok(())
    })?;
    Ok(Loaded { records, skipped })
}

pub fn write_corpus(path: &Path, docs: &[Document], fields: &FieldMap) -> AppResult<()> {
    write_records(
        path,
        docs.iter().map(|d| {
            let mut m = Map::new();
            m.insert(fields.doc_id.clone(), Value::String(d.id.clone()));
            m.insert(fields.doc_text.clone(), Value::String(d.text.clone()));
            Value::Object(m)
        }),
    )
}

/// Queries plus the judgments carried on the same records. Queries without
/// gold ids are loaded but left unjudged.
pub fn load_queries(path: &Path, opts: &LoadOptions) -> AppResult<(Loaded<Query>, Judgments)> {
    let mut records = Vec::new();
    let mut judgments = Judgments::new();
    let mut first_seen: HashMap<String, usize> = HashMap::new();
    let f = &opts.fields;
    let skipped = for_each_object(path, opts.permissive, |n, m| {
        let id = id_field(m, &f.query_id)?;
        let text = str_field(m, &f.query_text)?;
        if let Some(prev) = first_seen.get(&id) {
            return Err(format!("duplicate query id `{id}` (first on line {prev})"));
        }
        let query = Query::new(id.clone(), text).map_err(|e| e.to_string())?;
        let gold = id_list(m, &f.gold_ids, false)?;
        let excluded = id_list(m, &f.excluded_ids, false)?;
        if !gold.is_empty() {
            judgments.insert(id.clone(), gold, excluded).map_err(|e| e.to_string())?;
        }
        first_seen.insert(id, n);
        records.push(query);
        Ok(())
    })?;
    Ok((Loaded { records, skipped }, judgments))
}

/// Judgment records: `query_id` (or the configured query id field), gold
/// ids, optional excluded ids.
pub fn load_judgments(path: &Path, opts: &LoadOptions) -> AppResult<Judgments> {
    let mut judgments = Judgments::new();
    let f = &opts.fields;
    for_each_object(path, opts.permissive, |_, m| {
        let id = if m.contains_key("query_id") { id_field(m, "query_id")? } else { id_field(m, &f.query_id)? };
        let gold = id_list(m, &f.gold_ids, true)?;
        let excluded = id_list(m, &f.excluded_ids, false)?;
        judgments.insert(id, gold, excluded).map_err(|e| e.to_string())
    })?;
    Ok(judgments)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkRecord {
    pub doc_id: String,
    pub chunk_index: usize,
    pub text: String,
    pub token_count: usize,
    /// Bytes at the start of `text` borrowed from the previous chunk.
    #[serde(default)]
    pub overlap_len: usize,
}

impl From<&Chunk> for ChunkRecord {
    fn from(c: &Chunk) -> Self {
        Self {
            doc_id: c.doc_id.clone(),
            chunk_index: c.chunk_index,
            text: c.text.clone(),
            token_count: c.token_count,
            overlap_len: c.overlap_len,
        }
    }
}

impl ChunkRecord {
    pub fn into_chunk(self) -> Result<Chunk, String> {
        if self.text.trim().is_empty() {
            return Err("chunk text is empty".into());
        }
        if self.overlap_len > self.text.len() || !self.text.is_char_boundary(self.overlap_len) {
            return Err("overlap_len does not fall on a character boundary of text".into());
        }
        Ok(Chunk {
            doc_id: self.doc_id,
            chunk_index: self.chunk_index,
            text: self.text,
            token_count: self.token_count,
            overlap_len: self.overlap_len,
        })
    }
}

pub fn write_chunks(path: &Path, chunks: &[Chunk]) -> AppResult<()> {
    write_records(path, chunks.iter().map(ChunkRecord::from))
}

/// Reads chunks and checks that every document's indices run 0..n without
/// gaps or repeats.
pub fn load_chunks(path: &Path) -> AppResult<Vec<Chunk>> {
    let records: Vec<ChunkRecord> = read_records(path)?;
    let mut per_doc: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for r in &records {
        per_doc.entry(&r.doc_id).or_default().push(r.chunk_index);
    }
    for (doc, mut idx) in per_doc {
        idx.sort_unstable();
        if idx.iter().enumerate().any(|(i, v)| i != *v) {
            return Err(AppError::Data(format!(
                "{}: chunk indices of `{doc}` are not 0..{}",
                path.display(),
                idx.len()
            )));
        }
    }
    records
        .into_iter()
        .map(|r| r.into_chunk().map_err(|e| AppError::Data(format!("{}: {e}", path.display()))))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpandedRecord {
    pub id: String,
    pub original: String,
    pub expanded: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub query: String,
    pub positive: String,
    #[serde(default)]
    pub negatives: Vec<String>,
}

impl TrainingRecord {
    pub fn into_example(self) -> Result<TrainingExample, String> {
        TrainingExample::new(self.query, self.positive, self.negatives).map_err(|e| e.to_string())
    }
}

/// Strict typed reader; errors carry the line number.
pub fn read_records<T: for<'de> Deserialize<'de>>(path: &Path) -> AppResult<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| AppError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec =
            serde_json::from_str(&line).map_err(|e| AppError::Data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_records<T: Serialize>(path: &Path, records: impl IntoIterator<Item = T>) -> AppResult<()> {
    let mut w = create(path)?;
    for r in records {
        serde_json::to_writer(&mut w, &r).map_err(|e| AppError::Data(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| AppError::io(path, e))?;
    }
    w.flush().map_err(|e| AppError::io(path, e))
}

pub(crate) fn create_file(path: &Path) -> AppResult<BufWriter<File>> {
    create(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file(lines: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(lines.as_bytes()).unwrap();
        f
    }

    #[test]
    fn corpus_loading() {
        let f = file("{\"id\":\"d1\",\"content\":\"a\"}\n{\"id\":\"d2\",\"content\":\"b\"}\n");
        assert_eq!(load_corpus(f.path(), &LoadOptions::default()).unwrap().records.len(), 2);
        let f = file("");
        assert!(load_corpus(f.path(), &LoadOptions::default()).unwrap().records.is_empty());
    }

    #[test]
    fn duplicate_id_names_line() {
        let f = file(
            "{\"id\":\"d1\",\"content\":\"a\"}\n{\"id\":\"d2\",\"content\":\"b\"}\n{\"id\":\"d1\",\"content\":\"c\"}\n",
        );
        let err = load_corpus(f.path(), &LoadOptions::default()).unwrap_err().to_string();
        assert!(err.contains(":3:") && err.contains("d1"), "{err}");
    }

    #[test]
    fn permissive_mode_counts_bad_lines() {
        let f =
            file("{\"id\":\"d1\",\"content\":\"a\"}\nnot json\n{\"id\":\"d2\"}\n{\"id\":\"d3\",\"content\":\"c\"}\n");
        assert!(load_corpus(f.path(), &LoadOptions::default()).is_err());
        let opts = LoadOptions { permissive: true, ..LoadOptions::default() };
        let got = load_corpus(f.path(), &opts).unwrap();
        assert_eq!(got.records.len(), 2);
        assert_eq!(got.skipped.iter().map(|s| s.0).collect::<Vec<_>>(), [2, 3]);
    }

    #[test]
    fn empty_text_needs_opt_in() {
        let f = file("{\"id\":\"d1\",\"content\":\"\"}\n");
        assert!(load_corpus(f.path(), &LoadOptions::default()).is_err());
        let opts = LoadOptions { allow_empty_text: true, ..LoadOptions::default() };
        assert_eq!(load_corpus(f.path(), &opts).unwrap().records.len(), 1);
    }

    #[test]
    fn judgments_rules() {
        let f = file("{\"query_id\":\"q1\",\"gold_ids\":[\"d1\",\"d1\"]}\n");
        let j = load_judgments(f.path(), &LoadOptions::default()).unwrap();
        assert_eq!(j.get("q1").unwrap().gold.len(), 1);
        let f = file("{\"query_id\":\"q1\",\"gold_ids\":[\"d1\"],\"excluded_ids\":[\"d1\"]}\n");
        assert!(load_judgments(f.path(), &LoadOptions::default()).is_err());
        let f = file("{\"query_id\":\"q1\",\"gold_ids\":[\"d1\"],\"excluded_ids\":[\"d2\"]}\n");
        let j = load_judgments(f.path(), &LoadOptions::default()).unwrap();
        assert!(j.get("q1").unwrap().excluded.contains("d2"));
        let f = file("{\"query_id\":\"q1\",\"gold_ids\":[]}\n");
        assert!(load_judgments(f.path(), &LoadOptions::default()).is_err());
    }

    #[test]
    fn custom_field_names() {
        let f = file("{\"doc\":\"x\",\"body\":\"text\"}\n");
        let opts = LoadOptions {
            fields: FieldMap { doc_id: "doc".into(), doc_text: "body".into(), ..FieldMap::default() },
            ..LoadOptions::default()
        };
        assert_eq!(load_corpus(f.path(), &opts).unwrap().records[0].id, "x");
    }

    #[test]
    fn corpus_round_trip() {
        let docs = vec![Document::new("a", "x \"q\"\n y").unwrap(), Document::new("b", "z").unwrap()];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        write_corpus(&p, &docs, &FieldMap::default()).unwrap();
        assert_eq!(load_corpus(&p, &LoadOptions::default()).unwrap().records, docs);
    }

    #[test]
    fn chunk_gaps_rejected() {
        let f = file("{\"doc_id\":\"a\",\"chunk_index\":0,\"text\":\"x\",\"token_count\":1}\n{\"doc_id\":\"a\",\"chunk_index\":2,\"text\":\"y\",\"token_count\":1}\n");
        assert!(load_chunks(f.path()).is_err());
    }
}
