//! Versioned little-endian binary files for the BM25 and vector indexes.
//!
//! Layout: 8-byte magic, `u32` version, then the payload. Strings are a
//! `u32` byte length followed by UTF-8.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};
use std::path::Path;

use diver_core::bm25::{Analyzer, Bm25Index, Bm25Params, Posting};
use diver_core::dense::{EmbeddingVector, VectorIndex};

use crate::error::{AppError, AppResult};
use crate::jsonl::create_file;

const BM25_MAGIC: &[u8; 8] = b"DIVERBM2";
const VECTOR_MAGIC: &[u8; 8] = b"DIVERVEC";
const VERSION: u32 = 1;

struct Out<W: Write>(W);

impl<W: Write> Out<W> {
    fn u8(&mut self, v: u8) -> io::Result<()> {
        self.0.write_all(&[v])
    }
    fn u32(&mut self, v: u32) -> io::Result<()> {
        self.0.write_all(&v.to_le_bytes())
    }
    fn f64(&mut self, v: f64) -> io::Result<()> {
        self.0.write_all(&v.to_le_bytes())
    }
    fn len(&mut self, n: usize) -> io::Result<()> {
        let n = u32::try_from(n).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "length exceeds u32"))?;
        self.u32(n)
    }
    fn str(&mut self, s: &str) -> io::Result<()> {
        self.len(s.len())?;
        self.0.write_all(s.as_bytes())
    }
}

struct In<R: Read>(R);

impl<R: Read> In<R> {
    fn bytes<const N: usize>(&mut self) -> io::Result<[u8; N]> {
        let mut b = [0u8; N];
        self.0.read_exact(&mut b)?;
        Ok(b)
    }
    fn u8(&mut self) -> io::Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }
    fn u32(&mut self) -> io::Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }
    fn f64(&mut self) -> io::Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
    fn len(&mut self) -> io::Result<usize> {
        Ok(self.u32()? as usize)
    }
    fn str(&mut self) -> io::Result<String> {
        let n = self.len()?;
        let mut buf = Vec::new();
        (&mut self.0).take(n as u64).read_to_end(&mut buf)?;
        if buf.len() != n {
            return Err(io::ErrorKind::UnexpectedEof.into());
        }
        String::from_utf8(buf).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }
    fn header(&mut self, magic: &[u8; 8]) -> io::Result<()> {
        if &self.bytes::<8>()? != magic {
            return Err(io::Error::new(io::ErrorKind::InvalidData, "bad magic header"));
        }
        match self.u32()? {
            VERSION => Ok(()),
            v => Err(io::Error::new(io::ErrorKind::InvalidData, format!("unsupported version {v}"))),
        }
    }
    fn end(&mut self) -> io::Result<()> {
        let mut b = [0u8; 1];
        match self.0.read(&mut b)? {
            0 => Ok(()),
            _ => Err(io::Error::new(io::ErrorKind::InvalidData, "trailing bytes")),
        }
    }
}

pub fn encode_bm25(index: &Bm25Index, w: impl Write) -> io::Result<()> {
    let mut o = Out(w);
    o.0.write_all(BM25_MAGIC)?;
    o.u32(VERSION)?;
    let p = index.params();
    o.f64(p.k1)?;
    o.f64(p.b)?;
    let a = index.analyzer();
    o.u8(u8::from(a.remove_stopwords) | (u8::from(a.stem) << 1))?;
    o.len(index.ids().len())?;
    for (id, len) in index.ids().iter().zip(index.doc_lengths()) {
        o.str(id)?;
        o.u32(*len)?;
    }
    o.len(index.postings().len())?;
    for (term, list) in index.postings() {
        o.str(term)?;
        o.len(list.len())?;
        for p in list {
            o.u32(p.item)?;
            o.u32(p.tf)?;
        }
    }
    o.0.flush()
}

pub fn decode_bm25(r: impl Read) -> AppResult<Bm25Index> {
    let bad = |e: io::Error| AppError::Data(format!("BM25 index: {e}"));
    let mut i = In(r);
    i.header(BM25_MAGIC).map_err(bad)?;
    let params = Bm25Params { k1: i.f64().map_err(bad)?, b: i.f64().map_err(bad)? };
    let flags = i.u8().map_err(bad)?;
    let analyzer = Analyzer { remove_stopwords: flags & 1 != 0, stem: flags & 2 != 0 };
    let n = i.len().map_err(bad)?;
    let mut ids = Vec::with_capacity(n.min(1 << 20));
    let mut lengths = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        ids.push(i.str().map_err(bad)?);
        lengths.push(i.u32().map_err(bad)?);
    }
    let terms = i.len().map_err(bad)?;
    let mut postings = BTreeMap::new();
    for _ in 0..terms {
        let term = i.str().map_err(bad)?;
        let count = i.len().map_err(bad)?;
        let mut list = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            list.push(Posting { item: i.u32().map_err(bad)?, tf: i.u32().map_err(bad)? });
        }
        postings.insert(term, list);
    }
    i.end().map_err(bad)?;
    Bm25Index::from_parts(params, analyzer, ids, lengths, postings)
        .map_err(|e| AppError::Data(format!("BM25 index: {e}")))
}

pub fn encode_vectors(index: &VectorIndex, w: impl Write) -> io::Result<()> {
    let mut o = Out(w);
    o.0.write_all(VECTOR_MAGIC)?;
    o.u32(VERSION)?;
    o.len(index.dimension())?;
    o.len(index.len())?;
    for (id, v) in index.iter() {
        o.str(id)?;
        for x in v.values() {
            o.f64(*x)?;
        }
    }
    o.0.flush()
}

pub fn decode_vectors(r: impl Read) -> AppResult<VectorIndex> {
    let bad = |e: io::Error| AppError::Data(format!("vector index: {e}"));
    let mut i = In(r);
    i.header(VECTOR_MAGIC).map_err(bad)?;
    let dim = i.len().map_err(bad)?;
    let n = i.len().map_err(bad)?;
    let mut items = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let id = i.str().map_err(bad)?;
        let values = (0..dim).map(|_| i.f64()).collect::<io::Result<Vec<_>>>().map_err(bad)?;
        let v = EmbeddingVector::new(values).map_err(|e| AppError::Data(format!("vector index: `{id}`: {e}")))?;
        items.push((id, v));
    }
    i.end().map_err(bad)?;
    VectorIndex::build(items).map_err(|e| AppError::Data(format!("vector index: {e}")))
}

pub fn save_bm25(path: &Path, index: &Bm25Index) -> AppResult<()> {
    encode_bm25(index, create_file(path)?).map_err(|e| AppError::io(path, e))
}

pub fn load_bm25(path: &Path) -> AppResult<Bm25Index> {
    let f = std::fs::File::open(path).map_err(|e| AppError::io(path, e))?;
    decode_bm25(io::BufReader::new(f)).map_err(|e| AppError::Data(format!("{}: {e}", path.display())))
}

pub fn save_vectors(path: &Path, index: &VectorIndex) -> AppResult<()> {
    encode_vectors(index, create_file(path)?).map_err(|e| AppError::io(path, e))
}

pub fn load_vectors(path: &Path) -> AppResult<VectorIndex> {
    let f = std::fs::File::open(path).map_err(|e| AppError::io(path, e))?;
    decode_vectors(io::BufReader::new(f)).map_err(|e| AppError::Data(format!("{}: {e}", path.display())))
}
