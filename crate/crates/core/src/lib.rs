//! Allocation-only core of the DIVER retrieval pipeline.
//!
//! Everything in this crate is pure computation over in-memory data: text
//! cleaning and semantic chunking, an Okapi BM25 inverted index, exhaustive
//! cosine search, score fusion, retrieval-in-the-loop query expansion,
//! pointwise/listwise LLM reranking, InfoNCE training of a toy embedder and
//! nDCG evaluation. Model backends are reached through the [`llm::Completion`]
//! and [`dense::Embedder`] traits; file formats, HTTP clients and the CLI live
//! in the `diver` companion crate.

#![no_std]
#![warn(rust_2018_idioms, unused_qualifications)]

extern crate alloc;

pub mod bm25;
pub mod contrastive;
pub mod corpus;
pub mod dense;
mod error;
pub mod eval;
pub mod expand;
pub mod fusion;
pub mod llm;
mod math;
pub mod preprocess;
pub mod prompt;
pub mod rerank;

pub use error::{Error, Result};
