//! Command-line runner and file formats for the DIVER retrieval pipeline.
//!
//! Algorithms live in `diver-core`; this crate adds JSONL, TREC and binary
//! index files, remote and scripted model backends, cassette record/replay,
//! configuration and the end-to-end runner.

pub mod backends;
pub mod cli;
pub mod config;
pub mod curate;
pub mod error;
pub mod index_io;
pub mod jsonl;
pub mod pipeline;
pub mod remote;
pub mod trec;
