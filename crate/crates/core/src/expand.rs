//! Iterative, retrieval-in-the-loop query expansion.
//!
//! Each round retrieves passages the query has not seen yet, asks the
//! completion backend to write (round 1) or refine (later rounds) an answering
//! passage from them, and uses `original + separator + latest expansion` as
//! the next round's search string. Only the original query and the
//! final-round expansion survive into the output.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::corpus::Query;
use crate::llm::{Completion, CompletionRequest};
use crate::preprocess::truncate_tokens;
use crate::prompt::render;
use crate::{Error, Result};

pub const FIRST_ROUND_TEMPLATE: &str = "Given a query and the provided passages (most of which may be incorrect or irrelevant), identify helpful information from the passages and use it to write a correct answering passage. Use your own knowledge, not just the example passages!

Query: {query}
Possible helpful passages: {passages}";

pub const SUBSEQUENT_ROUND_TEMPLATE: &str = "Given a query, the provided passages (most of which may be incorrect or irrelevant), and the previous round's answer, identify helpful information from the passages and refine the prior answer. Ensure the output directly addresses the original query. Use your own knowledge, not just the example passages!

Query: {query}
Possible helpful passages: {passages}
Prior generated answer: {prior}";

#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionConfig {
    pub rounds: usize,
    pub top_k: usize,
    pub doc_truncate_tokens: usize,
    pub temperature: f64,
    pub separator: String,
    pub max_output_tokens: u32,
    pub model_id: String,
}

impl Default for ExpansionConfig {
    fn default() -> Self {
        Self {
            rounds: 2,
            top_k: 5,
            doc_truncate_tokens: 512,
            temperature: 0.7,
            separator: String::from("\n"),
            max_output_tokens: 2048,
            model_id: String::new(),
        }
    }
}

impl ExpansionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 {
            return Err(Error::InvalidParameter("top_k must be >= 1".into()));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(Error::OutOfRange { what: "temperature", value: self.temperature });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Passage {
    pub id: String,
    pub text: String,
}

/// Ranked passage source used between expansion rounds.
pub trait Retriever {
    /// Best `depth` passages for `query`, most relevant first.
    fn retrieve(&self, query: &str, depth: usize) -> Result<Vec<Passage>>;
}

impl<T: Retriever + ?Sized> Retriever for &T {
    fn retrieve(&self, query: &str, depth: usize) -> Result<Vec<Passage>> {
        (**self).retrieve(query, depth)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpansionState {
    pub original_query: String,
    /// Rounds completed so far.
    pub round: usize,
    pub last_expansion: Option<String>,
    pub seen_doc_ids: BTreeSet<String>,
    /// Passage ids fed to the backend in each round, in rank order.
    pub retrieved: Vec<Vec<String>>,
}

impl ExpansionState {
    fn new(original_query: &str) -> Self {
        Self {
            original_query: String::from(original_query),
            round: 0,
            last_expansion: None,
            seen_doc_ids: BTreeSet::new(),
            retrieved: Vec::new(),
        }
    }

    fn search_string(&self, separator: &str) -> String {
        match &self.last_expansion {
            Some(exp) => format!("{}{separator}{exp}", self.original_query),
            None => self.original_query.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expansion {
    pub expanded: String,
    pub state: ExpansionState,
}

/// A failed expansion together with everything completed before the failure.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("query expansion failed in round {}: {error}", .state.round + 1)]
pub struct ExpansionFailure {
    pub state: ExpansionState,
    #[source]
    pub error: Error,
}

/// Numbers passages `[1]`, `[2]`, ... separated by blank lines.
pub fn format_passages<S: AsRef<str>>(texts: &[S]) -> String {
    let mut out = String::new();
    for (i, t) in texts.iter().enumerate() {
        if i > 0 {
            out.push_str("\n\n");
        }
        out.push_str(&format!("[{}] {}", i + 1, t.as_ref()));
    }
    out
}

/// Renders the first-round prompt (`round == 1`, no prior) or the refinement
/// prompt (`round >= 2`, prior required).
pub fn build_expansion_prompt<S: AsRef<str>>(
    round: usize,
    query: &str,
    passages: &[S],
    prior: Option<&str>,
) -> Result<String> {
    let passages = format_passages(passages);
    match (round, prior) {
        (0, _) => Err(Error::InvalidParameter("expansion rounds are numbered from 1".into())),
        (1, None) => render(FIRST_ROUND_TEMPLATE, &[("query", query), ("passages", &passages)]),
        (1, Some(_)) => Err(Error::InvalidParameter("round 1 takes no prior expansion".into())),
        (_, None) => Err(Error::InvalidParameter(format!("round {round} needs the prior expansion"))),
        (_, Some(prior)) => {
            render(SUBSEQUENT_ROUND_TEMPLATE, &[("query", query), ("passages", &passages), ("prior", prior)])
        }
    }
}

/// Runs `config.rounds` rounds of retrieve-then-expand and returns
/// `original + separator + final expansion` (the original alone for zero
/// rounds).
#[allow(clippy::result_large_err)]
pub fn expand_query<R, L>(
    query: &Query,
    retriever: &R,
    llm: &L,
    config: &ExpansionConfig,
) -> core::result::Result<Expansion, ExpansionFailure>
where
    R: Retriever + ?Sized,
    L: Completion + ?Sized,
{
    let mut state = ExpansionState::new(&query.text);
    if let Err(error) = config.validate() {
        return Err(ExpansionFailure { state, error });
    }
    for round in 1..=config.rounds {
        match run_round(round, &mut state, retriever, llm, config) {
            Ok(()) => state.round = round,
            Err(error) => return Err(ExpansionFailure { state, error }),
        }
    }
    let expanded = match &state.last_expansion {
        Some(_) => state.search_string(&config.separator),
        None => state.original_query.clone(),
    };
    Ok(Expansion { expanded, state })
}

fn run_round<R, L>(
    round: usize,
    state: &mut ExpansionState,
    retriever: &R,
    llm: &L,
    config: &ExpansionConfig,
) -> Result<()>
where
    R: Retriever + ?Sized,
    L: Completion + ?Sized,
{
    let search = state.search_string(&config.separator);
    let ranked = retriever.retrieve(&search, config.top_k + state.seen_doc_ids.len())?;

    let mut fresh: Vec<Passage> = Vec::with_capacity(config.top_k);
    for p in ranked {
        if fresh.len() == config.top_k {
            break;
        }
        if state.seen_doc_ids.contains(&p.id) || fresh.iter().any(|f| f.id == p.id) {
            continue;
        }
        fresh.push(p);
    }
    let texts: Vec<&str> = fresh.iter().map(|p| truncate_tokens(&p.text, config.doc_truncate_tokens)).collect();
    let prompt = build_expansion_prompt(round, &state.original_query, &texts, state.last_expansion.as_deref())?;

    let ids: Vec<String> = fresh.iter().map(|p| p.id.clone()).collect();
    state.seen_doc_ids.extend(ids.iter().cloned());
    state.retrieved.push(ids);

    let request = CompletionRequest::new(prompt)
        .temperature(config.temperature)
        .max_output_tokens(config.max_output_tokens)
        .model(config.model_id.clone());
    let response = llm.complete(&request)?;
    state.last_expansion = Some(String::from(response.trim()));
    Ok(())
}
