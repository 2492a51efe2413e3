//! InfoNCE with curated hard negatives, an analytically differentiated toy
//! embedder, and the annotation-driven sample curation protocol.
//!
//! The toy embedder maps a hashed trigram bag `x` through a linear layer `W`
//! and L2-normalizes: `e(t) = normalize(x(t) · W)`. Similarities are cosines
//! of those embeddings divided by an optional temperature (1 by default, which
//! is the raw-exponential form of the loss).

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde_json::Value;

use crate::dense::{trigram_features, Embedder, EmbeddingVector};
use crate::llm::{Completion, CompletionRequest};
use crate::math;
use crate::prompt::render;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingExample {
    pub query: String,
    pub positive: String,
    pub negatives: Vec<String>,
}

impl TrainingExample {
    pub fn new(query: impl Into<String>, positive: impl Into<String>, negatives: Vec<String>) -> Result<Self> {
        let positive = positive.into();
        if positive.trim().is_empty() {
            return Err(Error::Empty("positive document"));
        }
        Ok(Self { query: query.into(), positive, negatives })
    }
}

/// `-ln(exp(s+) / (exp(s+) + Σ exp(s-)))`, zero when there are no negatives.
pub fn infonce_loss(s_pos: f64, s_negs: &[f64]) -> Result<f64> {
    infonce_loss_with_temperature(s_pos, s_negs, 1.0)
}

/// As [`infonce_loss`] with every similarity divided by `temperature`.
pub fn infonce_loss_with_temperature(s_pos: f64, s_negs: &[f64], temperature: f64) -> Result<f64> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::OutOfRange { what: "temperature", value: temperature });
    }
    if !s_pos.is_finite() || s_negs.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("similarity"));
    }
    if s_negs.is_empty() {
        return Ok(0.0);
    }
    let logits: Vec<f64> = core::iter::once(s_pos).chain(s_negs.iter().copied()).map(|s| s / temperature).collect();
    Ok((math::log_sum_exp(&logits) - logits[0]).max(0.0))
}

/// Linear projection of hashed trigram features followed by L2
/// normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyEmbedder {
    feature_dim: usize,
    embed_dim: usize,
    /// Row-major `feature_dim x embed_dim`.
    weights: Vec<f64>,
    hash_seed: u64,
}

impl ToyEmbedder {
    pub fn new(feature_dim: usize, embed_dim: usize, weights: Vec<f64>) -> Result<Self> {
        if feature_dim == 0 || embed_dim == 0 {
            return Err(Error::InvalidParameter("toy embedder dimensions must be >= 1".into()));
        }
        if weights.len() != feature_dim * embed_dim {
            return Err(Error::DimensionMismatch { expected: feature_dim * embed_dim, found: weights.len() });
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("weights"));
        }
        Ok(Self { feature_dim, embed_dim, weights, hash_seed: crate::dense::HashEmbedder::DEFAULT_SEED })
    }

    /// Weights drawn uniformly from `[-scale, scale)`.
    pub fn random(feature_dim: usize, embed_dim: usize, scale: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = (0..feature_dim * embed_dim).map(|_| scale * (2.0 * unit_f64(&mut rng) - 1.0)).collect();
        Self::new(feature_dim, embed_dim, weights)
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn features(&self, text: &str) -> Vec<f64> {
        trigram_features(text, self.feature_dim, self.hash_seed)
    }

    fn project(&self, x: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; self.embed_dim];
        for (f, xf) in x.iter().enumerate() {
            if *xf == 0.0 {
                continue;
            }
            let row = &self.weights[f * self.embed_dim..(f + 1) * self.embed_dim];
            z.iter_mut().zip(row).for_each(|(zi, w)| *zi += xf * w);
        }
        z
    }

    fn forward(&self, text: &str) -> Result<Forward> {
        let x = self.features(text);
        let z = self.project(&x);
        let n = math::norm(&z);
        if !n.is_finite() {
            return Err(Error::NonFinite("embedding"));
        }
        if n == 0.0 {
            return Err(Error::DegenerateEmbedding(text.to_string()));
        }
        let u = z.iter().map(|v| v / n).collect();
        Ok(Forward { x, u, norm: n })
    }

    /// Unit-norm embedding of `text`.
    pub fn embed_text(&self, text: &str) -> Result<Vec<f64>> {
        Ok(self.forward(text)?.u)
    }

    /// Cosine similarity of two texts under the current weights.
    pub fn similarity(&self, a: &str, b: &str) -> Result<f64> {
        Ok(math::dot(&self.forward(a)?.u, &self.forward(b)?.u))
    }
}

impl Embedder for ToyEmbedder {
    fn dimension(&self) -> usize {
        self.embed_dim
    }

    fn embed_batch(&self, texts: &[&str], _instruction: Option<&str>) -> Result<Vec<EmbeddingVector>> {
        texts.iter().map(|t| EmbeddingVector::normalized(self.embed_text(t)?)).collect()
    }
}

struct Forward {
    x: Vec<f64>,
    u: Vec<f64>,
    norm: f64,
}

fn unit_f64(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// InfoNCE loss of one example and its gradient with respect to the toy
/// embedder's weights (row-major, same shape as the weights).
pub fn loss_and_grad(example: &TrainingExample, embedder: &ToyEmbedder) -> Result<(f64, Vec<f64>)> {
    loss_and_grad_with_temperature(example, embedder, 1.0)
}

pub fn loss_and_grad_with_temperature(
    example: &TrainingExample,
    embedder: &ToyEmbedder,
    temperature: f64,
) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; embedder.weights.len()];
    let loss = accumulate_grad(example, embedder, temperature, &mut grad)?;
    Ok((loss, grad))
}

fn accumulate_grad(
    example: &TrainingExample,
    embedder: &ToyEmbedder,
    temperature: f64,
    grad: &mut [f64],
) -> Result<f64> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::OutOfRange { what: "temperature", value: temperature });
    }
    let q = embedder.forward(&example.query)?;
    let docs = core::iter::once(&example.positive)
        .chain(&example.negatives)
        .map(|d| embedder.forward(d))
        .collect::<Result<Vec<_>>>()?;
    if example.negatives.is_empty() {
        return Ok(0.0);
    }

    let cos: Vec<f64> = docs.iter().map(|d| math::dot(&q.u, &d.u)).collect();
    let logits: Vec<f64> = cos.iter().map(|c| c / temperature).collect();
    let lse = math::log_sum_exp(&logits);
    let loss = (lse - logits[0]).max(0.0);

    // dL/dlogit_j = softmax_j - [j == 0]
    let dlogit: Vec<f64> =
        logits.iter().enumerate().map(|(j, l)| math::exp(l - lse) - if j == 0 { 1.0 } else { 0.0 }).collect();

    let dim = embedder.embed_dim;
    let mut du_q = vec![0.0; dim];
    for (d, g) in docs.iter().zip(&dlogit) {
        let g = g / temperature;
        du_q.iter_mut().zip(&d.u).for_each(|(a, v)| *a += g * v);
        let du_d: Vec<f64> = q.u.iter().map(|v| g * v).collect();
        backprop_normalize(embedder, d, &du_d, grad);
    }
    backprop_normalize(embedder, &q, &du_q, grad);
    Ok(loss)
}

/// Pushes `dL/du` through `u = z/|z|`, `z = x·W` into `grad`.
fn backprop_normalize(embedder: &ToyEmbedder, f: &Forward, du: &[f64], grad: &mut [f64]) {
    let proj = math::dot(du, &f.u);
    let dz: Vec<f64> = du.iter().zip(&f.u).map(|(d, u)| (d - proj * u) / f.norm).collect();
    let dim = embedder.embed_dim;
    for (row, xf) in f.x.iter().enumerate() {
        if *xf == 0.0 {
            continue;
        }
        grad[row * dim..(row + 1) * dim].iter_mut().zip(&dz).for_each(|(g, d)| *g += xf * d);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub feature_dim: usize,
    pub embed_dim: usize,
    pub temperature: f64,
    pub init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            learning_rate: 0.1,
            seed: 7,
            feature_dim: 256,
            embed_dim: 32,
            temperature: 1.0,
            init_scale: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub embedder: ToyEmbedder,
    /// Mean loss before training, then after every epoch.
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("toy training failed: {error}")]
pub struct TrainFailure {
    pub trace: Vec<f64>,
    #[source]
    pub error: Error,
}

/// Mean loss and mean gradient over `examples`, summed in input order.
pub fn batch_loss_and_grad(
    examples: &[TrainingExample],
    embedder: &ToyEmbedder,
    temperature: f64,
) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; embedder.weights.len()];
    let mut total = 0.0;
    for ex in examples {
        total += accumulate_grad(ex, embedder, temperature, &mut grad)?;
    }
    let n = examples.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((total / n, grad))
}

/// Full-batch gradient descent from seeded random weights.
pub fn train_toy(
    examples: &[TrainingExample],
    config: &TrainConfig,
) -> core::result::Result<TrainOutcome, TrainFailure> {
    let fail = |trace: Vec<f64>, error| Err(TrainFailure { trace, error });
    if examples.is_empty() {
        return fail(Vec::new(), Error::Empty("training examples"));
    }
    if !(config.learning_rate.is_finite() && config.learning_rate > 0.0) {
        return fail(Vec::new(), Error::OutOfRange { what: "learning rate", value: config.learning_rate });
    }
    let mut embedder = match ToyEmbedder::random(config.feature_dim, config.embed_dim, config.init_scale, config.seed) {
        Ok(e) => e,
        Err(e) => return fail(Vec::new(), e),
    };
    let mut trace = Vec::with_capacity(config.epochs + 1);
    for epoch in 0..=config.epochs {
        let (loss, grad) = match batch_loss_and_grad(examples, &embedder, config.temperature) {
            Ok(r) => r,
            Err(Error::NonFinite(_)) => return fail(trace, Error::Diverged { epoch }),
            Err(e) => return fail(trace, e),
        };
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return fail(trace, Error::Diverged { epoch });
        }
        trace.push(loss);
        if epoch == config.epochs {
            break;
        }
        embedder.weights.iter_mut().zip(&grad).for_each(|(w, g)| *w -= config.learning_rate * g);
        if embedder.weights.iter().any(|w| !w.is_finite()) {
            return fail(trace, Error::Diverged { epoch: epoch + 1 });
        }
    }
    Ok(TrainOutcome { embedder, trace })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatedPair {
    pub query: String,
    pub doc: String,
    pub score: i64,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Curated {
    pub positives: Vec<AnnotatedPair>,
    pub negatives: Vec<AnnotatedPair>,
    pub dropped: Vec<AnnotatedPair>,
}

/// Score above 6 is a positive, below 4 a negative; 4..=6 is dropped.
pub fn curate_pairs(pairs: Vec<AnnotatedPair>) -> Result<Curated> {
    if let Some(bad) = pairs.iter().find(|p| !(0..=10).contains(&p.score)) {
        return Err(Error::OutOfRange { what: "annotation score", value: bad.score as f64 });
    }
    let mut out = Curated::default();
    for p in pairs {
        match p.score {
            7..=10 => out.positives.push(p),
            0..=3 => out.negatives.push(p),
            _ => out.dropped.push(p),
        }
    }
    Ok(out)
}

pub const ANNOTATE_TEMPLATE: &str = "Your task is to judge how useful a piece of Doc is as a reference for answering a Query. The Query is the user's question; the Doc includes the web page's title and some retrieved snippets from the page.

Please follow the rules below strictly:

1. Pay attention to whether the time, place, subject, and object in the Query match those in the Doc; if they do not match, you must deduct points.

2. Pay special attention to whether proper nouns in the Query match those in the Doc;

3. Regarding the Doc:

3.1 Identify the main meaning of the Doc. If only a small part of the Doc is relevant while the majority discusses other topics, you must deduct points;

3.2 Assess the applicability of the Doc; if it is overly one-sided, you must deduct points.

4. If the Query is vague and its specific meaning cannot be determined, you should deduct points appropriately.

5. Your output must be in JSON format and contain 2 keys: one is score, and the other is reason. The score represents the number, and reason explains your scoring rationale. Do not output any other unrelated Doc.

I will now give you a Query and Doc. Please follow the rules above strictly and output the score and reason in JSON format. Do not output anything else.

Query: {query}

Doc: {doc}

Response:";

pub const POSITIVE_GEN_TEMPLATE: &str = "You are a simulated Google search engine. Your task is to return webpages that can answer the given Query. Please follow these guidelines:

1. Mimic the style of a typical webpage: each result must include both a title and content.

2. For multi-hop questions, you only need to generate the document for the final hop.

Example: If the Query describes symptoms and asks for treatment, first infer the disease yourself, then produce a webpage that discusses treatment for that disease only\u{2014}do not describe the symptoms again.

3. If the user\u{2019}s intent is narrow and could reasonably be satisfied by a single webpage, generate just one document. If the Query contains multiple sub-questions that would normally require separate sources, provide multiple documents, ensuring each covers a distinct, non-overlapping topic.

4. Output format:

Document 1:{\"title\":\"xxx\",\"content\":\"xxx\"}

\u{2026}

Document n:{\"title\":\"xxx\",\"content\":\"xxx\"}

5. Generate no more than three documents in total. The content of each document must be 400\u{2013}800 words, self-contained, and coherent.

6. Remember, you are simulating real Google search results. Your webpages should not analyze or directly answer the Query; instead, they should present relevant information in a conversational, everyday style, similar to popular health sites like Dingxiangyuan\u{2014}but without describing specific patient cases.

Now I will give you a Query; please generate webpage content in the required format.

Query: {query}

Response:";

pub const HARD_NEGATIVE_GEN_TEMPLATE: &str = "You have been assigned a paragraph-generation task:

You will receive incomplete data containing the following information:

\u{2022} \u{201c}input\u{201d}: a string consisting of a random prompt specified by the task.

\u{2022} \u{201c}positive document\u{201d}: a string that, according to the task, is relevant to the \u{201c}input.\u{201d}

Your job is to produce a JSON-formatted \u{201c}hard negative document\u{201d}:

\u{2022} The \u{201c}hard negative document\u{201d} is a difficult negative sample. While it shares some lexical overlap with the input, it does not help solve the input\u{2019}s problem and is less relevant to the input than the \u{201c}positive document.\u{201d}

Please observe these guidelines:

1. The value of \u{201c}hard negative document\u{201d} must be written in the same language as the input.

2. The \u{201c}hard negative document\u{201d} should be a long passage (at least 300 characters) and should avoid excessive lexical overlap; otherwise, the task will be too simple.

3. The \u{201c}input,\u{201d} \u{201c}positive document,\u{201d} and \u{201c}hard negative document\u{201d} must remain independent of one another.

Your output must always be a single JSON object\u{2014}provide no explanations or additional text. Be creative!

Now, apply the instructions to the following data:

'input': {query}

'positive document': {positive}

Your response:";

/// Minimum length, in characters, of an accepted hard negative.
pub const HARD_NEGATIVE_MIN_CHARS: usize = 300;

/// Maximum number of documents kept from one positive-generation reply.
pub const MAX_GENERATED_POSITIVES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurationPrompt<'a> {
    Annotate { query: &'a str, doc: &'a str },
    PositiveGen { query: &'a str },
    HardNegativeGen { query: &'a str, positive: &'a str },
}

pub fn build_curation_prompt(kind: CurationPrompt<'_>) -> Result<String> {
    fn need<'a>(name: &str, v: &'a str) -> Result<&'a str> {
        if v.trim().is_empty() {
            Err(Error::MissingPlaceholder(name.to_string()))
        } else {
            Ok(v)
        }
    }
    match kind {
        CurationPrompt::Annotate { query, doc } => {
            render(ANNOTATE_TEMPLATE, &[("query", need("query", query)?), ("doc", need("doc", doc)?)])
        }
        CurationPrompt::PositiveGen { query } => render(POSITIVE_GEN_TEMPLATE, &[("query", need("query", query)?)]),
        CurationPrompt::HardNegativeGen { query, positive } => render(
            HARD_NEGATIVE_GEN_TEMPLATE,
            &[("query", need("query", query)?), ("positive", need("positive", positive)?)],
        ),
    }
}

/// Outermost `{...}` span of `text` parsed as JSON.
fn json_object(text: &str) -> Option<serde_json::Map<String, Value>> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    if end < start {
        return None;
    }
    match serde_json::from_str::<Value>(&text[start..=end]).ok()? {
        Value::Object(m) => Some(m),
        _ => None,
    }
}

/// Parses a `{"score": .., "reason": ..}` annotation reply.
pub fn parse_annotation(query: &str, doc: &str, response: &str) -> Result<AnnotatedPair> {
    let bad = |why: &str| Error::InvalidParameter(format!("annotation reply {why}"));
    let obj = json_object(response).ok_or_else(|| bad("holds no JSON object"))?;
    let score = match obj.get("score").ok_or_else(|| bad("lacks `score`"))? {
        Value::Number(n) => n
            .as_i64()
            .or_else(|| n.as_f64().filter(|f| libm::trunc(*f) == *f).map(|f| f as i64))
            .ok_or_else(|| bad("has a non-integer score"))?,
        Value::String(s) => s.trim().parse().map_err(|_| bad("has a non-integer score"))?,
        _ => return Err(bad("has a non-integer score")),
    };
    let reason = match obj.get("reason").ok_or_else(|| bad("lacks `reason`"))? {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    };
    if !(0..=10).contains(&score) {
        return Err(Error::OutOfRange { what: "annotation score", value: score as f64 });
    }
    Ok(AnnotatedPair { query: query.to_string(), doc: doc.to_string(), score, reason })
}

/// Requests an annotation, re-asking once on an unparsable reply. `None`
/// means the pair is dropped.
pub fn annotate_pair<L: Completion + ?Sized>(query: &str, doc: &str, llm: &L) -> Result<Option<AnnotatedPair>> {
    let prompt = build_curation_prompt(CurationPrompt::Annotate { query, doc })?;
    for _ in 0..2 {
        let reply = llm.complete(&CompletionRequest::new(prompt.clone()))?;
        if let Ok(pair) = parse_annotation(query, doc, &reply) {
            return Ok(Some(pair));
        }
    }
    Ok(None)
}

/// Extracts the `Document i:{"title", "content"}` objects of a
/// positive-generation reply as `title\ncontent` texts, at most three.
pub fn parse_generated_documents(response: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = response;
    while let Some(start) = rest.find('{') {
        let mut stream = serde_json::Deserializer::from_str(&rest[start..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(Value::Object(m))) => {
                let consumed = stream.byte_offset();
                let field = |k: &str| m.get(k).and_then(Value::as_str).unwrap_or("").trim().to_string();
                let (title, content) = (field("title"), field("content"));
                if !content.is_empty() {
                    out.push(if title.is_empty() { content } else { format!("{title}\n{content}") });
                }
                rest = &rest[start + consumed..];
            }
            _ => rest = &rest[start + 1..],
        }
        if out.len() == MAX_GENERATED_POSITIVES {
            break;
        }
    }
    out
}

/// Extracts the hard negative from a generation reply; `None` when absent or
/// shorter than [`HARD_NEGATIVE_MIN_CHARS`].
pub fn parse_hard_negative(response: &str) -> Option<String> {
    let obj = json_object(response)?;
    let text =
        obj.iter().find(|(k, _)| k.to_lowercase().contains("hard negative")).and_then(|(_, v)| v.as_str())?.trim();
    (text.chars().count() >= HARD_NEGATIVE_MIN_CHARS).then(|| text.to_string())
}
