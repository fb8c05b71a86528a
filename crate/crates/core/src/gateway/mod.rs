//! Access to the three model capabilities the pipeline needs: chat
//! completion, text embedding and pairwise relevance scoring.
//!
//! Each capability is a trait so HTTP and in-process mock backends are
//! interchangeable. Callers go through [`chat`], [`embed_batch`] and
//! [`rerank_score`], which enforce preconditions and the unit-norm
//! invariant on embeddings regardless of backend.

mod http;
mod mock;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use http::{ChatReranker, HttpChat, HttpEmbedder, HttpReranker};
pub use mock::{LexicalReranker, MockChat, MockEmbedder, MockEmbedderMode};

pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 1024;
pub const DEFAULT_QUERY_PREFIX: &str = "query: ";
pub const DEFAULT_PASSAGE_PREFIX: &str = "passage: ";

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("transient failure after {attempts} attempt(s): {message}")]
    Transient { attempts: u32, message: String },
    #[error("backend error (status {status:?}) after {attempts} attempt(s): {body}")]
    Backend {
        status: Option<u16>,
        attempts: u32,
        body: String,
    },
    #[error("malformed backend response: {0}")]
    Protocol(String),
    #[error("embedding dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("unscripted prompt (fingerprint {fingerprint})")]
    Unscripted { fingerprint: String },
    #[error("invalid backend configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_prompt: String,
    pub user_prompt: String,
    pub temperature: f32,
    pub max_output_tokens: u32,
}

impl ChatRequest {
    pub fn new(system_prompt: impl Into<String>, user_prompt: impl Into<String>) -> Self {
        Self {
            system_prompt: system_prompt.into(),
            user_prompt: user_prompt.into(),
            temperature: 0.0,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
        }
    }

    /// Hex SHA-256 over both prompts; the key mock chat tables are scripted by.
    pub fn fingerprint(&self) -> String {
        prompt_fingerprint(&self.system_prompt, &self.user_prompt)
    }
}

pub fn prompt_fingerprint(system_prompt: &str, user_prompt: &str) -> String {
    let mut h = Sha256::new();
    h.update(system_prompt.as_bytes());
    h.update([0u8]);
    h.update(user_prompt.as_bytes());
    hex::encode(h.finalize())
}

/// A unit-length embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    /// L2-normalize `values`. Fails on empty, non-finite or all-zero input.
    pub fn normalized(values: Vec<f32>) -> Result<Self, GatewayError> {
        if values.is_empty() {
            return Err(GatewayError::Protocol("empty embedding".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(GatewayError::Protocol("non-finite embedding value".into()));
        }
        let norm = values
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt();
        if norm == 0.0 {
            return Err(GatewayError::Protocol("zero-norm embedding".into()));
        }
        Ok(Self(
            values
                .into_iter()
                .map(|v| (f64::from(v) / norm) as f32)
                .collect(),
        ))
    }

    /// Wrap values that are already normalized (e.g. read back from disk).
    pub fn from_normalized(values: Vec<f32>) -> Self {
        Self(values)
    }

    pub fn dims(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt()
    }

    /// Dot product accumulated in f64; equals cosine for unit vectors.
    pub fn dot(&self, other: &EmbeddingVector) -> f64 {
        dot(&self.0, &other.0)
    }
}

pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedKind {
    Query,
    Passage,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedPrefixes {
    pub query: String,
    pub passage: String,
}

impl Default for EmbedPrefixes {
    fn default() -> Self {
        Self {
            query: DEFAULT_QUERY_PREFIX.to_string(),
            passage: DEFAULT_PASSAGE_PREFIX.to_string(),
        }
    }
}

impl EmbedPrefixes {
    pub fn for_kind(&self, kind: EmbedKind) -> &str {
        match kind {
            EmbedKind::Query => &self.query,
            EmbedKind::Passage => &self.passage,
        }
    }
}

pub trait ChatBackend: Send + Sync {
    fn model_name(&self) -> &str;

    /// Send one request and return the raw model output.
    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError>;
}

impl<T: ChatBackend + ?Sized> ChatBackend for std::sync::Arc<T> {
    fn model_name(&self) -> &str {
        (**self).model_name()
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        (**self).complete(request)
    }
}

pub trait EmbeddingBackend: Send + Sync {
    fn model_name(&self) -> &str;

    fn prefixes(&self) -> &EmbedPrefixes;

    /// Embed already-prefixed texts. Vectors need not be normalized.
    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError>;
}

pub trait Reranker: Send + Sync {
    fn model_name(&self) -> &str;

    /// Relevance of each passage to `query`, in passage order. Higher is
    /// more relevant; scores are only meaningful as an ordering.
    fn score_passages(&self, query: &str, passages: &[&str]) -> Result<Vec<f64>, GatewayError>;
}

/// Run a chat completion. Output is returned verbatim.
pub fn chat(backend: &dyn ChatBackend, request: &ChatRequest) -> Result<String, GatewayError> {
    if request.system_prompt.is_empty() || request.user_prompt.is_empty() {
        return Err(GatewayError::Precondition(
            "chat prompts must be non-empty".into(),
        ));
    }
    if request.temperature.is_nan() || request.temperature < 0.0 {
        return Err(GatewayError::Precondition(
            "temperature must be >= 0".into(),
        ));
    }
    backend.complete(request)
}

/// Embed `texts` with the backend's prefix for `kind` prepended, returning
/// one unit vector per text in input order.
pub fn embed_batch(
    backend: &dyn EmbeddingBackend,
    texts: &[&str],
    kind: EmbedKind,
) -> Result<Vec<EmbeddingVector>, GatewayError> {
    if texts.is_empty() {
        return Err(GatewayError::Precondition(
            "embedding batch is empty".into(),
        ));
    }
    if let Some(i) = texts.iter().position(|t| t.is_empty()) {
        return Err(GatewayError::Precondition(format!(
            "embedding input {i} is empty"
        )));
    }
    let prefix = backend.prefixes().for_kind(kind);
    let prefixed: Vec<String> = texts.iter().map(|t| format!("{prefix}{t}")).collect();
    let raw = backend.embed_raw(&prefixed)?;
    if raw.len() != texts.len() {
        return Err(GatewayError::Protocol(format!(
            "expected {} embeddings, got {}",
            texts.len(),
            raw.len()
        )));
    }
    let dims = raw[0].len();
    raw.into_iter()
        .map(|v| {
            if v.len() != dims {
                return Err(GatewayError::DimensionMismatch {
                    expected: dims,
                    found: v.len(),
                });
            }
            EmbeddingVector::normalized(v)
        })
        .collect()
}

pub fn rerank_score(
    backend: &dyn Reranker,
    query: &str,
    passage: &str,
) -> Result<f64, GatewayError> {
    let scores = rerank_scores(backend, query, &[passage])?;
    Ok(scores[0])
}

/// Score several passages against one query.
pub fn rerank_scores(
    backend: &dyn Reranker,
    query: &str,
    passages: &[&str],
) -> Result<Vec<f64>, GatewayError> {
    if query.is_empty() || passages.iter().any(|p| p.is_empty()) {
        return Err(GatewayError::Precondition(
            "rerank query and passages must be non-empty".into(),
        ));
    }
    if passages.is_empty() {
        return Ok(Vec::new());
    }
    let scores = backend.score_passages(query, passages)?;
    if scores.len() != passages.len() {
        return Err(GatewayError::Protocol(format!(
            "expected {} rerank scores, got {}",
            passages.len(),
            scores.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(GatewayError::Protocol("non-finite rerank score".into()));
    }
    Ok(scores)
}

/// Connection settings for an OpenAI-compatible service.
#[derive(Clone)]
pub struct BackendConfig {
    pub base_url: String,
    pub model_name: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub max_retries: u32,
    /// First retry delay; doubles on each further attempt.
    pub backoff_base: Duration,
    pub embed_prefix_query: String,
    pub embed_prefix_passage: String,
}

impl std::fmt::Debug for BackendConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BackendConfig")
            .field("base_url", &self.base_url)
            .field("model_name", &self.model_name)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .field("timeout", &self.timeout)
            .field("max_retries", &self.max_retries)
            .field("backoff_base", &self.backoff_base)
            .finish()
    }
}

impl BackendConfig {
    pub fn new(base_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            model_name: model_name.into(),
            api_key: None,
            timeout: Duration::from_secs(120),
            max_retries: 3,
            backoff_base: Duration::from_millis(500),
            embed_prefix_query: DEFAULT_QUERY_PREFIX.to_string(),
            embed_prefix_passage: DEFAULT_PASSAGE_PREFIX.to_string(),
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.timeout.is_zero() {
            return Err(GatewayError::Config("timeout must be > 0".into()));
        }
        if self.base_url.is_empty() {
            return Err(GatewayError::Config("base_url is empty".into()));
        }
        Ok(())
    }

    pub fn prefixes(&self) -> EmbedPrefixes {
        EmbedPrefixes {
            query: self.embed_prefix_query.clone(),
            passage: self.embed_prefix_passage.clone(),
        }
    }
}
