//! OpenAI-compatible HTTP backends.
//!
//! All three share [`HttpClient`], which retries transport failures and
//! 5xx responses with exponential backoff, at most `max_retries + 1`
//! attempts in total. 4xx responses fail immediately.

use std::thread;
use std::time::Duration;

use log::{debug, warn};
use rayon::prelude::*;
use reqwest::blocking::Client;
use serde_json::{json, Value};

use super::{
    BackendConfig, ChatBackend, ChatRequest, EmbedPrefixes, EmbeddingBackend, GatewayError,
    Reranker,
};
use crate::prompts::RERANK_CHAT;

const BODY_EXCERPT: usize = 512;
const MAX_BACKOFF: Duration = Duration::from_secs(30);

#[derive(Debug, Clone)]
struct HttpClient {
    cfg: BackendConfig,
    client: Client,
}

impl HttpClient {
    fn new(cfg: BackendConfig) -> Result<Self, GatewayError> {
        cfg.validate()?;
        let client = Client::builder()
            .timeout(cfg.timeout)
            .build()
            .map_err(|e| GatewayError::Config(format!("failed to build http client: {e}")))?;
        Ok(Self { cfg, client })
    }

    fn backoff(&self, attempt: u32) -> Duration {
        self.cfg
            .backoff_base
            .saturating_mul(1u32 << attempt.min(16))
            .min(MAX_BACKOFF)
    }

    fn post_json(&self, path: &str, body: &Value) -> Result<Value, GatewayError> {
        let url = format!("{}/{}", self.cfg.base_url, path);
        let max_attempts = self.cfg.max_retries + 1;
        let mut attempt = 0;
        loop {
            attempt += 1;
            let mut req = self.client.post(&url).json(body);
            if let Some(key) = &self.cfg.api_key {
                req = req.bearer_auth(key);
            }
            let last_error = match req.send() {
                Ok(resp) => {
                    let status = resp.status();
                    let text = resp.text().unwrap_or_default();
                    if status.is_success() {
                        return serde_json::from_str(&text).map_err(|e| {
                            GatewayError::Protocol(format!(
                                "invalid JSON from {url}: {e}: {}",
                                excerpt(&text)
                            ))
                        });
                    }
                    let err = GatewayError::Backend {
                        status: Some(status.as_u16()),
                        attempts: attempt,
                        body: excerpt(&text),
                    };
                    if status.is_client_error() {
                        return Err(err);
                    }
                    err
                }
                Err(e) => GatewayError::Transient {
                    attempts: attempt,
                    message: e.to_string(),
                },
            };
            if attempt >= max_attempts {
                return Err(last_error);
            }
            let wait = self.backoff(attempt - 1);
            warn!("{url}: attempt {attempt}/{max_attempts} failed ({last_error}); retrying in {wait:?}");
            thread::sleep(wait);
        }
    }
}

fn excerpt(body: &str) -> String {
    if body.len() <= BODY_EXCERPT {
        return body.to_string();
    }
    let mut end = BODY_EXCERPT;
    while !body.is_char_boundary(end) {
        end -= 1;
    }
    format!("{}…", &body[..end])
}

/// `POST {base_url}/chat/completions`.
#[derive(Debug, Clone)]
pub struct HttpChat {
    http: HttpClient,
}

impl HttpChat {
    pub fn new(cfg: BackendConfig) -> Result<Self, GatewayError> {
        Ok(Self {
            http: HttpClient::new(cfg)?,
        })
    }
}

impl ChatBackend for HttpChat {
    fn model_name(&self) -> &str {
        &self.http.cfg.model_name
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let body = json!({
            "model": self.http.cfg.model_name,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": request.user_prompt},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        });
        let resp = self.http.post_json("chat/completions", &body)?;
        resp.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| {
                GatewayError::Protocol("response has no choices[0].message.content".into())
            })
    }
}

/// `POST {base_url}/embeddings`, split into batches of `batch_size`.
#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    http: HttpClient,
    prefixes: EmbedPrefixes,
    batch_size: usize,
}

impl HttpEmbedder {
    pub fn new(cfg: BackendConfig) -> Result<Self, GatewayError> {
        let prefixes = cfg.prefixes();
        Ok(Self {
            http: HttpClient::new(cfg)?,
            prefixes,
            batch_size: 64,
        })
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size.max(1);
        self
    }

    fn embed_one_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError> {
        let body = json!({"model": self.http.cfg.model_name, "input": texts});
        let resp = self.http.post_json("embeddings", &body)?;
        let data = resp
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| GatewayError::Protocol("embedding response has no data[]".into()))?;
        let mut rows: Vec<(usize, Vec<f32>)> = Vec::with_capacity(data.len());
        for (pos, item) in data.iter().enumerate() {
            let index = item
                .get("index")
                .and_then(Value::as_u64)
                .map(|i| i as usize)
                .unwrap_or(pos);
            let values = item
                .get("embedding")
                .and_then(Value::as_array)
                .ok_or_else(|| GatewayError::Protocol(format!("data[{pos}] has no embedding")))?
                .iter()
                .map(|v| {
                    v.as_f64()
                        .map(|f| f as f32)
                        .ok_or_else(|| GatewayError::Protocol("non-numeric embedding value".into()))
                })
                .collect::<Result<Vec<f32>, _>>()?;
            rows.push((index, values));
        }
        rows.sort_by_key(|(i, _)| *i);
        Ok(rows.into_iter().map(|(_, v)| v).collect())
    }
}

impl EmbeddingBackend for HttpEmbedder {
    fn model_name(&self) -> &str {
        &self.http.cfg.model_name
    }

    fn prefixes(&self) -> &EmbedPrefixes {
        &self.prefixes
    }

    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError> {
        let mut out = Vec::with_capacity(texts.len());
        for batch in texts.chunks(self.batch_size) {
            debug!("embedding batch of {}", batch.len());
            out.extend(self.embed_one_batch(batch)?);
        }
        Ok(out)
    }
}

/// `POST {base_url}/rerank` with `{model, query, documents}`.
///
/// Accepts `{"results": [{"index", "relevance_score"|"score"}]}`, a bare
/// array of such objects, or `{"scores": [..]}`.
#[derive(Debug, Clone)]
pub struct HttpReranker {
    http: HttpClient,
}

impl HttpReranker {
    pub fn new(cfg: BackendConfig) -> Result<Self, GatewayError> {
        Ok(Self {
            http: HttpClient::new(cfg)?,
        })
    }
}

fn parse_rerank_response(resp: &Value, n: usize) -> Result<Vec<f64>, GatewayError> {
    if let Some(scores) = resp.get("scores").and_then(Value::as_array) {
        return scores
            .iter()
            .map(|s| {
                s.as_f64()
                    .ok_or_else(|| GatewayError::Protocol("non-numeric rerank score".into()))
            })
            .collect();
    }
    let items = resp
        .get("results")
        .and_then(Value::as_array)
        .or_else(|| resp.as_array())
        .ok_or_else(|| GatewayError::Protocol("unrecognized rerank response".into()))?;
    let mut scores = vec![None; n];
    for item in items {
        let index = item
            .get("index")
            .and_then(Value::as_u64)
            .ok_or_else(|| GatewayError::Protocol("rerank result without index".into()))?
            as usize;
        let score = item
            .get("relevance_score")
            .or_else(|| item.get("score"))
            .and_then(Value::as_f64)
            .ok_or_else(|| GatewayError::Protocol("rerank result without score".into()))?;
        let slot = scores
            .get_mut(index)
            .ok_or_else(|| GatewayError::Protocol(format!("rerank index {index} out of range")))?;
        *slot = Some(score);
    }
    scores
        .into_iter()
        .enumerate()
        .map(|(i, s)| s.ok_or_else(|| GatewayError::Protocol(format!("no rerank score for {i}"))))
        .collect()
}

impl Reranker for HttpReranker {
    fn model_name(&self) -> &str {
        &self.http.cfg.model_name
    }

    fn score_passages(&self, query: &str, passages: &[&str]) -> Result<Vec<f64>, GatewayError> {
        let body = json!({
            "model": self.http.cfg.model_name,
            "query": query,
            "documents": passages,
        });
        let resp = self.http.post_json("rerank", &body)?;
        parse_rerank_response(&resp, passages.len())
    }
}

/// Relevance scoring through a chat model, one call per pair.
pub struct ChatReranker<C> {
    chat: C,
    parallelism: usize,
    name: String,
}

impl<C: ChatBackend> ChatReranker<C> {
    pub fn new(chat: C, parallelism: usize) -> Self {
        let name = format!("chat-rerank:{}", chat.model_name());
        Self {
            chat,
            parallelism: parallelism.max(1),
            name,
        }
    }

    fn score_one(&self, query: &str, passage: &str) -> Result<f64, GatewayError> {
        let req = ChatRequest {
            max_output_tokens: 8,
            ..ChatRequest::new(
                RERANK_CHAT.text,
                format!("# Question\n{query}\n\n# Passage\n{passage}"),
            )
        };
        let raw = super::chat(&self.chat, &req)?;
        parse_leading_number(&raw)
            .ok_or_else(|| GatewayError::Protocol(format!("no score in reply {raw:?}")))
    }
}

fn parse_leading_number(raw: &str) -> Option<f64> {
    let start = raw.find(|c: char| c.is_ascii_digit())?;
    let rest = &raw[start..];
    let end = rest
        .find(|c: char| !(c.is_ascii_digit() || c == '.'))
        .unwrap_or(rest.len());
    rest[..end].trim_end_matches('.').parse().ok()
}

impl<C: ChatBackend> Reranker for ChatReranker<C> {
    fn model_name(&self) -> &str {
        &self.name
    }

    fn score_passages(&self, query: &str, passages: &[&str]) -> Result<Vec<f64>, GatewayError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.parallelism)
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        pool.install(|| {
            passages
                .par_iter()
                .map(|p| self.score_one(query, p))
                .collect()
        })
    }
}
