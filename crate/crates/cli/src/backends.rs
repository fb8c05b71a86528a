//! Backend selection shared by every subcommand.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use aqrag::gateway::{
    BackendConfig, ChatBackend, ChatReranker, EmbeddingBackend, HttpChat, HttpEmbedder,
    HttpReranker, LexicalReranker, MockChat, MockEmbedder, MockEmbedderMode, Reranker,
};
use aqrag::pipeline::Backends;
use aqrag::{prompts, transform};
use clap::{Args, ValueEnum};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    /// Offline deterministic mocks.
    Mock,
    /// OpenAI-compatible HTTP endpoints.
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RerankerKind {
    /// `/rerank` endpoint (cross-encoder).
    Http,
    /// Score pairs with a chat model.
    Chat,
    /// Token-overlap scorer, no network.
    Lexical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MockEmbedderKind {
    Hash,
    Bow,
}

#[derive(Debug, Clone, Args)]
pub struct BackendArgs {
    /// Backend family.
    #[arg(long, value_enum, default_value_t = BackendKind::Mock)]
    pub backend: BackendKind,
    /// Base URL of the OpenAI-compatible API (http backend).
    #[arg(long, env = "AQRAG_BASE_URL")]
    pub base_url: Option<String>,
    /// API key sent as a bearer token (http backend).
    #[arg(long, env = "AQRAG_API_KEY", hide_env_values = true)]
    pub api_key: Option<String>,
    /// Chat model used for every chat role not set explicitly.
    #[arg(long, default_value = "gpt-4o")]
    pub chat_model: String,
    /// Model generating answerable questions, summaries or paraphrases.
    #[arg(long)]
    pub indexer_model: Option<String>,
    /// Model decomposing questions.
    #[arg(long)]
    pub decomposer_model: Option<String>,
    /// Model writing answers.
    #[arg(long)]
    pub generator_model: Option<String>,
    /// Embedding model (http backend).
    #[arg(long, default_value = "intfloat/multilingual-e5-large")]
    pub embed_model: String,
    /// Cross-encoder model for the `/rerank` endpoint.
    #[arg(long, default_value = "BAAI/bge-reranker-v2-m3")]
    pub rerank_model: String,
    /// Reranker implementation [default: http for --backend http, lexical for mock].
    #[arg(long, value_enum)]
    pub reranker: Option<RerankerKind>,
    /// Request timeout in seconds.
    #[arg(long, default_value_t = 120)]
    pub timeout_secs: u64,
    /// Retries after a transient failure.
    #[arg(long, default_value_t = 3)]
    pub max_retries: u32,
    /// JSON list of mock chat rules: {"contains", "template"?, "reply"} or {"fingerprint", "reply"}.
    /// Unmatched index and decomposition prompts get a deterministic heuristic reply;
    /// unmatched answer prompts fail.
    #[arg(long)]
    pub mock_script: Option<PathBuf>,
    /// Mock embedder: hash (exact-text match) or bow (token overlap).
    #[arg(long, value_enum, default_value_t = MockEmbedderKind::Hash)]
    pub mock_embedder: MockEmbedderKind,
    /// Mock embedding dimensionality.
    #[arg(long, default_value_t = MockEmbedder::DEFAULT_DIMS)]
    pub mock_dims: usize,
    /// Concurrent model calls during indexing, reranking and evaluation.
    #[arg(long, default_value_t = 4)]
    pub parallelism: usize,
}

/// One mock reply rule. `contains` matches a substring of the user prompt,
/// optionally only for requests using the named prompt `template`
/// (e.g. `answer_unified`); `fingerprint` matches one exact request.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScriptRule {
    contains: Option<String>,
    template: Option<String>,
    fingerprint: Option<String>,
    reply: String,
}

struct ContainsRule {
    needle: String,
    system: Option<&'static str>,
    reply: String,
}

fn mock_chat(script: Option<&PathBuf>) -> Result<MockChat, CliError> {
    let Some(path) = script else {
        return Ok(MockChat::new().with_responder(transform::heuristic_reply));
    };
    let bad = |msg: String| CliError::Failure(format!("{}: {msg}", path.display()));
    let text = std::fs::read_to_string(path).map_err(|e| bad(e.to_string()))?;
    let rules: Vec<ScriptRule> = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    let mut fingerprints = Vec::new();
    let mut contains = Vec::new();
    for rule in rules {
        let system = match &rule.template {
            None => None,
            Some(name) => Some(
                prompts::ALL
                    .iter()
                    .find(|t| t.name == name)
                    .map(|t| t.text)
                    .ok_or_else(|| bad(format!("unknown prompt template {name:?}")))?,
            ),
        };
        match (rule.contains, rule.fingerprint) {
            (Some(needle), None) => contains.push(ContainsRule {
                needle,
                system,
                reply: rule.reply,
            }),
            (None, Some(fp)) if system.is_none() => fingerprints.push((fp, rule.reply)),
            _ => {
                return Err(bad(
                    "each rule needs `contains` (optionally with `template`) or `fingerprint`"
                        .into(),
                ))
            }
        }
    }
    let chat = MockChat::new().with_responder(move |req| {
        contains
            .iter()
            .find(|r| {
                r.system.is_none_or(|s| s == req.system_prompt)
                    && req.user_prompt.contains(&r.needle)
            })
            .map(|r| r.reply.clone())
            .or_else(|| transform::heuristic_reply(req))
    });
    for (fp, reply) in fingerprints {
        chat.script(fp, reply);
    }
    Ok(chat)
}

impl BackendArgs {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.parallelism == 0 {
            return Err(CliError::Usage("--parallelism must be >= 1".into()));
        }
        if self.mock_dims == 0 {
            return Err(CliError::Usage("--mock-dims must be >= 1".into()));
        }
        if self.backend == BackendKind::Http && self.base_url.is_none() {
            return Err(CliError::Usage(
                "--base-url (or AQRAG_BASE_URL) is required with --backend http".into(),
            ));
        }
        Ok(())
    }

    fn http_config(&self, model: &str) -> BackendConfig {
        let mut cfg = BackendConfig::new(self.base_url.clone().unwrap_or_default(), model);
        cfg.api_key = self.api_key.clone();
        cfg.timeout = Duration::from_secs(self.timeout_secs);
        cfg.max_retries = self.max_retries;
        cfg
    }

    fn http_chat(&self, model: Option<&String>) -> Result<Arc<dyn ChatBackend>, CliError> {
        let model = model.unwrap_or(&self.chat_model);
        Ok(Arc::new(
            HttpChat::new(self.http_config(model)).map_err(failure)?,
        ))
    }

    pub fn build(&self) -> Result<Backends, CliError> {
        self.validate()?;
        match self.backend {
            BackendKind::Mock => {
                let chat: Arc<dyn ChatBackend> = Arc::new(mock_chat(self.mock_script.as_ref())?);
                let mode = match self.mock_embedder {
                    MockEmbedderKind::Hash => MockEmbedderMode::Hash,
                    MockEmbedderKind::Bow => MockEmbedderMode::BagOfWords,
                };
                let embedder: Arc<dyn EmbeddingBackend> =
                    Arc::new(MockEmbedder::new(self.mock_dims).with_mode(mode));
                let reranker: Arc<dyn Reranker> =
                    match self.reranker.unwrap_or(RerankerKind::Lexical) {
                        RerankerKind::Lexical => Arc::new(LexicalReranker::new()),
                        RerankerKind::Chat => {
                            Arc::new(ChatReranker::new(chat.clone(), self.parallelism))
                        }
                        RerankerKind::Http => {
                            return Err(CliError::Usage(
                                "--reranker http needs --backend http".into(),
                            ))
                        }
                    };
                Ok(Backends::uniform(chat, embedder, reranker))
            }
            BackendKind::Http => {
                let embedder: Arc<dyn EmbeddingBackend> = Arc::new(
                    HttpEmbedder::new(self.http_config(&self.embed_model)).map_err(failure)?,
                );
                let reranker: Arc<dyn Reranker> = match self.reranker.unwrap_or(RerankerKind::Http)
                {
                    RerankerKind::Http => Arc::new(
                        HttpReranker::new(self.http_config(&self.rerank_model)).map_err(failure)?,
                    ),
                    RerankerKind::Chat => {
                        Arc::new(ChatReranker::new(self.http_chat(None)?, self.parallelism))
                    }
                    RerankerKind::Lexical => Arc::new(LexicalReranker::new()),
                };
                Ok(Backends {
                    indexer: self.http_chat(self.indexer_model.as_ref())?,
                    decomposer: self.http_chat(self.decomposer_model.as_ref())?,
                    generator: self.http_chat(self.generator_model.as_ref())?,
                    embedder,
                    reranker,
                })
            }
        }
    }
}

fn failure(e: impl std::fmt::Display) -> CliError {
    CliError::Failure(e.to_string())
}
