//! Online inference.
//!
//! 1. Decompose the question into single-hop subquestions (or use the
//!    question as-is).
//! 2. For each subquestion, retrieve the `k1` most similar index entries.
//! 3. Pool the hits by chunk, keeping each chunk's best similarity.
//! 4. Rerank every pooled chunk against the original question, keep `k2`.
//! 5. Generate the answer from the top chunks.
//!
//! Sequential inference instead answers the subquestions one at a time,
//! each with its own retrieval and rerank, and then answers the original
//! question from the accumulated intermediate answers.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{
    self, ChatBackend, ChatRequest, EmbedKind, EmbeddingBackend, GatewayError, Reranker,
};
use crate::index::{self, IndexError, VectorIndex};
use crate::prompts::{ANSWER_FINAL, ANSWER_STEP, ANSWER_UNIFIED};
use crate::transform::{self, SubQuestion, TransformError, DEFAULT_MAX_SUBQUESTIONS};

pub const DEFAULT_K1: usize = 100;
pub const DEFAULT_K2: usize = 7;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid pipeline config: {0}")]
    Config(String),
    #[error("decompose: {0}")]
    Decompose(#[source] TransformError),
    #[error("retrieve (subquestion {subquestion}): embedding failed: {source}")]
    Embed {
        subquestion: usize,
        #[source]
        source: GatewayError,
    },
    #[error("retrieve (subquestion {subquestion}): search failed: {source}")]
    Search {
        subquestion: usize,
        #[source]
        source: IndexError,
    },
    #[error("retrieve: no candidate chunks (index has {entries} entries)")]
    NoCandidates { entries: usize },
    #[error("rerank: {0}")]
    Rerank(#[source] GatewayError),
    #[error("rerank: candidate chunk {0} is not in the index")]
    MissingChunk(String),
    #[error("generate: {0}")]
    Generate(#[source] GatewayError),
    #[error("sequential step {index}: {source}")]
    Step {
        index: usize,
        #[source]
        source: Box<PipelineError>,
    },
}

impl PipelineError {
    /// Name of the stage that failed.
    pub fn stage(&self) -> &'static str {
        match self {
            PipelineError::Config(_) => "config",
            PipelineError::Decompose(_) => "decompose",
            PipelineError::Embed { .. }
            | PipelineError::Search { .. }
            | PipelineError::NoCandidates { .. } => "retrieve",
            PipelineError::Rerank(_) | PipelineError::MissingChunk(_) => "rerank",
            PipelineError::Generate(_) => "generate",
            PipelineError::Step { source, .. } => source.stage(),
        }
    }
}

/// Model handles used by indexing and inference. Decomposer, generator
/// and indexer can be different models.
#[derive(Clone)]
pub struct Backends {
    pub indexer: Arc<dyn ChatBackend>,
    pub decomposer: Arc<dyn ChatBackend>,
    pub generator: Arc<dyn ChatBackend>,
    pub embedder: Arc<dyn EmbeddingBackend>,
    pub reranker: Arc<dyn Reranker>,
}

impl Backends {
    /// One chat backend for every chat role.
    pub fn uniform(
        chat: Arc<dyn ChatBackend>,
        embedder: Arc<dyn EmbeddingBackend>,
        reranker: Arc<dyn Reranker>,
    ) -> Self {
        Self {
            indexer: chat.clone(),
            decomposer: chat.clone(),
            generator: chat,
            embedder,
            reranker,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InferenceMode {
    Unified,
    Sequential,
}

impl FromStr for InferenceMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "unified" => Ok(InferenceMode::Unified),
            "sequential" => Ok(InferenceMode::Sequential),
            other => Err(format!(
                "unknown inference mode {other:?} (expected unified|sequential)"
            )),
        }
    }
}

impl std::fmt::Display for InferenceMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            InferenceMode::Unified => "unified",
            InferenceMode::Sequential => "sequential",
        })
    }
}

/// Order of chunks inside the generation context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContextOrder {
    /// Strongest rerank score first.
    #[default]
    Rerank,
    /// Source document order (doc id, then offset).
    Document,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub k1: usize,
    pub k2: usize,
    pub inference: InferenceMode,
    pub decompose: bool,
    pub max_subquestions: usize,
    #[serde(default)]
    pub context_order: ContextOrder,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            k1: DEFAULT_K1,
            k2: DEFAULT_K2,
            inference: InferenceMode::Unified,
            decompose: true,
            max_subquestions: DEFAULT_MAX_SUBQUESTIONS,
            context_order: ContextOrder::Rerank,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.k1 == 0 {
            return Err(PipelineError::Config("k1 must be >= 1".into()));
        }
        if self.k2 == 0 {
            return Err(PipelineError::Config("k2 must be >= 1".into()));
        }
        if self.max_subquestions == 0 {
            return Err(PipelineError::Config(
                "max_subquestions must be >= 1".into(),
            ));
        }
        if self.inference == InferenceMode::Sequential && !self.decompose {
            return Err(PipelineError::Config(
                "sequential inference requires decomposition".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSource {
    pub entry_id: String,
    /// 1-based subquestion index.
    pub subquestion: usize,
    pub score: f64,
}

/// A pooled chunk with the best similarity of any entry that retrieved it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub chunk_id: String,
    pub best_score: f64,
    pub sources: Vec<CandidateSource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedChunk {
    pub chunk_id: String,
    pub rerank_score: f64,
    /// 1-based.
    pub rank: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub decompose_ms: f64,
    pub retrieve_ms: f64,
    pub rerank_ms: f64,
    pub generate_ms: f64,
}

/// Per-query record of what each stage did.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub question: String,
    pub inference: Option<InferenceMode>,
    pub subquestions: Vec<String>,
    pub decomposition_fallback: bool,
    /// (entry, subquestion) pairs returned by the searches.
    pub retrieved_pairs: usize,
    pub candidate_ids: Vec<String>,
    pub ranked_ids: Vec<String>,
    pub decompose_calls: usize,
    pub embed_calls: usize,
    pub rerank_pairs: usize,
    pub generation_calls: usize,
    pub answer: String,
    pub timings: StageTimings,
}

impl Trace {
    /// The trace as one JSON line.
    pub fn to_record(&self) -> String {
        serde_json::to_string(self).expect("trace serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub text: String,
    pub used_chunks: Vec<String>,
    pub subquestions: Vec<SubQuestion>,
    pub trace: Trace,
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Result of the retrieval stage.
#[derive(Debug, Clone, PartialEq)]
pub struct Retrieval {
    pub candidates: Vec<Candidate>,
    pub retrieved_pairs: usize,
    pub embed_calls: usize,
}

/// Retrieve `k1` entries per subquestion and pool them by chunk.
///
/// Each candidate keeps every (entry, subquestion, score) that pointed at
/// it and its maximum score. Candidates are ordered by best score
/// descending, then chunk id ascending.
pub fn retrieve_candidates(
    subquestions: &[SubQuestion],
    index: &VectorIndex,
    embedder: &dyn EmbeddingBackend,
    k1: usize,
) -> Result<Retrieval, PipelineError> {
    if subquestions.is_empty() {
        return Err(PipelineError::Config(
            "no subquestions to retrieve for".into(),
        ));
    }
    let mut pool: HashMap<String, Candidate> = HashMap::new();
    let mut retrieved_pairs = 0;
    for sq in subquestions {
        let query = gateway::embed_batch(embedder, &[sq.text.as_str()], EmbedKind::Query)
            .map_err(|source| PipelineError::Embed {
                subquestion: sq.index,
                source,
            })?
            .pop()
            .expect("one vector per text");
        let hits = index::search(index, &query, k1).map_err(|source| PipelineError::Search {
            subquestion: sq.index,
            source,
        })?;
        retrieved_pairs += hits.len();
        for hit in hits {
            let cand = pool
                .entry(hit.chunk_id.clone())
                .or_insert_with(|| Candidate {
                    chunk_id: hit.chunk_id.clone(),
                    best_score: f64::NEG_INFINITY,
                    sources: Vec::new(),
                });
            cand.best_score = cand.best_score.max(hit.score);
            cand.sources.push(CandidateSource {
                entry_id: hit.entry_id,
                subquestion: sq.index,
                score: hit.score,
            });
        }
    }
    let mut candidates: Vec<Candidate> = pool.into_values().collect();
    candidates.sort_by(|a, b| {
        b.best_score
            .total_cmp(&a.best_score)
            .then_with(|| a.chunk_id.cmp(&b.chunk_id))
    });
    Ok(Retrieval {
        candidates,
        retrieved_pairs,
        embed_calls: subquestions.len(),
    })
}

/// Score every candidate chunk against `query` and keep the top `k2`,
/// score descending, ties by chunk id ascending.
pub fn rerank(
    query: &str,
    candidates: &[Candidate],
    index: &VectorIndex,
    reranker: &dyn Reranker,
    k2: usize,
) -> Result<Vec<RankedChunk>, PipelineError> {
    if candidates.is_empty() {
        return Err(PipelineError::NoCandidates {
            entries: index.len(),
        });
    }
    let passages = candidates
        .iter()
        .map(|c| {
            index
                .chunk(&c.chunk_id)
                .map(|ch| ch.text.as_str())
                .ok_or_else(|| PipelineError::MissingChunk(c.chunk_id.clone()))
        })
        .collect::<Result<Vec<&str>, _>>()?;
    let scores =
        gateway::rerank_scores(reranker, query, &passages).map_err(PipelineError::Rerank)?;
    let mut scored: Vec<(&str, f64)> = candidates
        .iter()
        .map(|c| c.chunk_id.as_str())
        .zip(scores)
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Ok(scored
        .into_iter()
        .take(k2)
        .enumerate()
        .map(|(i, (id, score))| RankedChunk {
            chunk_id: id.to_string(),
            rerank_score: score,
            rank: i + 1,
        })
        .collect())
}

/// Chunk ids in the order they appear in the generation context.
pub fn context_order(
    ranked: &[RankedChunk],
    index: &VectorIndex,
    order: ContextOrder,
) -> Vec<String> {
    let mut ids: Vec<&RankedChunk> = ranked.iter().collect();
    if order == ContextOrder::Document {
        ids.sort_by(|a, b| {
            let ka = index
                .chunk(&a.chunk_id)
                .map(|c| (c.doc_id.as_str(), c.start));
            let kb = index
                .chunk(&b.chunk_id)
                .map(|c| (c.doc_id.as_str(), c.start));
            ka.cmp(&kb)
        });
    }
    ids.into_iter().map(|r| r.chunk_id.clone()).collect()
}

/// Concatenate chunk texts, each under a `[chunk <id>]` line.
pub fn build_context(chunk_ids: &[String], index: &VectorIndex) -> String {
    let mut out = String::new();
    for id in chunk_ids {
        if !out.is_empty() {
            out.push('\n');
        }
        let text = index.chunk(id).map_or("", |c| c.text.as_str());
        let _ = writeln!(out, "[chunk {id}]\n{text}");
    }
    out
}

pub fn unified_prompt(question: &str, context: &str) -> ChatRequest {
    ChatRequest::new(
        ANSWER_UNIFIED.text,
        format!("# Context\n{context}\n# Question\n{question}"),
    )
}

fn qa_history(pairs: &[(String, String)]) -> String {
    let mut out = String::new();
    for (i, (q, a)) in pairs.iter().enumerate() {
        let _ = writeln!(out, "Q{}: {q}\nA{}: {a}", i + 1, i + 1);
    }
    out
}

pub fn step_prompt(subquestion: &str, previous: &[(String, String)], context: &str) -> ChatRequest {
    ChatRequest::new(
        ANSWER_STEP.text,
        format!(
            "# Answered subquestions\n{}\n# Context\n{context}\n# Current subquestion\n{subquestion}",
            qa_history(previous)
        ),
    )
}

pub fn final_prompt(question: &str, pairs: &[(String, String)], context: &str) -> ChatRequest {
    ChatRequest::new(
        ANSWER_FINAL.text,
        format!(
            "# Answered subquestions\n{}\n# Context\n{context}\n# Original question\n{question}",
            qa_history(pairs)
        ),
    )
}

/// One generation call over the ranked chunks.
pub fn answer_unified(
    question: &str,
    ranked: &[RankedChunk],
    index: &VectorIndex,
    generator: &dyn ChatBackend,
    order: ContextOrder,
) -> Result<Answer, PipelineError> {
    if ranked.is_empty() {
        return Err(PipelineError::NoCandidates {
            entries: index.len(),
        });
    }
    let started = Instant::now();
    let used_chunks = context_order(ranked, index, order);
    let context = build_context(&used_chunks, index);
    let raw = gateway::chat(generator, &unified_prompt(question, &context))
        .map_err(PipelineError::Generate)?;
    let text = raw.trim().to_string();
    Ok(Answer {
        trace: Trace {
            question: question.to_string(),
            inference: Some(InferenceMode::Unified),
            ranked_ids: ranked.iter().map(|r| r.chunk_id.clone()).collect(),
            generation_calls: 1,
            answer: text.clone(),
            timings: StageTimings {
                generate_ms: ms_since(started),
                ..Default::default()
            },
            ..Default::default()
        },
        text,
        used_chunks,
        subquestions: Vec::new(),
    })
}

/// Answer subquestions in order, each from its own retrieval and rerank,
/// then answer the original question from the intermediate answers and the
/// last step's context.
pub fn answer_sequential(
    question: &str,
    subquestions: &[SubQuestion],
    index: &VectorIndex,
    backends: &Backends,
    cfg: &PipelineConfig,
) -> Result<Answer, PipelineError> {
    cfg.validate()?;
    if subquestions.is_empty() {
        return Err(PipelineError::Config(
            "sequential inference needs subquestions".into(),
        ));
    }
    let mut trace = Trace {
        question: question.to_string(),
        inference: Some(InferenceMode::Sequential),
        subquestions: subquestions.iter().map(|s| s.text.clone()).collect(),
        ..Default::default()
    };
    let mut pairs: Vec<(String, String)> = Vec::with_capacity(subquestions.len());
    let mut last_context_ids = Vec::new();
    let mut last_ranked = Vec::new();
    for sq in subquestions {
        let step = |e: PipelineError| PipelineError::Step {
            index: sq.index,
            source: Box::new(e),
        };
        let t = Instant::now();
        let retrieval = retrieve_candidates(
            std::slice::from_ref(sq),
            index,
            backends.embedder.as_ref(),
            cfg.k1,
        )
        .map_err(step)?;
        trace.timings.retrieve_ms += ms_since(t);
        trace.retrieved_pairs += retrieval.retrieved_pairs;
        trace.embed_calls += retrieval.embed_calls;
        trace
            .candidate_ids
            .extend(retrieval.candidates.iter().map(|c| c.chunk_id.clone()));

        let t = Instant::now();
        let ranked = rerank(
            &sq.text,
            &retrieval.candidates,
            index,
            backends.reranker.as_ref(),
            cfg.k2,
        )
        .map_err(step)?;
        trace.timings.rerank_ms += ms_since(t);
        trace.rerank_pairs += retrieval.candidates.len();

        let t = Instant::now();
        let ids = context_order(&ranked, index, cfg.context_order);
        let context = build_context(&ids, index);
        let raw = gateway::chat(
            backends.generator.as_ref(),
            &step_prompt(&sq.text, &pairs, &context),
        )
        .map_err(|e| step(PipelineError::Generate(e)))?;
        trace.timings.generate_ms += ms_since(t);
        trace.generation_calls += 1;
        pairs.push((sq.text.clone(), raw.trim().to_string()));
        last_context_ids = ids;
        last_ranked = ranked;
    }
    let t = Instant::now();
    let context = build_context(&last_context_ids, index);
    let raw = gateway::chat(
        backends.generator.as_ref(),
        &final_prompt(question, &pairs, &context),
    )
    .map_err(PipelineError::Generate)?;
    trace.timings.generate_ms += ms_since(t);
    trace.generation_calls += 1;
    let text = raw.trim().to_string();
    trace.ranked_ids = last_ranked.iter().map(|r| r.chunk_id.clone()).collect();
    trace.answer = text.clone();
    Ok(Answer {
        text,
        used_chunks: last_context_ids,
        subquestions: subquestions.to_vec(),
        trace,
    })
}

/// Answer `question` against `index`.
pub fn run_query(
    question: &str,
    index: &VectorIndex,
    backends: &Backends,
    cfg: &PipelineConfig,
) -> Result<Answer, PipelineError> {
    cfg.validate()?;
    if question.trim().is_empty() {
        return Err(PipelineError::Config("question is empty".into()));
    }
    let t = Instant::now();
    let (subquestions, fallback, decompose_calls) = if cfg.decompose {
        let d = transform::decompose_question_capped(
            question,
            backends.decomposer.as_ref(),
            cfg.max_subquestions,
        )
        .map_err(PipelineError::Decompose)?;
        (d.subquestions, d.fallback, 1)
    } else {
        (SubQuestion::from_texts([question]), false, 0)
    };
    let decompose_ms = ms_since(t);

    let mut answer = match cfg.inference {
        InferenceMode::Sequential => {
            answer_sequential(question, &subquestions, index, backends, cfg)?
        }
        InferenceMode::Unified => {
            let t = Instant::now();
            let retrieval =
                retrieve_candidates(&subquestions, index, backends.embedder.as_ref(), cfg.k1)?;
            let retrieve_ms = ms_since(t);
            let t = Instant::now();
            let ranked = rerank(
                question,
                &retrieval.candidates,
                index,
                backends.reranker.as_ref(),
                cfg.k2,
            )?;
            let rerank_ms = ms_since(t);
            let mut answer = answer_unified(
                question,
                &ranked,
                index,
                backends.generator.as_ref(),
                cfg.context_order,
            )?;
            let trace = &mut answer.trace;
            trace.subquestions = subquestions.iter().map(|s| s.text.clone()).collect();
            trace.retrieved_pairs = retrieval.retrieved_pairs;
            trace.embed_calls = retrieval.embed_calls;
            trace.candidate_ids = retrieval
                .candidates
                .iter()
                .map(|c| c.chunk_id.clone())
                .collect();
            trace.rerank_pairs = retrieval.candidates.len();
            trace.timings.retrieve_ms = retrieve_ms;
            trace.timings.rerank_ms = rerank_ms;
            answer.subquestions = subquestions;
            answer
        }
    };
    answer.trace.decomposition_fallback = fallback;
    answer.trace.decompose_calls = decompose_calls;
    answer.trace.timings.decompose_ms = decompose_ms;
    Ok(answer)
}
