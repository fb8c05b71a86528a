//! Deterministic in-process backends for offline runs and tests.

use std::collections::{BTreeSet, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, RwLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{ChatBackend, ChatRequest, EmbedPrefixes, EmbeddingBackend, GatewayError, Reranker};
use crate::text::normalized_tokens;

type Responder = Box<dyn Fn(&ChatRequest) -> Option<String> + Send + Sync>;

/// Scripted chat backend.
///
/// Replies are looked up, in order, by exact prompt fingerprint, then by
/// the first substring rule matching the user prompt, then by an optional
/// responder closure. Anything else is an [`GatewayError::Unscripted`]
/// error; the mock never invents output.
pub struct MockChat {
    name: String,
    by_fingerprint: RwLock<HashMap<String, String>>,
    rules: RwLock<Vec<(String, String)>>,
    responder: Option<Responder>,
    ledger: Mutex<Vec<ChatRequest>>,
}

impl Default for MockChat {
    fn default() -> Self {
        Self::new()
    }
}

impl std::fmt::Debug for MockChat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MockChat")
            .field("name", &self.name)
            .field("calls", &self.calls())
            .finish()
    }
}

impl MockChat {
    pub fn new() -> Self {
        Self {
            name: "mock-chat".to_string(),
            by_fingerprint: RwLock::new(HashMap::new()),
            rules: RwLock::new(Vec::new()),
            responder: None,
            ledger: Mutex::new(Vec::new()),
        }
    }

    pub fn with_responder(
        mut self,
        f: impl Fn(&ChatRequest) -> Option<String> + Send + Sync + 'static,
    ) -> Self {
        self.responder = Some(Box::new(f));
        self
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Reply `reply` to the request with this fingerprint.
    pub fn script(&self, fingerprint: impl Into<String>, reply: impl Into<String>) -> &Self {
        self.by_fingerprint
            .write()
            .expect("mock chat lock")
            .insert(fingerprint.into(), reply.into());
        self
    }

    pub fn script_request(&self, request: &ChatRequest, reply: impl Into<String>) -> &Self {
        self.script(request.fingerprint(), reply)
    }

    /// Reply `reply` to any request whose user prompt contains `needle`.
    /// Rules are tried in insertion order.
    pub fn on_contains(&self, needle: impl Into<String>, reply: impl Into<String>) -> &Self {
        self.rules
            .write()
            .expect("mock chat lock")
            .push((needle.into(), reply.into()));
        self
    }

    pub fn calls(&self) -> usize {
        self.ledger.lock().expect("mock chat lock").len()
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.ledger.lock().expect("mock chat lock").clone()
    }

    /// Number of recorded requests whose system prompt equals `system_prompt`.
    pub fn calls_with_system(&self, system_prompt: &str) -> usize {
        self.ledger
            .lock()
            .expect("mock chat lock")
            .iter()
            .filter(|r| r.system_prompt == system_prompt)
            .count()
    }

    pub fn reset_ledger(&self) {
        self.ledger.lock().expect("mock chat lock").clear();
    }
}

impl ChatBackend for MockChat {
    fn model_name(&self) -> &str {
        &self.name
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        self.ledger
            .lock()
            .expect("mock chat lock")
            .push(request.clone());
        let fingerprint = request.fingerprint();
        if let Some(reply) = self
            .by_fingerprint
            .read()
            .expect("mock chat lock")
            .get(&fingerprint)
        {
            return Ok(reply.clone());
        }
        if let Some((_, reply)) = self
            .rules
            .read()
            .expect("mock chat lock")
            .iter()
            .find(|(needle, _)| request.user_prompt.contains(needle.as_str()))
        {
            return Ok(reply.clone());
        }
        if let Some(reply) = self.responder.as_ref().and_then(|f| f(request)) {
            return Ok(reply);
        }
        Err(GatewayError::Unscripted { fingerprint })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MockEmbedderMode {
    /// The whole input text seeds one pseudo-random vector. Unrelated texts
    /// are near-orthogonal; only identical texts match.
    #[default]
    Hash,
    /// Sum of per-token pseudo-random vectors over normalized tokens, so
    /// texts sharing words land close together.
    BagOfWords,
}

/// Deterministic embedder: a seeded hash of the input expands into
/// `dims` pseudo-random reals.
pub struct MockEmbedder {
    dims: usize,
    mode: MockEmbedderMode,
    prefixes: EmbedPrefixes,
    calls: AtomicUsize,
    texts: AtomicUsize,
}

impl std::fmt::Debug for MockEmbedder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MockEmbedder")
            .field("dims", &self.dims)
            .field("mode", &self.mode)
            .finish()
    }
}

impl MockEmbedder {
    pub const DEFAULT_DIMS: usize = 64;

    pub fn new(dims: usize) -> Self {
        assert!(dims > 0, "mock embedder needs at least one dimension");
        Self {
            dims,
            mode: MockEmbedderMode::Hash,
            prefixes: EmbedPrefixes::default(),
            calls: AtomicUsize::new(0),
            texts: AtomicUsize::new(0),
        }
    }

    pub fn with_mode(mut self, mode: MockEmbedderMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_prefixes(mut self, prefixes: EmbedPrefixes) -> Self {
        self.prefixes = prefixes;
        self
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    /// Number of `embed_raw` calls so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Number of texts embedded so far.
    pub fn texts_embedded(&self) -> usize {
        self.texts.load(Ordering::SeqCst)
    }

    fn seeded(&self, seed_text: &str) -> Vec<f32> {
        let digest = Sha256::digest(seed_text.as_bytes());
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(seed);
        (0..self.dims)
            .map(|_| rng.gen_range(-1.0f32..1.0))
            .collect()
    }

    /// Unnormalized vector for one (already prefixed) text.
    pub fn raw_vector(&self, text: &str) -> Vec<f32> {
        match self.mode {
            MockEmbedderMode::Hash => self.seeded(text),
            MockEmbedderMode::BagOfWords => {
                let tokens = normalized_tokens(text);
                if tokens.is_empty() {
                    return self.seeded(text);
                }
                let mut acc = vec![0f32; self.dims];
                for token in tokens {
                    for (a, v) in acc.iter_mut().zip(self.seeded(&token)) {
                        *a += v;
                    }
                }
                if acc.iter().all(|&v| v == 0.0) {
                    return self.seeded(text);
                }
                acc
            }
        }
    }
}

impl EmbeddingBackend for MockEmbedder {
    fn model_name(&self) -> &str {
        match self.mode {
            MockEmbedderMode::Hash => "mock-hash-embedder",
            MockEmbedderMode::BagOfWords => "mock-bow-embedder",
        }
    }

    fn prefixes(&self) -> &EmbedPrefixes {
        &self.prefixes
    }

    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.texts.fetch_add(texts.len(), Ordering::SeqCst);
        Ok(texts.iter().map(|t| self.raw_vector(t)).collect())
    }
}

/// Token-overlap reranker: `|q ∩ p| / |q|` over normalized token sets.
#[derive(Debug, Default)]
pub struct LexicalReranker {
    calls: AtomicUsize,
}

impl LexicalReranker {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of (query, passage) pairs scored so far.
    pub fn pairs_scored(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn overlap(query: &str, passage: &str) -> f64 {
        let q: BTreeSet<String> = normalized_tokens(query).into_iter().collect();
        if q.is_empty() {
            return 0.0;
        }
        let p: BTreeSet<String> = normalized_tokens(passage).into_iter().collect();
        q.intersection(&p).count() as f64 / q.len() as f64
    }
}

impl Reranker for LexicalReranker {
    fn model_name(&self) -> &str {
        "mock-lexical-reranker"
    }

    fn score_passages(&self, query: &str, passages: &[&str]) -> Result<Vec<f64>, GatewayError> {
        self.calls.fetch_add(passages.len(), Ordering::SeqCst);
        Ok(passages.iter().map(|p| Self::overlap(query, p)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{chat, embed_batch, rerank_score, EmbedKind};

    #[test]
    fn scripted_fingerprint_reply() {
        let m = MockChat::new();
        let req = ChatRequest::new("sys", "what is six times seven");
        m.script(req.fingerprint(), "42");
        assert_eq!(chat(&m, &req).unwrap(), "42");
        assert_eq!(m.calls(), 1);
    }

    #[test]
    fn unknown_prompt_is_an_error() {
        let m = MockChat::new();
        let err = chat(&m, &ChatRequest::new("sys", "hi")).unwrap_err();
        assert!(matches!(err, GatewayError::Unscripted { .. }));
    }

    #[test]
    fn replies_are_returned_untrimmed() {
        let m = MockChat::new();
        m.on_contains("x", "  padded \n");
        assert_eq!(
            chat(&m, &ChatRequest::new("s", "x")).unwrap(),
            "  padded \n"
        );
    }

    #[test]
    fn identical_texts_embed_identically() {
        let e = MockEmbedder::new(64);
        let v = embed_batch(&e, &["same", "same"], EmbedKind::Query).unwrap();
        assert_eq!(v[0], v[1]);
        assert_eq!(v[0].dims(), 64);
    }

    #[test]
    fn vectors_are_unit_norm() {
        for mode in [MockEmbedderMode::Hash, MockEmbedderMode::BagOfWords] {
            let e = MockEmbedder::new(64).with_mode(mode);
            for v in embed_batch(&e, &["a", "b c", "!!!"], EmbedKind::Passage).unwrap() {
                assert!((v.norm() - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn cosine_matches_brute_force_dot_product() {
        let e = MockEmbedder::new(64);
        let v = embed_batch(&e, &["a", "b"], EmbedKind::Query).unwrap();
        // Oracle: normalize the raw vectors by hand and take the dot product.
        let norm = |x: &[f32]| -> Vec<f64> {
            let n: f64 = x.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
            x.iter().map(|&v| v as f64 / n).collect()
        };
        let ra = norm(&e.raw_vector("query: a"));
        let rb = norm(&e.raw_vector("query: b"));
        let oracle: f64 = ra.iter().zip(&rb).map(|(x, y)| x * y).sum();
        assert!((v[0].dot(&v[1]) - oracle).abs() < 1e-6);
    }

    #[test]
    fn prefix_is_applied_per_kind() {
        let e = MockEmbedder::new(16);
        let q = embed_batch(&e, &["t"], EmbedKind::Query).unwrap();
        let p = embed_batch(&e, &["t"], EmbedKind::Passage).unwrap();
        assert_ne!(q[0], p[0]);
        let expected =
            crate::gateway::EmbeddingVector::normalized(e.raw_vector("passage: t")).unwrap();
        assert_eq!(p[0], expected);
    }

    #[test]
    fn bag_of_words_relates_shared_words() {
        let e = MockEmbedder::new(64).with_mode(MockEmbedderMode::BagOfWords);
        let v = embed_batch(
            &e,
            &[
                "who founded the acme company",
                "when was acme company founded",
                "zebra stripes",
            ],
            EmbedKind::Query,
        )
        .unwrap();
        assert!(v[0].dot(&v[1]) > v[0].dot(&v[2]));
    }

    #[test]
    fn lexical_overlap_scores() {
        let r = LexicalReranker::new();
        assert_eq!(
            rerank_score(&r, "blue cat", "the blue cat sat").unwrap(),
            1.0
        );
        assert_eq!(rerank_score(&r, "blue cat", "red dog").unwrap(), 0.0);
        assert_eq!(rerank_score(&r, "blue cat", "a blue hat").unwrap(), 0.5);
        let a = rerank_score(&r, "x y z", "y z w").unwrap();
        let b = rerank_score(&r, "x y z", "y z w").unwrap();
        assert_eq!(a, b);
    }
}
