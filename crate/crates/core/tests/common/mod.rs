//! Fixtures and brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::HashMap;
use std::sync::Arc;

use aqrag::corpus::{self, Chunk, ChunkingConfig, Document};
use aqrag::gateway::ChatRequest;
use aqrag::gateway::{self, EmbedKind, EmbeddingVector, LexicalReranker, MockChat, MockEmbedder};
use aqrag::index::{build_index, BuildOptions, EntryKind, IndexEntry, IndexMode, VectorIndex};
use aqrag::pipeline::Backends;
use aqrag::prompts::DECOMPOSITION;
use aqrag::transform::{self, decomposition_user_prompt};
use rand::seq::SliceRandom;
use rand::Rng;

/// Exhaustive top-k: score every entry, sort by (score desc, entry id asc).
pub fn oracle_top_k(index: &VectorIndex, query: &[f32], k: usize) -> Vec<(String, String, f64)> {
    let mut all: Vec<(String, String, f64)> = index
        .entries()
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let mut s = 0.0f64;
            for (a, b) in query.iter().zip(index.vector(i)) {
                s += f64::from(*a) * f64::from(*b);
            }
            (e.entry_id.clone(), e.chunk_id.clone(), s)
        })
        .collect();
    all.sort_by(|a, b| b.2.total_cmp(&a.2).then_with(|| a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

/// Pool the exhaustive top-k1 of every query by chunk with max score,
/// ordered by (score desc, chunk id asc).
pub fn oracle_pool(
    index: &VectorIndex,
    queries: &[Vec<f32>],
    k1: usize,
) -> Vec<(String, f64, usize)> {
    let mut best: HashMap<String, (f64, usize)> = HashMap::new();
    for q in queries {
        for (_, chunk, score) in oracle_top_k(index, q, k1) {
            let slot = best.entry(chunk).or_insert((f64::NEG_INFINITY, 0));
            slot.0 = slot.0.max(score);
            slot.1 += 1;
        }
    }
    let mut out: Vec<(String, f64, usize)> =
        best.into_iter().map(|(c, (s, n))| (c, s, n)).collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out
}

pub fn synthetic_chunk(doc: usize, ord: usize) -> Chunk {
    let doc_id = format!("d{doc:03}");
    let start = ord * 600;
    Chunk {
        chunk_id: corpus::chunk_id(&doc_id, start),
        doc_id,
        start,
        end: start + 4,
        text: format!("chunk {doc} {ord}"),
    }
}

/// Index of `n_entries` AQ entries spread over `n_chunks` chunks, embedded
/// with the hash mock. About one text in ten is repeated so exact score
/// ties occur.
pub fn random_index(
    rng: &mut impl Rng,
    n_entries: usize,
    n_chunks: usize,
    dims: usize,
) -> VectorIndex {
    let embedder = MockEmbedder::new(dims);
    let chunks: Vec<Chunk> = (0..n_chunks)
        .map(|i| synthetic_chunk(i / 3, i % 3))
        .collect();
    let mut texts: Vec<String> = Vec::with_capacity(n_entries);
    for i in 0..n_entries {
        if i > 0 && rng.gen_bool(0.1) {
            let j = rng.gen_range(0..i);
            texts.push(texts[j].clone());
        } else {
            texts.push(format!("synthetic question {}", rng.gen::<u64>()));
        }
    }
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let vectors = gateway::embed_batch(&embedder, &refs, EmbedKind::Query).unwrap();
    let rows = texts
        .into_iter()
        .zip(vectors)
        .enumerate()
        .map(|(i, (text, v))| {
            let chunk = &chunks[rng.gen_range(0..n_chunks)];
            (
                IndexEntry {
                    entry_id: format!("{}#aq{i:05}", chunk.chunk_id),
                    chunk_id: chunk.chunk_id.clone(),
                    kind: EntryKind::Aq,
                    text,
                },
                v,
            )
        })
        .collect();
    VectorIndex::assemble(
        IndexMode::Aq,
        ChunkingConfig::default(),
        "mock-hash-embedder",
        "mock-chat",
        rows,
        chunks,
    )
    .unwrap()
}

pub fn random_query(rng: &mut impl Rng, dims: usize) -> EmbeddingVector {
    let v: Vec<f32> = (0..dims).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    EmbeddingVector::normalized(v).unwrap()
}

/// Index entries per chunk, counted from the entry list.
pub fn recount_entries(index: &VectorIndex, kind: Option<EntryKind>) -> Vec<usize> {
    let mut counts: HashMap<&str, usize> = index
        .chunks()
        .iter()
        .map(|c| (c.chunk_id.as_str(), 0))
        .collect();
    for e in index.entries() {
        if kind.is_none_or(|k| k == e.kind) {
            *counts.get_mut(e.chunk_id.as_str()).unwrap() += 1;
        }
    }
    counts.into_values().collect()
}

/// Two-pass mean and population standard deviation.
pub fn mean_std(xs: &[usize]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().map(|&x| x as f64).sum::<f64>() / n;
    let var = xs.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub struct Planted {
    pub index: VectorIndex,
    pub backends: Backends,
    pub decomposer: Arc<MockChat>,
    pub generator: Arc<MockChat>,
    pub question: String,
    pub subquestions: Vec<String>,
    pub gold: String,
    pub gold_chunk: String,
}

const FACTS: [(&str, &str); 2] = [
    (
        "ada",
        "Ada Lovelace was born in London. Ada Lovelace wrote the first published algorithm.",
    ),
    (
        "babbage",
        "Charles Babbage designed the Analytical Engine. The engine was never finished.",
    ),
];

/// Two fact documents among `fillers` unrelated ones. The decomposer
/// returns questions identical to generated AQs of the fact chunks, and
/// the generator answers the gold only when the gold chunk is in context.
pub fn planted(fillers: usize, mode: IndexMode) -> Planted {
    let mut docs: Vec<Document> = FACTS
        .iter()
        .map(|(id, text)| Document::new(*id, *text))
        .collect();
    for i in 0..fillers {
        docs.push(Document::new(
            format!("filler{i:02}"),
            format!(
                "Filler topic {i} covers unrelated matter. Item {i} has nothing to say. Other notes mention number {i} only."
            ),
        ));
    }
    let indexer = MockChat::new().with_responder(transform::heuristic_reply);
    let embedder = Arc::new(MockEmbedder::new(64));
    let index = build_index(
        &docs,
        mode,
        &ChunkingConfig::default(),
        &indexer,
        embedder.as_ref(),
        BuildOptions::default(),
    )
    .unwrap();

    let question =
        "Where was Ada Lovelace born, and who designed the Analytical Engine?".to_string();
    let subquestions = vec![
        "What does the text state about Ada Lovelace was born in London?".to_string(),
        "What does the text state about Charles Babbage designed the Analytical Engine?"
            .to_string(),
    ];
    let decomposer = Arc::new(MockChat::new().with_name("decomposer"));
    decomposer.script_request(
        &ChatRequest::new(DECOMPOSITION.text, decomposition_user_prompt(&question)),
        serde_json::to_string(&subquestions).unwrap(),
    );
    let gold_chunk = corpus::chunk_id("ada", 0);
    let marker = format!("[chunk {gold_chunk}]");
    let generator = Arc::new(
        MockChat::new()
            .with_name("generator")
            .with_responder(move |r| {
                Some(
                    if r.user_prompt.contains(&marker) {
                        "London"
                    } else {
                        "unknown"
                    }
                    .into(),
                )
            }),
    );
    let backends = Backends {
        indexer: Arc::new(indexer),
        decomposer: decomposer.clone(),
        generator: generator.clone(),
        embedder,
        reranker: Arc::new(LexicalReranker::new()),
    };
    Planted {
        index,
        backends,
        decomposer,
        generator,
        question,
        subquestions,
        gold: "London".into(),
        gold_chunk,
    }
}

/// Random words from a small vocabulary that includes articles and
/// punctuation.
pub fn random_answer(rng: &mut impl Rng) -> String {
    const VOCAB: [&str; 14] = [
        "paris", "London", "the", "a", "an", "Obama", "river", "1990", "U.S.", "x", "y", "z!",
        "New", "york,",
    ];
    let n = rng.gen_range(0..6);
    (0..n)
        .map(|_| *VOCAB.choose(rng).unwrap())
        .collect::<Vec<_>>()
        .join(" ")
}
