//! The retrieval index: surrogate texts for each chunk (its answerable
//! questions, the chunk itself, or its summaries/paraphrases), embedded
//! and mapped back to the chunk they came from.
//!
//! Search is an exact scan over pre-normalized vectors, so the cosine
//! score is a plain dot product.

mod persist;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::fmt;
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{self, Chunk, ChunkingConfig, CorpusError, Document};
use crate::gateway::{
    self, ChatBackend, EmbedKind, EmbeddingBackend, EmbeddingVector, GatewayError,
};
use crate::stats::CountStats;
use crate::transform::{self, variant_id, TransformError, TransformKind};

pub use persist::{load_index, save_index, FORMAT_NAME, FORMAT_VERSION};

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("cannot build an index from an empty corpus")]
    EmptyCorpus,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("transform failed for chunk {chunk_id}: {source}")]
    Transform {
        chunk_id: String,
        #[source]
        source: TransformError,
    },
    #[error("embedding failed for chunk {chunk_id}: {source}")]
    Embedding {
        chunk_id: String,
        #[source]
        source: GatewayError,
    },
    #[error("dimension mismatch: index has {expected} dims, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("k must be >= 1")]
    InvalidK,
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}: checksum mismatch (expected {expected}, found {found})")]
    Checksum {
        file: String,
        expected: String,
        found: String,
    },
    #[error("{file}: unsupported index format {found:?} (expected {expected:?})")]
    Version {
        file: String,
        found: String,
        expected: String,
    },
    #[error("{file}: truncated ({found} bytes, expected {expected})")]
    Truncated {
        file: String,
        expected: u64,
        found: u64,
    },
    #[error("{file}: {reason}")]
    Format { file: String, reason: String },
}

/// Which surrogate texts are embedded for each chunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexMode {
    Document,
    Aq,
    Both,
    Summary,
    Paraphrase,
}

impl IndexMode {
    pub const ALL: [IndexMode; 5] = [
        IndexMode::Document,
        IndexMode::Aq,
        IndexMode::Both,
        IndexMode::Summary,
        IndexMode::Paraphrase,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            IndexMode::Document => "document",
            IndexMode::Aq => "aq",
            IndexMode::Both => "both",
            IndexMode::Summary => "summary",
            IndexMode::Paraphrase => "paraphrase",
        }
    }

    fn embeds_document(self) -> bool {
        matches!(self, IndexMode::Document | IndexMode::Both)
    }

    /// The generated transformation this mode embeds, if any.
    pub fn transform(self) -> Option<TransformKind> {
        match self {
            IndexMode::Document => None,
            IndexMode::Aq | IndexMode::Both => Some(TransformKind::Aq),
            IndexMode::Summary => Some(TransformKind::Summary),
            IndexMode::Paraphrase => Some(TransformKind::Paraphrase),
        }
    }

    /// `name -> sha256` of the prompt templates this mode depends on.
    pub fn prompt_hashes(self) -> BTreeMap<String, String> {
        self.transform()
            .map(|k| {
                let t = k.template();
                (t.name.to_string(), t.sha256())
            })
            .into_iter()
            .collect()
    }
}

impl fmt::Display for IndexMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for IndexMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        IndexMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                format!("unknown index mode {s:?} (expected document|aq|both|summary|paraphrase)")
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryKind {
    Document,
    Aq,
    Summary,
    Paraphrase,
}

impl From<TransformKind> for EntryKind {
    fn from(k: TransformKind) -> Self {
        match k {
            TransformKind::Aq => EntryKind::Aq,
            TransformKind::Summary => EntryKind::Summary,
            TransformKind::Paraphrase => EntryKind::Paraphrase,
        }
    }
}

impl EntryKind {
    /// Prefix family used when this kind of text is embedded. Questions
    /// go through the query prefix, like the subquestions they are matched
    /// against; passages through the passage prefix.
    pub fn embed_kind(self) -> EmbedKind {
        match self {
            EntryKind::Aq => EmbedKind::Query,
            _ => EmbedKind::Passage,
        }
    }
}

/// Metadata of one indexed vector. The vector itself lives in
/// [`VectorIndex::vector`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub entry_id: String,
    pub chunk_id: String,
    pub kind: EntryKind,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexManifest {
    pub format: String,
    pub version: u32,
    pub mode: IndexMode,
    pub dims: usize,
    pub entry_count: usize,
    pub chunk_count: usize,
    pub embedder_model: String,
    pub generator_model: String,
    pub chunking: ChunkingConfig,
    pub prompt_hashes: BTreeMap<String, String>,
    pub build_timestamp: u64,
    /// sha256 of each data file, keyed by file name.
    pub files: BTreeMap<String, String>,
    /// Hash over entries, vectors, chunks and prompt hashes.
    pub content_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    manifest: IndexManifest,
    entries: Vec<IndexEntry>,
    /// Row-major `entries.len() x dims`.
    vectors: Vec<f32>,
    chunks: Vec<Chunk>,
    chunk_pos: HashMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub entry_id: String,
    pub chunk_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct BuildOptions {
    /// Upper bound on chunks processed concurrently.
    pub parallelism: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self { parallelism: 4 }
    }
}

impl VectorIndex {
    pub(crate) fn from_parts(
        manifest: IndexManifest,
        entries: Vec<IndexEntry>,
        vectors: Vec<f32>,
        chunks: Vec<Chunk>,
    ) -> Self {
        let chunk_pos = chunks
            .iter()
            .enumerate()
            .map(|(i, c)| (c.chunk_id.clone(), i))
            .collect();
        Self {
            manifest,
            entries,
            vectors,
            chunks,
            chunk_pos,
        }
    }

    /// Assemble an index from embedded entries. Entries are sorted by
    /// entry id and chunks by chunk id; the manifest hashes are derived
    /// from the resulting bytes.
    pub fn assemble(
        mode: IndexMode,
        chunking: ChunkingConfig,
        embedder_model: &str,
        generator_model: &str,
        mut rows: Vec<(IndexEntry, EmbeddingVector)>,
        mut chunks: Vec<Chunk>,
    ) -> Result<Self, IndexError> {
        rows.sort_by(|a, b| a.0.entry_id.cmp(&b.0.entry_id));
        chunks.sort_by(|a, b| a.chunk_id.cmp(&b.chunk_id));
        let dims = rows.first().map_or(0, |(_, v)| v.dims());
        let mut entries = Vec::with_capacity(rows.len());
        let mut vectors = Vec::with_capacity(rows.len() * dims);
        for (entry, vector) in rows {
            if vector.dims() != dims {
                return Err(IndexError::DimensionMismatch {
                    expected: dims,
                    found: vector.dims(),
                });
            }
            vectors.extend_from_slice(vector.as_slice());
            entries.push(entry);
        }
        let manifest = IndexManifest {
            format: FORMAT_NAME.to_string(),
            version: FORMAT_VERSION,
            mode,
            dims,
            entry_count: entries.len(),
            chunk_count: chunks.len(),
            embedder_model: embedder_model.to_string(),
            generator_model: generator_model.to_string(),
            chunking,
            prompt_hashes: mode.prompt_hashes(),
            build_timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            files: BTreeMap::new(),
            content_hash: String::new(),
        };
        let mut index = Self::from_parts(manifest, entries, vectors, chunks);
        index.check_references("entries")?;
        let files = persist::encode(&index)?;
        index.manifest.files = files
            .iter()
            .map(|(name, bytes)| (name.to_string(), sha256_hex(bytes)))
            .collect();
        index.manifest.content_hash = index.compute_content_hash();
        Ok(index)
    }

    pub(crate) fn check_references(&self, file: &str) -> Result<(), IndexError> {
        for e in &self.entries {
            if !self.chunk_pos.contains_key(&e.chunk_id) {
                return Err(IndexError::Format {
                    file: file.to_string(),
                    reason: format!(
                        "entry {} references unknown chunk {}",
                        e.entry_id, e.chunk_id
                    ),
                });
            }
        }
        Ok(())
    }

    pub(crate) fn compute_content_hash(&self) -> String {
        let mut h = Sha256::new();
        for name in persist::DATA_FILES {
            h.update(name.as_bytes());
            h.update(
                self.manifest
                    .files
                    .get(name)
                    .map_or("", String::as_str)
                    .as_bytes(),
            );
        }
        for (name, hash) in &self.manifest.prompt_hashes {
            h.update(name.as_bytes());
            h.update(hash.as_bytes());
        }
        h.update(self.manifest.mode.as_str().as_bytes());
        h.update(self.manifest.dims.to_le_bytes());
        hex::encode(h.finalize())
    }

    pub fn manifest(&self) -> &IndexManifest {
        &self.manifest
    }

    pub fn mode(&self) -> IndexMode {
        self.manifest.mode
    }

    pub fn dims(&self) -> usize {
        self.manifest.dims
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        let d = self.dims();
        &self.vectors[i * d..(i + 1) * d]
    }

    pub fn raw_vectors(&self) -> &[f32] {
        &self.vectors
    }

    /// Chunks ordered by chunk id.
    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    pub fn chunk(&self, chunk_id: &str) -> Option<&Chunk> {
        self.chunk_pos.get(chunk_id).map(|&i| &self.chunks[i])
    }

    /// Number of entries per chunk, in chunk order, zero-entry chunks
    /// included. With `kind` set, only entries of that kind are counted.
    pub fn entry_counts(&self, kind: Option<EntryKind>) -> Vec<usize> {
        let mut counts = vec![0usize; self.chunks.len()];
        for e in &self.entries {
            if kind.is_none_or(|k| k == e.kind) {
                counts[self.chunk_pos[&e.chunk_id]] += 1;
            }
        }
        counts
    }
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Chunk, transform and embed a corpus.
///
/// Chunks are processed concurrently up to `opts.parallelism`; the
/// result does not depend on scheduling. Any backend error aborts the
/// build and names the failing chunk.
pub fn build_index(
    docs: &[Document],
    mode: IndexMode,
    cfg: &ChunkingConfig,
    chat: &dyn ChatBackend,
    embedder: &dyn EmbeddingBackend,
    opts: BuildOptions,
) -> Result<VectorIndex, IndexError> {
    if docs.is_empty() {
        return Err(IndexError::EmptyCorpus);
    }
    corpus::validate_documents(docs)?;
    let chunks = corpus::chunk_corpus(docs, cfg);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.parallelism.max(1))
        .build()
        .map_err(|e| IndexError::Io {
            path: "<thread pool>".into(),
            source: std::io::Error::other(e),
        })?;
    let per_chunk: Vec<Vec<(IndexEntry, EmbeddingVector)>> = pool.install(|| {
        chunks
            .par_iter()
            .map(|chunk| index_chunk(chunk, mode, chat, embedder))
            .collect::<Result<_, _>>()
    })?;
    let rows = per_chunk.into_iter().flatten().collect();
    VectorIndex::assemble(
        mode,
        *cfg,
        embedder.model_name(),
        if mode.transform().is_some() {
            chat.model_name()
        } else {
            ""
        },
        rows,
        chunks,
    )
}

fn index_chunk(
    chunk: &Chunk,
    mode: IndexMode,
    chat: &dyn ChatBackend,
    embedder: &dyn EmbeddingBackend,
) -> Result<Vec<(IndexEntry, EmbeddingVector)>, IndexError> {
    let mut entries = Vec::new();
    if mode.embeds_document() {
        entries.push(IndexEntry {
            entry_id: format!("{}#doc", chunk.chunk_id),
            chunk_id: chunk.chunk_id.clone(),
            kind: EntryKind::Document,
            text: chunk.text.clone(),
        });
    }
    if let Some(kind) = mode.transform() {
        let texts = transform::generate_variants(kind, chunk, chat).map_err(|source| {
            IndexError::Transform {
                chunk_id: chunk.chunk_id.clone(),
                source,
            }
        })?;
        entries.extend(texts.into_iter().enumerate().map(|(i, text)| IndexEntry {
            entry_id: variant_id(&chunk.chunk_id, kind, i + 1),
            chunk_id: chunk.chunk_id.clone(),
            kind: kind.into(),
            text,
        }));
    }

    let mut out = Vec::with_capacity(entries.len());
    for embed_kind in [EmbedKind::Passage, EmbedKind::Query] {
        let group: Vec<&IndexEntry> = entries
            .iter()
            .filter(|e| e.kind.embed_kind() == embed_kind)
            .collect();
        if group.is_empty() {
            continue;
        }
        let texts: Vec<&str> = group.iter().map(|e| e.text.as_str()).collect();
        let vectors = gateway::embed_batch(embedder, &texts, embed_kind).map_err(|source| {
            IndexError::Embedding {
                chunk_id: chunk.chunk_id.clone(),
                source,
            }
        })?;
        out.extend(group.into_iter().cloned().zip(vectors));
    }
    Ok(out)
}

/// Ranking key: higher score first, then smaller entry id.
#[derive(Debug)]
struct Ranked<'a> {
    score: f64,
    entry_id: &'a str,
    idx: usize,
}

impl Ranked<'_> {
    /// `Less` means `self` ranks ahead of `other`.
    fn rank_cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then_with(|| self.entry_id.cmp(other.entry_id))
    }
}

impl PartialEq for Ranked<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.rank_cmp(other) == Ordering::Equal
    }
}
impl Eq for Ranked<'_> {}
impl PartialOrd for Ranked<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Ranked<'_> {
    // The heap keeps its worst-ranked element on top.
    fn cmp(&self, other: &Self) -> Ordering {
        self.rank_cmp(other)
    }
}

/// Top-`k` entries by cosine similarity to `query`, score descending,
/// ties broken by entry id ascending.
pub fn search(
    index: &VectorIndex,
    query: &EmbeddingVector,
    k: usize,
) -> Result<Vec<SearchHit>, IndexError> {
    if k == 0 {
        return Err(IndexError::InvalidK);
    }
    if index.is_empty() {
        return Ok(Vec::new());
    }
    if query.dims() != index.dims() {
        return Err(IndexError::DimensionMismatch {
            expected: index.dims(),
            found: query.dims(),
        });
    }
    let q = query.as_slice();
    let mut heap: BinaryHeap<Ranked> = BinaryHeap::with_capacity(k + 1);
    for (idx, entry) in index.entries.iter().enumerate() {
        let cand = Ranked {
            score: gateway::dot(q, index.vector(idx)),
            entry_id: &entry.entry_id,
            idx,
        };
        if heap.len() < k {
            heap.push(cand);
        } else if let Some(worst) = heap.peek() {
            if cand.rank_cmp(worst) == Ordering::Less {
                heap.pop();
                heap.push(cand);
            }
        }
    }
    Ok(heap
        .into_sorted_vec()
        .into_iter()
        .map(|r| SearchHit {
            entry_id: r.entry_id.to_string(),
            chunk_id: index.entries[r.idx].chunk_id.clone(),
            score: r.score,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndexStats {
    pub entries: usize,
    pub chunks: usize,
    pub per_chunk: CountStats,
    pub zero_entry_chunks: usize,
}

/// Per-chunk entry count statistics over all chunks, including chunks
/// that produced no entries.
pub fn index_stats(index: &VectorIndex) -> IndexStats {
    stats_from_counts(index, &index.entry_counts(None))
}

/// Like [`index_stats`], counting only entries of `kind`.
pub fn index_stats_for(index: &VectorIndex, kind: EntryKind) -> IndexStats {
    stats_from_counts(index, &index.entry_counts(Some(kind)))
}

fn stats_from_counts(index: &VectorIndex, counts: &[usize]) -> IndexStats {
    let per_chunk = CountStats::from_counts(counts.iter().copied());
    IndexStats {
        entries: counts.iter().sum(),
        chunks: index.chunks.len(),
        per_chunk,
        zero_entry_chunks: per_chunk.zeros,
    }
}
