//! Source documents and sliding-window chunking.
//!
//! Documents are split into fixed character windows (default 800 code
//! points) advanced by a fixed stride (default 600), so neighbouring chunks
//! share `window - stride` characters. Windows are never snapped to word or
//! sentence boundaries and the trailing window is kept even when short.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_WINDOW: usize = 800;
pub const DEFAULT_STRIDE: usize = 600;

/// Width of the zero-padded start offset inside a chunk id.
const OFFSET_WIDTH: usize = 8;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read corpus {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: duplicate doc_id {doc_id:?} (first seen on line {first})")]
    DuplicateId {
        line: usize,
        first: usize,
        doc_id: String,
    },
    #[error("invalid chunking config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    pub text: String,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            title: None,
            text: text.into(),
        }
    }
}

/// A character window `[start, end)` of a parent document.
///
/// Offsets count unicode code points, not bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub doc_id: String,
    pub start: usize,
    pub end: usize,
    pub text: String,
}

impl Chunk {
    pub fn char_len(&self) -> usize {
        self.end - self.start
    }
}

pub fn chunk_id(doc_id: &str, start: usize) -> String {
    format!("{doc_id}:{start:0width$}", width = OFFSET_WIDTH)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChunkingConfig {
    window: usize,
    stride: usize,
}

impl Default for ChunkingConfig {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            stride: DEFAULT_STRIDE,
        }
    }
}

impl ChunkingConfig {
    pub fn new(window: usize, stride: usize) -> Result<Self, CorpusError> {
        if stride == 0 {
            return Err(CorpusError::InvalidConfig("stride must be > 0".to_string()));
        }
        if stride > window {
            return Err(CorpusError::InvalidConfig(format!(
                "stride ({stride}) must be <= window ({window})"
            )));
        }
        Ok(Self { window, stride })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    /// Number of chunks produced for a text of `len` characters.
    pub fn chunk_count(&self, len: usize) -> usize {
        if len == 0 {
            0
        } else if len <= self.window {
            1
        } else {
            1 + (len - self.window).div_ceil(self.stride)
        }
    }
}

/// Split a document into overlapping character windows.
pub fn chunk_document(doc: &Document, cfg: &ChunkingConfig) -> Vec<Chunk> {
    // Byte offset of every code point, plus the end of the string.
    let boundaries: Vec<usize> = doc
        .text
        .char_indices()
        .map(|(i, _)| i)
        .chain(std::iter::once(doc.text.len()))
        .collect();
    let len = boundaries.len() - 1;

    (0..cfg.chunk_count(len))
        .map(|i| {
            let start = i * cfg.stride;
            let end = (start + cfg.window).min(len);
            Chunk {
                chunk_id: chunk_id(&doc.doc_id, start),
                doc_id: doc.doc_id.clone(),
                start,
                end,
                text: doc.text[boundaries[start]..boundaries[end]].to_string(),
            }
        })
        .collect()
}

/// Chunk every document, preserving document order.
pub fn chunk_corpus(docs: &[Document], cfg: &ChunkingConfig) -> Vec<Chunk> {
    docs.iter().flat_map(|d| chunk_document(d, cfg)).collect()
}

#[derive(Deserialize)]
struct CorpusRecord {
    id: String,
    #[serde(default)]
    title: Option<String>,
    text: String,
}

/// Load a corpus in the line-record format: one JSON object per line with
/// `id`, optional `title` and `text`. Blank lines are skipped.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Document>, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_corpus(BufReader::new(file)).map_err(|e| match e {
        CorpusError::Io { source, .. } => CorpusError::Io {
            path: path.display().to_string(),
            source,
        },
        other => other,
    })
}

pub fn parse_corpus(reader: impl BufRead) -> Result<Vec<Document>, CorpusError> {
    let mut docs = Vec::new();
    let mut seen: std::collections::HashMap<String, usize> = Default::default();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: String::new(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CorpusRecord =
            serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
                line: line_no,
                reason: e.to_string(),
            })?;
        if rec.text.is_empty() {
            return Err(CorpusError::Malformed {
                line: line_no,
                reason: "empty text".to_string(),
            });
        }
        if let Some(&first) = seen.get(&rec.id) {
            return Err(CorpusError::DuplicateId {
                line: line_no,
                first,
                doc_id: rec.id,
            });
        }
        seen.insert(rec.id.clone(), line_no);
        docs.push(Document {
            doc_id: rec.id,
            title: rec.title,
            text: rec.text,
        });
    }
    Ok(docs)
}

/// Check that document ids are unique and texts non-empty.
pub fn validate_documents(docs: &[Document]) -> Result<(), CorpusError> {
    let mut seen = HashSet::new();
    for (i, doc) in docs.iter().enumerate() {
        if doc.text.is_empty() {
            return Err(CorpusError::Malformed {
                line: i + 1,
                reason: format!("document {:?} has empty text", doc.doc_id),
            });
        }
        if !seen.insert(doc.doc_id.as_str()) {
            return Err(CorpusError::DuplicateId {
                line: i + 1,
                first: docs
                    .iter()
                    .position(|d| d.doc_id == doc.doc_id)
                    .unwrap_or(0)
                    + 1,
                doc_id: doc.doc_id.clone(),
            });
        }
    }
    Ok(())
}
