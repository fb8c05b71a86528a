//! Shared store of per-record indexes keyed by a content hash of
//! everything that determines the index bytes.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::corpus::{ChunkingConfig, Document};
use crate::index::{self, IndexError, IndexMode, VectorIndex};

#[derive(Serialize)]
struct KeyInput<'a> {
    docs: Vec<(&'a str, &'a str)>,
    mode: IndexMode,
    chunking: ChunkingConfig,
    prompt_hashes: std::collections::BTreeMap<String, String>,
    embedder: &'a str,
    indexer: Option<&'a str>,
}

/// Hash identifying the index built from `docs` under these settings. The
/// generator model only matters for modes that transform chunks.
pub fn cache_key(
    docs: &[Document],
    mode: IndexMode,
    chunking: &ChunkingConfig,
    embedder_model: &str,
    indexer_model: &str,
) -> String {
    let input = KeyInput {
        docs: docs
            .iter()
            .map(|d| (d.doc_id.as_str(), d.text.as_str()))
            .collect(),
        mode,
        chunking: *chunking,
        prompt_hashes: mode.prompt_hashes(),
        embedder: embedder_model,
        indexer: mode.transform().map(|_| indexer_model),
    };
    let bytes = serde_json::to_vec(&input).expect("cache key serializes");
    hex::encode(Sha256::digest(bytes))
}

/// In-memory index cache, optionally backed by `<dir>/<key>/` on disk in
/// the regular index layout.
#[derive(Debug, Default)]
pub struct IndexCache {
    memory: Mutex<HashMap<String, Arc<VectorIndex>>>,
    dir: Option<PathBuf>,
    builds: AtomicUsize,
    hits: AtomicUsize,
}

impl IndexCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_dir(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: Some(dir.into()),
            ..Self::default()
        }
    }

    /// Indexes built (not found in memory or on disk).
    pub fn builds(&self) -> usize {
        self.builds.load(Ordering::SeqCst)
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn get_or_build(
        &self,
        key: &str,
        build: impl FnOnce() -> Result<VectorIndex, IndexError>,
    ) -> Result<Arc<VectorIndex>, IndexError> {
        if let Some(idx) = self.memory.lock().expect("cache lock").get(key) {
            self.hits.fetch_add(1, Ordering::SeqCst);
            return Ok(idx.clone());
        }
        let path = self.dir.as_ref().map(|d| d.join(key));
        if let Some(path) = &path {
            if path.join("manifest.json").exists() {
                match index::load_index(path) {
                    Ok(idx) => {
                        self.hits.fetch_add(1, Ordering::SeqCst);
                        return Ok(self.insert(key, idx));
                    }
                    Err(e) => log::warn!("ignoring cached index {}: {e}", path.display()),
                }
            }
        }
        let idx = build()?;
        self.builds.fetch_add(1, Ordering::SeqCst);
        if let Some(path) = &path {
            index::save_index(&idx, path)?;
        }
        Ok(self.insert(key, idx))
    }

    fn insert(&self, key: &str, idx: VectorIndex) -> Arc<VectorIndex> {
        self.memory
            .lock()
            .expect("cache lock")
            .entry(key.to_string())
            .or_insert_with(|| Arc::new(idx))
            .clone()
    }
}
