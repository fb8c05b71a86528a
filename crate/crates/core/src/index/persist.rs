//! On-disk index layout:
//!
//! ```text
//! <root>/manifest.json   build metadata, file checksums, content hash
//! <root>/entries.jsonl   one {entry_id, chunk_id, kind, text} per line
//! <root>/vectors.f32     little-endian f32, row-major, entries x dims
//! <root>/chunks.jsonl    one chunk record per line
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{sha256_hex, IndexEntry, IndexError, IndexManifest, VectorIndex};
use crate::corpus::Chunk;

pub const FORMAT_NAME: &str = "aqrag-index";
pub const FORMAT_VERSION: u32 = 1;

pub(super) const MANIFEST_FILE: &str = "manifest.json";
pub(super) const ENTRIES_FILE: &str = "entries.jsonl";
pub(super) const VECTORS_FILE: &str = "vectors.f32";
pub(super) const CHUNKS_FILE: &str = "chunks.jsonl";
pub(super) const DATA_FILES: [&str; 3] = [ENTRIES_FILE, VECTORS_FILE, CHUNKS_FILE];

fn jsonl<T: serde::Serialize>(items: &[T], file: &str) -> Result<Vec<u8>, IndexError> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item).map_err(|e| IndexError::Format {
            file: file.to_string(),
            reason: e.to_string(),
        })?;
        out.push(b'\n');
    }
    Ok(out)
}

/// Serialized bytes of each data file.
pub(super) fn encode(index: &VectorIndex) -> Result<Vec<(&'static str, Vec<u8>)>, IndexError> {
    let vectors: Vec<u8> = index.vectors.iter().flat_map(|v| v.to_le_bytes()).collect();
    Ok(vec![
        (ENTRIES_FILE, jsonl(&index.entries, ENTRIES_FILE)?),
        (VECTORS_FILE, vectors),
        (CHUNKS_FILE, jsonl(&index.chunks, CHUNKS_FILE)?),
    ])
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IndexError + '_ {
    move |source| IndexError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Write `index` under `dir`, creating it if needed.
pub fn save_index(index: &VectorIndex, dir: impl AsRef<Path>) -> Result<(), IndexError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (name, bytes) in encode(index)? {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(io_err(&path))?;
    }
    let path = dir.join(MANIFEST_FILE);
    let manifest = serde_json::to_vec_pretty(&index.manifest).map_err(|e| IndexError::Format {
        file: MANIFEST_FILE.into(),
        reason: e.to_string(),
    })?;
    fs::write(&path, manifest).map_err(io_err(&path))
}

fn read_checked(dir: &Path, name: &str, manifest: &IndexManifest) -> Result<Vec<u8>, IndexError> {
    let path = dir.join(name);
    let bytes = fs::read(&path).map_err(io_err(&path))?;
    if name == VECTORS_FILE {
        let expected = (manifest.entry_count * manifest.dims * 4) as u64;
        if bytes.len() as u64 != expected {
            return Err(IndexError::Truncated {
                file: path.display().to_string(),
                expected,
                found: bytes.len() as u64,
            });
        }
    }
    let expected = manifest.files.get(name).ok_or_else(|| IndexError::Format {
        file: MANIFEST_FILE.into(),
        reason: format!("no checksum recorded for {name}"),
    })?;
    let found = sha256_hex(&bytes);
    if &found != expected {
        return Err(IndexError::Checksum {
            file: path.display().to_string(),
            expected: expected.clone(),
            found,
        });
    }
    Ok(bytes)
}

fn parse_jsonl<T: serde::de::DeserializeOwned>(
    bytes: &[u8],
    file: &str,
) -> Result<Vec<T>, IndexError> {
    let text = std::str::from_utf8(bytes).map_err(|e| IndexError::Format {
        file: file.to_string(),
        reason: e.to_string(),
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| IndexError::Format {
                file: file.to_string(),
                reason: format!("line {}: {e}", i + 1),
            })
        })
        .collect()
}

/// Read an index written by [`save_index`], verifying format version,
/// file checksums and sizes.
pub fn load_index(dir: impl AsRef<Path>) -> Result<VectorIndex, IndexError> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    let raw = fs::read(&manifest_path).map_err(io_err(&manifest_path))?;
    let value: serde_json::Value =
        serde_json::from_slice(&raw).map_err(|e| IndexError::Format {
            file: manifest_path.display().to_string(),
            reason: e.to_string(),
        })?;
    let format = value.get("format").and_then(|v| v.as_str()).unwrap_or("");
    let version = value.get("version").and_then(|v| v.as_u64());
    if format != FORMAT_NAME || version != Some(u64::from(FORMAT_VERSION)) {
        return Err(IndexError::Version {
            file: manifest_path.display().to_string(),
            found: format!(
                "{format} v{}",
                version.map_or("?".into(), |v| v.to_string())
            ),
            expected: format!("{FORMAT_NAME} v{FORMAT_VERSION}"),
        });
    }
    let manifest: IndexManifest =
        serde_json::from_value(value).map_err(|e| IndexError::Format {
            file: manifest_path.display().to_string(),
            reason: e.to_string(),
        })?;

    let mut files: BTreeMap<&str, Vec<u8>> = BTreeMap::new();
    for name in DATA_FILES {
        files.insert(name, read_checked(dir, name, &manifest)?);
    }
    let entries: Vec<IndexEntry> = parse_jsonl(&files[ENTRIES_FILE], ENTRIES_FILE)?;
    let chunks: Vec<Chunk> = parse_jsonl(&files[CHUNKS_FILE], CHUNKS_FILE)?;
    if entries.len() != manifest.entry_count || chunks.len() != manifest.chunk_count {
        return Err(IndexError::Format {
            file: manifest_path.display().to_string(),
            reason: format!(
                "counts disagree with data files: {} entries / {} chunks on disk",
                entries.len(),
                chunks.len()
            ),
        });
    }
    let vectors: Vec<f32> = files[VECTORS_FILE]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();

    let expected_hash = manifest.content_hash.clone();
    let index = VectorIndex::from_parts(manifest, entries, vectors, chunks);
    index.check_references(ENTRIES_FILE)?;
    let found = index.compute_content_hash();
    if found != expected_hash {
        return Err(IndexError::Checksum {
            file: manifest_path.display().to_string(),
            expected: expected_hash,
            found,
        });
    }
    Ok(index)
}
