//! Vector index backends.
//!
//! Both backends do exact scans — corpora here are repository-sized, not
//! web-sized, and exactness keeps ranking reproducible. [`MemoryIndex`] lives
//! only in process; [`FileIndex`] adds a two-file on-disk form (records TSV +
//! JSON manifest) whose vectors round-trip bit-exactly through base64-encoded
//! little-endian f32 bytes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::chunk::{Chunk, ChunkKind};
use super::embed::{cosine, Embedder};

pub const RECORDS_FILE: &str = "records.tsv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// One indexed chunk: identity, location, and its embedding. Snippet text is
/// not stored — it is re-read from the workspace at query time, which keeps
/// the index small and guarantees results reflect the files as they are now.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkRecord {
    pub chunk_id: String,
    pub path: PathBuf,
    pub start_line: usize,
    pub end_line: usize,
    pub kind: ChunkKind,
    pub symbol: Option<String>,
    pub vector: Vec<f32>,
}

impl ChunkRecord {
    pub fn from_chunk(chunk: &Chunk, embedder: &dyn Embedder) -> Self {
        Self {
            chunk_id: chunk.id(),
            path: chunk.path.clone(),
            start_line: chunk.start_line,
            end_line: chunk.end_line,
            kind: chunk.kind,
            symbol: chunk.symbol.clone(),
            vector: embedder.embed(&chunk.text),
        }
    }
}

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("index i/o on {path}: {message}")]
    Io { path: String, message: String },
    #[error("corrupt index record at line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error("index was built with embedder `{found}`, expected `{expected}`")]
    EmbedderMismatch { expected: String, found: String },
    #[error("vector has {found} dims, index expects {expected}")]
    DimsMismatch { expected: usize, found: usize },
    #[error("manifest claims {claimed} records, file holds {actual}")]
    CountMismatch { claimed: usize, actual: usize },
}

fn io_err(path: &Path, err: std::io::Error) -> IndexError {
    IndexError::Io { path: path.display().to_string(), message: err.to_string() }
}

/// Uniform access to an index: upserts keyed by chunk id, deterministic
/// iteration, and an exact nearest-neighbour scan.
pub trait IndexBackend {
    fn embedder_id(&self) -> &str;
    fn dims(&self) -> usize;
    fn upsert(&mut self, record: ChunkRecord) -> Result<(), IndexError>;
    fn get(&self, chunk_id: &str) -> Option<&ChunkRecord>;
    /// Records in chunk-id order.
    fn records(&self) -> Box<dyn Iterator<Item = &ChunkRecord> + '_>;
    fn count(&self) -> usize;

    /// Top-`k` records by cosine similarity; ties broken by path then start
    /// line so equal scores rank identically on every run.
    fn query_nearest(&self, vector: &[f32], k: usize) -> Vec<(f32, ChunkRecord)> {
        let mut scored: Vec<(f32, ChunkRecord)> =
            self.records().map(|r| (cosine(vector, &r.vector), r.clone())).collect();
        scored.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.1.path.cmp(&b.1.path))
                .then_with(|| a.1.start_line.cmp(&b.1.start_line))
        });
        scored.truncate(k);
        scored
    }

    /// Reject an embedder whose id or dimensionality differs from what the
    /// index was built with.
    fn check_compatible(&self, embedder: &dyn Embedder) -> Result<(), IndexError> {
        if self.embedder_id() != embedder.id() {
            return Err(IndexError::EmbedderMismatch {
                expected: embedder.id().to_string(),
                found: self.embedder_id().to_string(),
            });
        }
        if self.dims() != embedder.dims() {
            return Err(IndexError::DimsMismatch {
                expected: embedder.dims(),
                found: self.dims(),
            });
        }
        Ok(())
    }
}

/// In-process exact-scan index ordered by chunk id.
#[derive(Debug, Clone)]
pub struct MemoryIndex {
    embedder_id: String,
    dims: usize,
    records: BTreeMap<String, ChunkRecord>,
}

impl MemoryIndex {
    pub fn new(embedder: &dyn Embedder) -> Self {
        Self { embedder_id: embedder.id().to_string(), dims: embedder.dims(), records: BTreeMap::new() }
    }

    pub fn with_shape(embedder_id: impl Into<String>, dims: usize) -> Self {
        Self { embedder_id: embedder_id.into(), dims, records: BTreeMap::new() }
    }
}

impl IndexBackend for MemoryIndex {
    fn embedder_id(&self) -> &str {
        &self.embedder_id
    }

    fn dims(&self) -> usize {
        self.dims
    }

    fn upsert(&mut self, record: ChunkRecord) -> Result<(), IndexError> {
        if record.vector.len() != self.dims {
            return Err(IndexError::DimsMismatch { expected: self.dims, found: record.vector.len() });
        }
        self.records.insert(record.chunk_id.clone(), record);
        Ok(())
    }

    fn get(&self, chunk_id: &str) -> Option<&ChunkRecord> {
        self.records.get(chunk_id)
    }

    fn records(&self) -> Box<dyn Iterator<Item = &ChunkRecord> + '_> {
        Box::new(self.records.values())
    }

    fn count(&self) -> usize {
        self.records.len()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    embedder: String,
    dims: usize,
    count: usize,
}

/// A [`MemoryIndex`] bound to an on-disk directory. `persist` writes the
/// records file and manifest; `open` reads them back bit-exactly.
#[derive(Debug, Clone)]
pub struct FileIndex {
    inner: MemoryIndex,
    dir: PathBuf,
}

impl FileIndex {
    pub fn create(dir: &Path, embedder: &dyn Embedder) -> Self {
        Self { inner: MemoryIndex::new(embedder), dir: dir.to_path_buf() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Write `records.tsv` (one record per line, sorted by chunk id) and
    /// `manifest.json` into the directory, creating it if needed.
    pub fn persist(&self) -> Result<(), IndexError> {
        std::fs::create_dir_all(&self.dir).map_err(|e| io_err(&self.dir, e))?;
        let mut out = String::new();
        for record in self.inner.records.values() {
            let mut bytes = Vec::with_capacity(record.vector.len() * 4);
            for value in &record.vector {
                bytes.extend_from_slice(&value.to_le_bytes());
            }
            out.push_str(&format!(
                "{}\t{}\t{}-{}\t{}\t{}\t{}\n",
                record.chunk_id,
                path_to_slash(&record.path),
                record.start_line,
                record.end_line,
                record.kind,
                record.symbol.as_deref().unwrap_or(""),
                BASE64.encode(&bytes),
            ));
        }
        let records_path = self.dir.join(RECORDS_FILE);
        std::fs::write(&records_path, out).map_err(|e| io_err(&records_path, e))?;

        let manifest = Manifest {
            embedder: self.inner.embedder_id.clone(),
            dims: self.inner.dims,
            count: self.inner.records.len(),
        };
        let manifest_path = self.dir.join(MANIFEST_FILE);
        let body = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&manifest_path, body).map_err(|e| io_err(&manifest_path, e))?;
        Ok(())
    }

    pub fn open(dir: &Path) -> Result<Self, IndexError> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let manifest_text =
            std::fs::read_to_string(&manifest_path).map_err(|e| io_err(&manifest_path, e))?;
        let manifest: Manifest = serde_json::from_str(&manifest_text)
            .map_err(|e| IndexError::Corrupt { line: 0, message: format!("manifest: {e}") })?;

        let records_path = dir.join(RECORDS_FILE);
        let text = std::fs::read_to_string(&records_path).map_err(|e| io_err(&records_path, e))?;
        let mut inner = MemoryIndex::with_shape(manifest.embedder, manifest.dims);
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let corrupt = |message: String| IndexError::Corrupt { line: line_no, message };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 6 {
                return Err(corrupt(format!("expected 6 fields, found {}", fields.len())));
            }
            let (start, end) = fields[2]
                .split_once('-')
                .ok_or_else(|| corrupt(format!("bad span `{}`", fields[2])))?;
            let start_line =
                start.parse().map_err(|_| corrupt(format!("bad start line `{start}`")))?;
            let end_line = end.parse().map_err(|_| corrupt(format!("bad end line `{end}`")))?;
            let kind = ChunkKind::parse(fields[3])
                .ok_or_else(|| corrupt(format!("unknown chunk kind `{}`", fields[3])))?;
            let bytes = BASE64
                .decode(fields[5])
                .map_err(|e| corrupt(format!("bad vector encoding: {e}")))?;
            if bytes.len() % 4 != 0 {
                return Err(corrupt(format!("vector byte length {} not a multiple of 4", bytes.len())));
            }
            let vector: Vec<f32> = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            inner.upsert(ChunkRecord {
                chunk_id: fields[0].to_string(),
                path: PathBuf::from(fields[1]),
                start_line,
                end_line,
                kind,
                symbol: if fields[4].is_empty() { None } else { Some(fields[4].to_string()) },
                vector,
            })?;
        }
        if inner.records.len() != manifest.count {
            return Err(IndexError::CountMismatch {
                claimed: manifest.count,
                actual: inner.records.len(),
            });
        }
        Ok(Self { inner, dir: dir.to_path_buf() })
    }
}

impl IndexBackend for FileIndex {
    fn embedder_id(&self) -> &str {
        self.inner.embedder_id()
    }

    fn dims(&self) -> usize {
        self.inner.dims()
    }

    fn upsert(&mut self, record: ChunkRecord) -> Result<(), IndexError> {
        self.inner.upsert(record)
    }

    fn get(&self, chunk_id: &str) -> Option<&ChunkRecord> {
        self.inner.get(chunk_id)
    }

    fn records(&self) -> Box<dyn Iterator<Item = &ChunkRecord> + '_> {
        self.inner.records()
    }

    fn count(&self) -> usize {
        self.inner.count()
    }
}

pub fn path_to_slash(path: &Path) -> String {
    path.to_string_lossy().replace('\\', "/")
}
