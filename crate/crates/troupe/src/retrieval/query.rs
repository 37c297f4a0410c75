//! Hybrid retrieval over an index.
//!
//! Every query is scored two ways: cosine similarity against the stored
//! embedding (semantic) and identifier-token Jaccard overlap against the
//! current file contents (lexical). The blend favours the semantic signal
//! 70/30 but clamps it at zero first, so an anti-correlated embedding can
//! never drag a strong exact-token match below unrelated chunks.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::chunk::{read_span, ChunkKind};
use super::embed::{cosine, identifier_tokens, Embedder};
use super::index::IndexBackend;

pub const SEMANTIC_WEIGHT: f32 = 0.7;
pub const LEXICAL_WEIGHT: f32 = 0.3;
pub const DEFAULT_K: usize = 5;

#[derive(Debug, Error)]
pub enum QueryError {
    #[error("index is empty; nothing to rank semantically")]
    EmptyIndex,
    #[error("invalid pattern {pattern:?}: {message}")]
    InvalidPattern { pattern: String, message: String },
    #[error("search i/o on {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryMode {
    Semantic,
    Lexical,
    #[default]
    Hybrid,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetrievalQuery {
    pub text: String,
    /// Result count; useful values sit around 3–5.
    pub k: usize,
    pub mode: QueryMode,
}

impl RetrievalQuery {
    pub fn new(text: impl Into<String>) -> Self {
        Self { text: text.into(), k: DEFAULT_K, mode: QueryMode::Hybrid }
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    pub fn with_mode(mut self, mode: QueryMode) -> Self {
        self.mode = mode;
        self
    }
}

/// `0.7 * max(semantic, 0) + 0.3 * lexical`, always within `[0, 1]` for
/// lexical scores in `[0, 1]`.
pub fn blend_score(semantic: f32, lexical: f32) -> f32 {
    SEMANTIC_WEIGHT * semantic.max(0.0) + LEXICAL_WEIGHT * lexical
}

/// Jaccard overlap of the case-sensitive identifier-token sets of two texts.
/// Zero when either side has no tokens.
pub fn lexical_overlap(query: &str, text: &str) -> f32 {
    let a: BTreeSet<String> = identifier_tokens(query).into_iter().collect();
    let b: BTreeSet<String> = identifier_tokens(text).into_iter().collect();
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let intersection = a.intersection(&b).count();
    let union = a.len() + b.len() - intersection;
    intersection as f32 / union as f32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub chunk_id: String,
    pub path: PathBuf,
    pub start_line: usize,
    pub end_line: usize,
    pub kind: ChunkKind,
    pub symbol: Option<String>,
    pub semantic: f32,
    pub lexical: f32,
    pub score: f32,
    /// Current text of the span, read from the workspace at query time.
    pub snippet: String,
}

fn sort_hits(hits: &mut [SearchHit]) {
    hits.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.path.cmp(&b.path))
            .then_with(|| a.start_line.cmp(&b.start_line))
    });
}

/// File contents cached per query so each path is read once.
struct SpanReader<'a> {
    root: &'a Path,
    cache: BTreeMap<PathBuf, Option<String>>,
}

impl<'a> SpanReader<'a> {
    fn new(root: &'a Path) -> Self {
        Self { root, cache: BTreeMap::new() }
    }

    fn read(&mut self, rel: &Path, start: usize, end: usize) -> Option<String> {
        let text = self
            .cache
            .entry(rel.to_path_buf())
            .or_insert_with(|| std::fs::read_to_string(self.root.join(rel)).ok());
        text.as_deref().and_then(|t| read_span(t, start, end))
    }
}

/// Score every record against the query and return the top `k` hits,
/// ordered by the mode's score (descending), then path, then start line.
/// Records whose file no longer exists or no longer covers the span are
/// stale and skipped. Semantic and hybrid modes require a non-empty index.
pub fn query_index(
    workspace_root: &Path,
    index: &dyn IndexBackend,
    embedder: &dyn Embedder,
    query: &RetrievalQuery,
) -> Result<Vec<SearchHit>, QueryError> {
    if query.mode != QueryMode::Lexical && index.count() == 0 {
        return Err(QueryError::EmptyIndex);
    }
    if query.k == 0 {
        return Ok(Vec::new());
    }
    // Lexical mode never consults the embedding, so skip computing it.
    let query_vector = match query.mode {
        QueryMode::Lexical => Vec::new(),
        _ => embedder.embed(&query.text),
    };
    let mut reader = SpanReader::new(workspace_root);
    let mut hits: Vec<SearchHit> = Vec::new();
    for record in index.records() {
        let Some(snippet) = reader.read(&record.path, record.start_line, record.end_line) else {
            continue;
        };
        let semantic = match query.mode {
            QueryMode::Lexical => 0.0,
            _ => cosine(&query_vector, &record.vector),
        };
        let lexical = lexical_overlap(&query.text, &snippet);
        let score = match query.mode {
            QueryMode::Semantic => semantic,
            QueryMode::Lexical => lexical,
            QueryMode::Hybrid => blend_score(semantic, lexical),
        };
        hits.push(SearchHit {
            chunk_id: record.chunk_id.clone(),
            path: record.path.clone(),
            start_line: record.start_line,
            end_line: record.end_line,
            kind: record.kind,
            symbol: record.symbol.clone(),
            semantic,
            lexical,
            score,
            snippet,
        });
    }
    sort_hits(&mut hits);
    hits.truncate(query.k);
    Ok(hits)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrepMatch {
    pub path: PathBuf,
    /// 1-based.
    pub line_number: usize,
    pub line: String,
}

/// Plain pattern search over the files themselves — the grep-and-file-path
/// complement to the embedding index. Matches are ordered by path, then
/// line number. `glob` restricts the files searched (e.g. `src/**/*.ts`).
pub fn lexical_search(
    root: &Path,
    pattern: &str,
    glob: Option<&str>,
) -> Result<Vec<GrepMatch>, QueryError> {
    let regex = regex::Regex::new(pattern).map_err(|e| QueryError::InvalidPattern {
        pattern: pattern.to_string(),
        message: e.to_string(),
    })?;
    let glob_matcher = glob
        .map(|g| {
            globset::GlobBuilder::new(g)
                .literal_separator(true)
                .build()
                .map(|g| g.compile_matcher())
                .map_err(|e| QueryError::InvalidPattern {
                    pattern: g.to_string(),
                    message: e.to_string(),
                })
        })
        .transpose()?;

    let mut matches = Vec::new();
    let walker = walkdir::WalkDir::new(root).sort_by_file_name().into_iter();
    for entry in walker.filter_entry(|e| {
        let name = e.file_name().to_string_lossy();
        if e.depth() > 0 && name.starts_with('.') {
            return false;
        }
        !(e.file_type().is_dir() && super::SKIP_DIRS.contains(&name.as_ref()))
    }) {
        let entry = entry.map_err(|e| QueryError::Io {
            path: root.display().to_string(),
            message: e.to_string(),
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry.path().strip_prefix(root).expect("walk stays under root");
        if let Some(matcher) = &glob_matcher {
            if !matcher.is_match(rel) {
                continue;
            }
        }
        let Ok(text) = std::fs::read_to_string(entry.path()) else { continue };
        for (i, line) in text.lines().enumerate() {
            if regex.is_match(line) {
                matches.push(GrepMatch {
                    path: rel.to_path_buf(),
                    line_number: i + 1,
                    line: line.to_string(),
                });
            }
        }
    }
    Ok(matches)
}

/// Recompute each hit's blended score from its stored components and
/// re-sort. The output is a permutation of the input, so reranking can only
/// reorder results, never invent or drop them.
pub fn rerank(mut hits: Vec<SearchHit>) -> Vec<SearchHit> {
    for hit in &mut hits {
        hit.score = blend_score(hit.semantic, hit.lexical);
    }
    sort_hits(&mut hits);
    hits
}
