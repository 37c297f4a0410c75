//! Repository indexing and semantic retrieval.
//!
//! The pipeline: [`chunk`] splits files along construct boundaries,
//! [`embed`] turns chunk text into deterministic vectors, [`index`] stores
//! them in a scannable backend, and [`query`] blends semantic and lexical
//! signals into ranked [`SearchHit`]s whose snippets feed the L4 context
//! layer.

pub mod chunk;
pub mod embed;
pub mod index;
pub mod query;

pub use chunk::{chunk_id, chunk_source, read_span, Chunk, ChunkKind, Language};
pub use embed::{cosine, identifier_tokens, Embedder, NgramEmbedder, TokenEmbedder};
pub use index::{ChunkRecord, FileIndex, IndexBackend, IndexError, MemoryIndex};
pub use query::{
    blend_score, lexical_overlap, lexical_search, query_index, rerank, GrepMatch, QueryError,
    QueryMode, RetrievalQuery, SearchHit, DEFAULT_K, LEXICAL_WEIGHT, SEMANTIC_WEIGHT,
};

use std::path::{Path, PathBuf};

/// Directories never walked during indexing: VCS state, build output,
/// vendored dependencies, and this tool's own working directory.
pub const SKIP_DIRS: [&str; 4] = ["target", "node_modules", "out", "dist"];

/// Files larger than this are skipped rather than embedded wholesale.
const MAX_FILE_BYTES: u64 = 1_048_576;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IndexStats {
    pub files_indexed: usize,
    pub chunks_indexed: usize,
    pub files_skipped: usize,
}

/// Walk `workspace_root`, chunk and embed every UTF-8 text file, and upsert
/// the records into `index`. Paths are stored workspace-relative so the
/// index works wherever the workspace is mounted. Hidden entries, build
/// directories, binary files, and oversized files are skipped; the walk
/// order is sorted, so re-indexing an unchanged tree is a no-op sequence of
/// identical upserts.
pub fn index_repository(
    workspace_root: &Path,
    index: &mut dyn IndexBackend,
    embedder: &dyn Embedder,
) -> Result<IndexStats, IndexError> {
    index.check_compatible(embedder)?;
    let mut stats = IndexStats::default();
    let walker = walkdir::WalkDir::new(workspace_root)
        .sort_by_file_name()
        .into_iter()
        .filter_entry(|entry| {
            let name = entry.file_name().to_string_lossy();
            let hidden = name.starts_with('.') && entry.depth() > 0;
            let skipped_dir = entry.file_type().is_dir() && SKIP_DIRS.contains(&name.as_ref());
            !(hidden || skipped_dir)
        });
    for entry in walker {
        let entry = entry.map_err(|e| IndexError::Io {
            path: workspace_root.display().to_string(),
            message: e.to_string(),
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let path = entry.path();
        if entry.metadata().map(|m| m.len() > MAX_FILE_BYTES).unwrap_or(true) {
            stats.files_skipped += 1;
            continue;
        }
        let Ok(text) = std::fs::read_to_string(path) else {
            stats.files_skipped += 1;
            continue;
        };
        let rel: PathBuf = path
            .strip_prefix(workspace_root)
            .expect("walk stays under root")
            .to_path_buf();
        stats.files_indexed += 1;
        for chunk in chunk_source(&rel, &text) {
            index.upsert(ChunkRecord::from_chunk(&chunk, embedder))?;
            stats.chunks_indexed += 1;
        }
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(root: &Path, rel: &str, text: &[u8]) {
        let full = root.join(rel);
        std::fs::create_dir_all(full.parent().unwrap()).unwrap();
        std::fs::write(full, text).unwrap();
    }

    #[test]
    fn indexes_code_skips_binaries_and_build_dirs() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "src/lib.rs", b"pub fn live() -> u32 {\n    1\n}\n");
        write(dir.path(), "README.md", b"# readme\n");
        write(dir.path(), "logo.bin", &[0u8, 159, 146, 150]);
        write(dir.path(), "target/debug/out.rs", b"fn ignored() {}\n");
        write(dir.path(), "node_modules/pkg/index.js", b"module.exports = 1;\n");
        write(dir.path(), ".git/config", b"[core]\n");
        write(dir.path(), ".hidden.rs", b"fn hidden() {}\n");

        let mut index = MemoryIndex::new(&NgramEmbedder);
        let stats = index_repository(dir.path(), &mut index, &NgramEmbedder).unwrap();
        assert_eq!(stats.files_indexed, 2);
        assert_eq!(stats.files_skipped, 1);
        assert_eq!(stats.chunks_indexed as usize, index.count());

        let paths: Vec<String> =
            index.records().map(|r| r.path.to_string_lossy().into_owned()).collect();
        assert!(paths.contains(&"src/lib.rs".to_string()));
        assert!(paths.contains(&"README.md".to_string()));
        assert!(paths.iter().all(|p| !p.contains("target") && !p.contains("node_modules")));
        assert!(paths.iter().all(|p| !p.starts_with('.')), "hidden files indexed: {paths:?}");
    }

    #[test]
    fn reindexing_unchanged_tree_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "a.rs", b"pub fn a() {}\npub fn b() {}\n");
        let mut index = MemoryIndex::new(&NgramEmbedder);
        index_repository(dir.path(), &mut index, &NgramEmbedder).unwrap();
        let before: Vec<ChunkRecord> = index.records().cloned().collect();
        index_repository(dir.path(), &mut index, &NgramEmbedder).unwrap();
        let after: Vec<ChunkRecord> = index.records().cloned().collect();
        assert_eq!(before, after);
    }

    #[test]
    fn incompatible_embedder_is_rejected_up_front() {
        let dir = tempfile::tempdir().unwrap();
        let mut index = MemoryIndex::new(&TokenEmbedder);
        let err = index_repository(dir.path(), &mut index, &NgramEmbedder).unwrap_err();
        assert!(matches!(err, IndexError::EmbedderMismatch { .. }));
    }

    #[test]
    fn end_to_end_query_over_indexed_tree() {
        let dir = tempfile::tempdir().unwrap();
        write(
            dir.path(),
            "src/serialize.rs",
            b"pub fn serialize_block(block: &Block) -> String {\n    to_json(block)\n}\n",
        );
        write(
            dir.path(),
            "src/net.rs",
            b"pub fn open_socket(port: u16) -> Socket {\n    Socket::bind(port)\n}\n",
        );
        let mut index = MemoryIndex::new(&NgramEmbedder);
        index_repository(dir.path(), &mut index, &NgramEmbedder).unwrap();
        let query = RetrievalQuery::new("serialize_block Block json").with_k(1);
        let hits = query_index(dir.path(), &index, &NgramEmbedder, &query).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].path, PathBuf::from("src/serialize.rs"));
    }
}
