//! Workspace snapshots: capture file state, compute change sets, restore a
//! prior state, and fold a run's edits into one reviewable patch.
//!
//! A snapshot is a map of workspace-relative paths to full text. Capture
//! skips hidden entries, build/output directories, and non-UTF-8 files —
//! the same surface the retrieval indexer sees, so "what changed" and
//! "what is searchable" agree with each other.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::diff::{file_diff, FileOp};
use crate::retrieval::SKIP_DIRS;

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("snapshot i/o on {path}: {message}")]
    Io { path: String, message: String },
}

fn io_err(path: &Path, err: impl std::fmt::Display) -> SnapshotError {
    SnapshotError::Io { path: path.display().to_string(), message: err.to_string() }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Snapshot {
    /// Relative slash-separated path -> full file text.
    pub files: BTreeMap<String, String>,
}

impl Snapshot {
    pub fn capture(root: &Path) -> Result<Self, SnapshotError> {
        let mut files = BTreeMap::new();
        let walker = walkdir::WalkDir::new(root).sort_by_file_name().into_iter();
        for entry in walker.filter_entry(|e| {
            let name = e.file_name().to_string_lossy();
            if e.depth() > 0 && name.starts_with('.') {
                return false;
            }
            !(e.file_type().is_dir() && SKIP_DIRS.contains(&name.as_ref()))
        }) {
            let entry = entry.map_err(|e| io_err(root, e))?;
            if !entry.file_type().is_file() {
                continue;
            }
            let bytes = std::fs::read(entry.path()).map_err(|e| io_err(entry.path(), e))?;
            let Ok(text) = String::from_utf8(bytes) else { continue };
            let rel = entry.path().strip_prefix(root).expect("walk stays under root");
            files.insert(rel.to_string_lossy().replace('\\', "/"), text);
        }
        Ok(Self { files })
    }

    pub fn get(&self, path: &str) -> Option<&str> {
        self.files.get(path).map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Change {
    pub path: String,
    pub op: FileOp,
}

/// Paths that differ between two snapshots, sorted, each tagged with how
/// they changed from `before` to `after`.
pub fn changed_paths(before: &Snapshot, after: &Snapshot) -> Vec<Change> {
    let mut changes = Vec::new();
    for (path, text) in &before.files {
        match after.files.get(path) {
            None => changes.push(Change { path: path.clone(), op: FileOp::Delete }),
            Some(new_text) if new_text != text => {
                changes.push(Change { path: path.clone(), op: FileOp::Modify })
            }
            Some(_) => {}
        }
    }
    for path in after.files.keys() {
        if !before.files.contains_key(path) {
            changes.push(Change { path: path.clone(), op: FileOp::Create });
        }
    }
    changes.sort_by(|a, b| a.path.cmp(&b.path));
    changes
}

/// Put the workspace back into `target` state: rewrite files whose content
/// drifted and delete files the target doesn't know. Directories left empty
/// by deletions are kept; they carry no state a snapshot tracks.
pub fn restore(root: &Path, target: &Snapshot) -> Result<(), SnapshotError> {
    let current = Snapshot::capture(root)?;
    for change in changed_paths(target, &current) {
        let full = root.join(&change.path);
        match change.op {
            // present now but absent from the target
            FileOp::Create => std::fs::remove_file(&full).map_err(|e| io_err(&full, e))?,
            FileOp::Modify | FileOp::Delete => {
                if let Some(parent) = full.parent() {
                    std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
                }
                let text = target.get(&change.path).expect("change came from target");
                std::fs::write(&full, text).map_err(|e| io_err(&full, e))?;
            }
        }
    }
    Ok(())
}

/// One unified patch covering every file that changed between the
/// snapshots, sections in path order. Empty string when nothing changed.
pub fn integrate(before: &Snapshot, after: &Snapshot) -> String {
    let mut patch = String::new();
    for change in changed_paths(before, after) {
        let old_text = before.get(&change.path).unwrap_or("");
        let new_text = after.get(&change.path).unwrap_or("");
        patch.push_str(&file_diff(Path::new(&change.path), old_text, new_text, change.op));
    }
    patch
}
