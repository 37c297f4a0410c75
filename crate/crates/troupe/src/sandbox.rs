//! Workspace-confined tool execution.
//!
//! Every file an agent touches goes through one [`Sandbox`] rooted at the
//! workspace directory. Confinement is enforced twice: lexically (`..` may
//! never walk above the root) and physically (the deepest existing ancestor
//! of the target is canonicalized and must still sit under the canonical
//! root, which defeats symlinks pointing outside). Accepted accesses are
//! recorded in an access log so a whole run can be audited afterwards.

use std::path::{Component, Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ToolError {
    #[error("path {path:?} escapes the workspace")]
    PathEscapesWorkspace { path: String },
    #[error("file not found: {0}")]
    FileNotFound(String),
    #[error("search text not found in {path}")]
    FindNotFound { path: String },
    #[error("search text matches {count} locations in {path}; it must be unique")]
    AmbiguousMatch { path: String, count: usize },
    #[error("command not found: {0}")]
    CommandNotFound(String),
    #[error("invalid pattern {pattern:?}: {message}")]
    BadPattern { pattern: String, message: String },
    #[error("i/o failure on {path}: {message}")]
    Io { path: String, message: String },
    #[error("tool {tool} is not granted to agent {agent}")]
    NotPermitted { tool: String, agent: String },
    #[error("agent {agent} does not hold the write lock on {path}")]
    LockNotHeld { agent: String, path: String },
}

/// Which match a [`Sandbox::tool_edit`] call replaces. `Single` demands a
/// unique match — more than one is an error, the signal that the agent's
/// view of the file is stale or its anchor too weak.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Occurrence {
    #[default]
    Single,
    /// 1-based match index.
    Index(usize),
    All,
}

/// Outcome of a tool that ran to completion. `ok` is false for commands
/// that exited non-zero or timed out; misuse (bad paths, missing files,
/// ambiguous edits) is a [`ToolError`] instead.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolResult {
    pub ok: bool,
    pub output: String,
}

impl ToolResult {
    fn ok(output: impl Into<String>) -> Self {
        Self { ok: true, output: output.into() }
    }
}

static TEMP_COUNTER: AtomicU64 = AtomicU64::new(0);

#[derive(Debug)]
pub struct Sandbox {
    root: PathBuf,
    canonical_root: PathBuf,
    access_log: Mutex<Vec<PathBuf>>,
}

impl Sandbox {
    pub fn new(root: &Path) -> Result<Self, ToolError> {
        let canonical_root = root.canonicalize().map_err(|e| ToolError::Io {
            path: root.display().to_string(),
            message: e.to_string(),
        })?;
        Ok(Self {
            root: root.to_path_buf(),
            canonical_root,
            access_log: Mutex::new(Vec::new()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Every absolute path accepted by confinement so far, in access order.
    pub fn access_log(&self) -> Vec<PathBuf> {
        self.access_log.lock().expect("access log poisoned").clone()
    }

    /// Normalize to a workspace-relative path, rejecting anything that walks
    /// above the root. Absolute paths are accepted only when they already
    /// point under the root.
    pub fn relative_norm(&self, path: &Path) -> Result<PathBuf, ToolError> {
        let escape = || ToolError::PathEscapesWorkspace { path: path.display().to_string() };
        let candidate = if path.is_absolute() {
            match path.strip_prefix(&self.root).or_else(|_| path.strip_prefix(&self.canonical_root)) {
                Ok(rel) => rel.to_path_buf(),
                Err(_) => return Err(escape()),
            }
        } else {
            path.to_path_buf()
        };
        let mut stack: Vec<std::ffi::OsString> = Vec::new();
        for component in candidate.components() {
            match component {
                Component::Normal(part) => stack.push(part.to_os_string()),
                Component::CurDir => {}
                Component::ParentDir => {
                    if stack.pop().is_none() {
                        return Err(escape());
                    }
                }
                Component::RootDir | Component::Prefix(_) => return Err(escape()),
            }
        }
        // A path that normalizes to nothing ("." or "src/..") names the
        // root itself. No tool targets the root as a file, and a write
        // there would stage its temp file in the root's parent — outside
        // the workspace — so the boundary is an escape, not a target.
        if stack.is_empty() {
            return Err(escape());
        }
        Ok(stack.iter().collect())
    }

    /// Full confinement: lexical normalization, then the symlink check on
    /// the deepest existing ancestor. Returns the absolute path to operate
    /// on and logs it.
    fn resolve(&self, path: &Path) -> Result<PathBuf, ToolError> {
        let rel = self.relative_norm(path)?;
        let full = self.root.join(&rel);

        let mut probe = full.clone();
        let existing = loop {
            if probe.exists() || probe == self.root {
                break probe;
            }
            match probe.parent() {
                Some(parent) => probe = parent.to_path_buf(),
                None => break self.root.clone(),
            }
        };
        let canonical = existing.canonicalize().map_err(|e| ToolError::Io {
            path: existing.display().to_string(),
            message: e.to_string(),
        })?;
        if !canonical.starts_with(&self.canonical_root) {
            return Err(ToolError::PathEscapesWorkspace { path: path.display().to_string() });
        }

        self.access_log.lock().expect("access log poisoned").push(full.clone());
        Ok(full)
    }

    pub fn tool_read(&self, path: &Path) -> Result<ToolResult, ToolError> {
        let full = self.resolve(path)?;
        if !full.is_file() {
            return Err(ToolError::FileNotFound(path.display().to_string()));
        }
        let text = std::fs::read_to_string(&full).map_err(|e| ToolError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Ok(ToolResult::ok(text))
    }

    /// Atomic write: the content lands in a temp file in the target
    /// directory and is renamed into place, so readers never observe a
    /// half-written file. Parent directories are created as needed.
    pub fn tool_write(&self, path: &Path, content: &str) -> Result<ToolResult, ToolError> {
        let full = self.resolve(path)?;
        let io = |e: std::io::Error| ToolError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        let parent = full.parent().ok_or_else(|| ToolError::PathEscapesWorkspace {
            path: path.display().to_string(),
        })?;
        std::fs::create_dir_all(parent).map_err(io)?;
        let tmp = parent.join(format!(
            ".{}.tmp-{}",
            full.file_name().map(|n| n.to_string_lossy()).unwrap_or_default(),
            TEMP_COUNTER.fetch_add(1, Ordering::Relaxed),
        ));
        std::fs::write(&tmp, content).map_err(io)?;
        if let Err(e) = std::fs::rename(&tmp, &full) {
            // rename onto an existing directory fails; don't litter the tree
            let _ = std::fs::remove_file(&tmp);
            return Err(io(e));
        }
        Ok(ToolResult::ok(format!("wrote {} bytes", content.len())))
    }

    /// Replace one exact occurrence of `find` with `replace`. Zero matches
    /// and multiple matches are both errors — an ambiguous edit is worse
    /// than no edit.
    pub fn tool_edit(
        &self,
        path: &Path,
        find: &str,
        replace: &str,
        occurrence: Occurrence,
    ) -> Result<ToolResult, ToolError> {
        let current = self.tool_read(path)?.output;
        let count = current.matches(find).count();
        if count == 0 {
            return Err(ToolError::FindNotFound { path: path.display().to_string() });
        }
        let (updated, replaced) = match occurrence {
            Occurrence::Single if count > 1 => {
                return Err(ToolError::AmbiguousMatch { path: path.display().to_string(), count })
            }
            Occurrence::Single => (current.replacen(find, replace, 1), 1),
            Occurrence::All => (current.replace(find, replace), count),
            Occurrence::Index(n) => {
                if n == 0 || n > count {
                    return Err(ToolError::FindNotFound { path: path.display().to_string() });
                }
                // Byte offset of the nth match, then splice around it.
                let mut offset = 0;
                for _ in 1..n {
                    offset += current[offset..].find(find).expect("counted above") + find.len();
                }
                let at = offset + current[offset..].find(find).expect("counted above");
                let mut updated = String::with_capacity(current.len());
                updated.push_str(&current[..at]);
                updated.push_str(replace);
                updated.push_str(&current[at + find.len()..]);
                (updated, 1)
            }
        };
        self.tool_write(path, &updated)?;
        Ok(ToolResult::ok(format!(
            "replaced {replaced} occurrence{} ({} -> {} bytes)",
            if replaced == 1 { "" } else { "s" },
            current.len(),
            updated.len()
        )))
    }

    /// Run `sh -c <command>` with the workspace as working directory.
    /// Exit 127 (shell could not find the command) is a [`ToolError`];
    /// any other failure, including a timeout kill, is `ok: false`.
    pub fn tool_run(&self, command: &str, timeout: Duration) -> Result<ToolResult, ToolError> {
        let mut cmd = Command::new("sh");
        cmd.arg("-c")
            .arg(command)
            .current_dir(&self.root)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped());
        // Own process group, so a timeout kill reaches grandchildren that
        // would otherwise keep the output pipes open.
        #[cfg(unix)]
        {
            use std::os::unix::process::CommandExt;
            cmd.process_group(0);
        }
        let mut child = cmd
            .spawn()
            .map_err(|e| ToolError::Io { path: command.to_string(), message: e.to_string() })?;

        let mut stdout = child.stdout.take().expect("stdout piped");
        let mut stderr = child.stderr.take().expect("stderr piped");
        let out_handle = std::thread::spawn(move || {
            use std::io::Read;
            let mut buf = Vec::new();
            let _ = stdout.read_to_end(&mut buf);
            buf
        });
        let err_handle = std::thread::spawn(move || {
            use std::io::Read;
            let mut buf = Vec::new();
            let _ = stderr.read_to_end(&mut buf);
            buf
        });

        let deadline = Instant::now() + timeout;
        let status = loop {
            match child.try_wait() {
                Ok(Some(status)) => break Some(status),
                Ok(None) => {
                    if Instant::now() >= deadline {
                        #[cfg(unix)]
                        {
                            let _ = Command::new("kill")
                                .args(["-KILL", "--", &format!("-{}", child.id())])
                                .status();
                        }
                        let _ = child.kill();
                        let _ = child.wait();
                        break None;
                    }
                    std::thread::sleep(Duration::from_millis(5));
                }
                Err(e) => {
                    return Err(ToolError::Io { path: command.to_string(), message: e.to_string() })
                }
            }
        };

        let mut output = String::from_utf8_lossy(&out_handle.join().unwrap_or_default()).into_owned();
        let err_text = String::from_utf8_lossy(&err_handle.join().unwrap_or_default()).into_owned();
        if !err_text.is_empty() {
            if !output.is_empty() && !output.ends_with('\n') {
                output.push('\n');
            }
            output.push_str(&err_text);
        }

        match status {
            None => {
                if !output.is_empty() && !output.ends_with('\n') {
                    output.push('\n');
                }
                output.push_str(&format!("command timed out after {}s", timeout.as_secs()));
                Ok(ToolResult { ok: false, output })
            }
            Some(status) if status.code() == Some(127) => {
                Err(ToolError::CommandNotFound(command.to_string()))
            }
            Some(status) => {
                if !status.success() {
                    if !output.is_empty() && !output.ends_with('\n') {
                        output.push('\n');
                    }
                    output.push_str(&format!("exit status: {}", status.code().unwrap_or(-1)));
                }
                Ok(ToolResult { ok: status.success(), output })
            }
        }
    }

    /// Workspace-relative paths matching a glob, sorted, one per line.
    pub fn tool_glob(&self, pattern: &str) -> Result<ToolResult, ToolError> {
        let glob = globset::Glob::new(pattern)
            .map_err(|e| ToolError::BadPattern { pattern: pattern.into(), message: e.to_string() })?
            .compile_matcher();
        let mut matches: Vec<String> = Vec::new();
        for entry in walkdir::WalkDir::new(&self.root).sort_by_file_name() {
            let entry = match entry {
                Ok(e) => e,
                Err(_) => continue,
            };
            if !entry.file_type().is_file() {
                continue;
            }
            let rel = entry.path().strip_prefix(&self.root).expect("walk stays under root");
            if glob.is_match(rel) {
                matches.push(rel.to_string_lossy().replace('\\', "/"));
            }
        }
        matches.sort();
        Ok(ToolResult::ok(matches.join("\n")))
    }

    /// Regex search across UTF-8 files, `path:line:text` per match, capped
    /// to keep pathological patterns from flooding the context.
    pub fn tool_grep(&self, pattern: &str) -> Result<ToolResult, ToolError> {
        const MAX_MATCHES: usize = 200;
        let re = regex::Regex::new(pattern)
            .map_err(|e| ToolError::BadPattern { pattern: pattern.into(), message: e.to_string() })?;
        let mut out = Vec::new();
        'walk: for entry in walkdir::WalkDir::new(&self.root).sort_by_file_name() {
            let entry = match entry {
                Ok(e) => e,
                Err(_) => continue,
            };
            if !entry.file_type().is_file() {
                continue;
            }
            let Ok(text) = std::fs::read_to_string(entry.path()) else { continue };
            let rel = entry.path().strip_prefix(&self.root).expect("walk stays under root");
            for (i, line) in text.lines().enumerate() {
                if re.is_match(line) {
                    out.push(format!("{}:{}:{}", rel.to_string_lossy().replace('\\', "/"), i + 1, line));
                    if out.len() >= MAX_MATCHES {
                        break 'walk;
                    }
                }
            }
        }
        Ok(ToolResult::ok(out.join("\n")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sandbox() -> (tempfile::TempDir, Sandbox) {
        let dir = tempfile::tempdir().unwrap();
        let sb = Sandbox::new(dir.path()).unwrap();
        (dir, sb)
    }

    #[test]
    fn write_read_edit_round_trip() {
        let (_dir, sb) = sandbox();
        sb.tool_write(Path::new("src/app.ts"), "const retries = 3;\n").unwrap();
        let read = sb.tool_read(Path::new("src/app.ts")).unwrap();
        assert_eq!(read.output, "const retries = 3;\n");

        sb.tool_edit(Path::new("src/app.ts"), "retries = 3", "retries = 5", Occurrence::Single)
            .unwrap();
        assert_eq!(sb.tool_read(Path::new("src/app.ts")).unwrap().output, "const retries = 5;\n");
    }

    #[test]
    fn edit_rejects_missing_and_ambiguous_matches() {
        let (_dir, sb) = sandbox();
        sb.tool_write(Path::new("f.txt"), "aa bb aa\n").unwrap();
        assert!(matches!(
            sb.tool_edit(Path::new("f.txt"), "zz", "yy", Occurrence::Single).unwrap_err(),
            ToolError::FindNotFound { .. }
        ));
        assert!(matches!(
            sb.tool_edit(Path::new("f.txt"), "aa", "yy", Occurrence::Single).unwrap_err(),
            ToolError::AmbiguousMatch { count: 2, .. }
        ));
        // file untouched after failed edits
        assert_eq!(sb.tool_read(Path::new("f.txt")).unwrap().output, "aa bb aa\n");
    }

    #[test]
    fn edit_can_target_one_occurrence_or_all() {
        let (_dir, sb) = sandbox();
        sb.tool_write(Path::new("f.txt"), "x x x\n").unwrap();
        let result =
            sb.tool_edit(Path::new("f.txt"), "x", "y", Occurrence::Index(2)).unwrap();
        assert!(result.output.starts_with("replaced 1 occurrence"));
        assert_eq!(sb.tool_read(Path::new("f.txt")).unwrap().output, "x y x\n");

        assert!(matches!(
            sb.tool_edit(Path::new("f.txt"), "x", "y", Occurrence::Index(3)).unwrap_err(),
            ToolError::FindNotFound { .. }
        ));

        let result = sb.tool_edit(Path::new("f.txt"), "x", "z", Occurrence::All).unwrap();
        assert!(result.output.starts_with("replaced 2 occurrences"));
        assert_eq!(sb.tool_read(Path::new("f.txt")).unwrap().output, "z y z\n");
    }

    #[test]
    fn read_of_missing_file_is_not_found() {
        let (_dir, sb) = sandbox();
        assert!(matches!(
            sb.tool_read(Path::new("ghost.txt")).unwrap_err(),
            ToolError::FileNotFound(_)
        ));
    }

    #[test]
    fn parent_traversal_is_rejected() {
        let (_dir, sb) = sandbox();
        for path in ["../outside.txt", "a/../../outside.txt", "/etc/passwd", "..", "a/b/../../../x"] {
            let err = sb.tool_write(Path::new(path), "x").unwrap_err();
            assert!(
                matches!(err, ToolError::PathEscapesWorkspace { .. }),
                "{path} gave {err:?}"
            );
        }
        // interior `..` that stays inside is fine
        sb.tool_write(Path::new("a/b/../c.txt"), "ok").unwrap();
        assert_eq!(sb.tool_read(Path::new("a/c.txt")).unwrap().output, "ok");
    }

    #[cfg(unix)]
    #[test]
    fn symlink_escape_is_rejected() {
        let (dir, sb) = sandbox();
        let outside = tempfile::tempdir().unwrap();
        std::os::unix::fs::symlink(outside.path(), dir.path().join("leak")).unwrap();
        let err = sb.tool_write(Path::new("leak/file.txt"), "x").unwrap_err();
        assert!(matches!(err, ToolError::PathEscapesWorkspace { .. }), "{err:?}");
        assert!(!outside.path().join("file.txt").exists());
    }

    #[test]
    fn run_captures_output_and_exit() {
        let (_dir, sb) = sandbox();
        let ok = sb.tool_run("echo hello && echo oops >&2", Duration::from_secs(10)).unwrap();
        assert!(ok.ok);
        assert!(ok.output.contains("hello"));
        assert!(ok.output.contains("oops"));

        let fail = sb.tool_run("echo broken; exit 3", Duration::from_secs(10)).unwrap();
        assert!(!fail.ok);
        assert!(fail.output.contains("broken"));
        assert!(fail.output.contains("exit status: 3"));

        let missing = sb.tool_run("definitely-not-a-command-xyz", Duration::from_secs(10));
        assert!(matches!(missing.unwrap_err(), ToolError::CommandNotFound(_)));
    }

    #[test]
    fn run_times_out_with_failed_result() {
        let (_dir, sb) = sandbox();
        let started = Instant::now();
        let result = sb.tool_run("sleep 5", Duration::from_millis(200)).unwrap();
        assert!(!result.ok);
        assert!(result.output.contains("timed out"));
        assert!(started.elapsed() < Duration::from_secs(3));
    }

    #[test]
    fn run_uses_workspace_as_cwd() {
        let (_dir, sb) = sandbox();
        sb.tool_write(Path::new("marker.txt"), "present\n").unwrap();
        let result = sb.tool_run("cat marker.txt", Duration::from_secs(10)).unwrap();
        assert!(result.ok);
        assert_eq!(result.output, "present\n");
    }

    #[test]
    fn glob_and_grep_stay_relative() {
        let (_dir, sb) = sandbox();
        sb.tool_write(Path::new("src/a.rs"), "fn alpha() {}\n").unwrap();
        sb.tool_write(Path::new("src/sub/b.rs"), "fn beta() {}\n").unwrap();
        sb.tool_write(Path::new("README.md"), "alpha docs\n").unwrap();

        let globbed = sb.tool_glob("src/**/*.rs").unwrap();
        assert_eq!(globbed.output, "src/a.rs\nsrc/sub/b.rs");

        let grepped = sb.tool_grep(r"fn \w+").unwrap();
        assert_eq!(grepped.output, "src/a.rs:1:fn alpha() {}\nsrc/sub/b.rs:1:fn beta() {}");

        assert!(matches!(sb.tool_grep("(\\").unwrap_err(), ToolError::BadPattern { .. }));
    }

    #[test]
    fn access_log_records_accepted_paths_only() {
        let (dir, sb) = sandbox();
        sb.tool_write(Path::new("kept.txt"), "x").unwrap();
        let _ = sb.tool_write(Path::new("../escape.txt"), "x");
        let log = sb.access_log();
        assert!(log.iter().any(|p| p.ends_with("kept.txt")));
        assert!(log.iter().all(|p| p.starts_with(dir.path())));
        assert!(!log.iter().any(|p| p.to_string_lossy().contains("escape")));
    }

    proptest! {
        #[test]
        fn hostile_paths_never_resolve_outside_root(
            parts in proptest::collection::vec(
                proptest::sample::select(vec![
                    "..", ".", "a", "b", "src", "deep", "...", "..a", "a..", "/", "//etc",
                    "C:", "~", "passwd",
                ]),
                1..8,
            ),
        ) {
            let (dir, sb) = sandbox();
            let path = PathBuf::from(parts.join("/"));
            match sb.resolve(&path) {
                Ok(resolved) => {
                    prop_assert!(resolved.starts_with(dir.path()), "{resolved:?} left the root");
                }
                Err(ToolError::PathEscapesWorkspace { .. }) | Err(ToolError::Io { .. }) => {}
                Err(other) => return Err(TestCaseError::fail(format!("unexpected error {other:?}"))),
            }
            for logged in sb.access_log() {
                prop_assert!(logged.starts_with(dir.path()));
            }
        }
    }
}
