//! Unified diffs: generation and strict application.
//!
//! Line-based Myers diff with three lines of context, `a/`–`b/` headers,
//! `/dev/null` for creations and deletions, and `\ No newline at end of
//! file` markers. Application is strict — every context and deletion line
//! must match the target byte-for-byte, newline presence included — so a
//! patch either reproduces exactly the state it was generated against or
//! fails loudly.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

const CONTEXT_LINES: usize = 3;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DiffError {
    #[error("malformed patch at line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("hunk {hunk} does not apply at line {line}: expected {expected:?}, found {found:?}")]
    HunkMismatch { hunk: usize, line: usize, expected: String, found: String },
    #[error("patch contains {found} file sections, expected exactly one")]
    NotSingleFile { found: usize },
}

/// How a file changed; chooses the `/dev/null` side of the header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileOp {
    Create,
    Modify,
    Delete,
}

/// A logical line: text without its terminator, plus whether the terminator
/// was present. Only the last line of a file can lack one, and a final line
/// with and without a newline are distinct for both diffing and matching.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Line<'a> {
    text: &'a str,
    has_newline: bool,
}

fn split_lines(text: &str) -> Vec<Line<'_>> {
    text.split_inclusive('\n')
        .map(|piece| match piece.strip_suffix('\n') {
            Some(stripped) => Line { text: stripped, has_newline: true },
            None => Line { text: piece, has_newline: false },
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
enum El {
    /// Unchanged line, by old-side index.
    Ctx(usize),
    Del(usize),
    Ins(usize),
}

/// Myers O((N+M)·D) shortest edit script over lines.
fn edit_script(old: &[Line<'_>], new: &[Line<'_>]) -> Vec<El> {
    let n = old.len() as isize;
    let m = new.len() as isize;
    let max = n + m;
    if max == 0 {
        return Vec::new();
    }
    let idx = |k: isize| (k + max) as usize;
    let mut v = vec![0isize; (2 * max + 1) as usize];
    let mut trace: Vec<Vec<isize>> = Vec::new();
    let mut final_d = 0;
    'outer: for d in 0..=max {
        trace.push(v.clone());
        let mut k = -d;
        while k <= d {
            let mut x = if k == -d || (k != d && v[idx(k - 1)] < v[idx(k + 1)]) {
                v[idx(k + 1)]
            } else {
                v[idx(k - 1)] + 1
            };
            let mut y = x - k;
            while x < n && y < m && old[x as usize] == new[y as usize] {
                x += 1;
                y += 1;
            }
            v[idx(k)] = x;
            if x >= n && y >= m {
                final_d = d;
                break 'outer;
            }
            k += 2;
        }
    }

    let mut els = Vec::new();
    let (mut x, mut y) = (n, m);
    for d in (1..=final_d).rev() {
        let vv = &trace[d as usize];
        let k = x - y;
        let prev_k = if k == -d || (k != d && vv[idx(k - 1)] < vv[idx(k + 1)]) { k + 1 } else { k - 1 };
        let prev_x = vv[idx(prev_k)];
        let prev_y = prev_x - prev_k;
        while x > prev_x && y > prev_y {
            els.push(El::Ctx((x - 1) as usize));
            x -= 1;
            y -= 1;
        }
        if prev_k == k + 1 {
            els.push(El::Ins((y - 1) as usize));
            y -= 1;
        } else {
            els.push(El::Del((x - 1) as usize));
            x -= 1;
        }
    }
    while x > 0 && y > 0 {
        els.push(El::Ctx((x - 1) as usize));
        x -= 1;
        y -= 1;
    }
    els.reverse();
    els
}

fn push_diff_line(out: &mut String, prefix: char, line: &Line<'_>) {
    out.push(prefix);
    out.push_str(line.text);
    out.push('\n');
    if !line.has_newline {
        out.push_str("\\ No newline at end of file\n");
    }
}

/// Hunk body text for `old` → `new`, or an empty string when they are equal.
fn unified_hunks(old_text: &str, new_text: &str) -> String {
    let old = split_lines(old_text);
    let new = split_lines(new_text);
    let els = edit_script(&old, &new);

    let changes: Vec<usize> = els
        .iter()
        .enumerate()
        .filter(|(_, e)| !matches!(e, El::Ctx(..)))
        .map(|(i, _)| i)
        .collect();
    if changes.is_empty() {
        return String::new();
    }

    // 1-based old/new line numbers at each element.
    let mut numbers = Vec::with_capacity(els.len());
    let (mut old_ln, mut new_ln) = (1usize, 1usize);
    for el in &els {
        numbers.push((old_ln, new_ln));
        match el {
            El::Ctx(..) => {
                old_ln += 1;
                new_ln += 1;
            }
            El::Del(_) => old_ln += 1,
            El::Ins(_) => new_ln += 1,
        }
    }

    // Changes whose intervening context exceeds twice the context width get
    // separate hunks; otherwise the context is shared and they merge.
    let mut groups: Vec<(usize, usize)> = Vec::new();
    let mut group_start = changes[0];
    let mut prev = changes[0];
    for &c in &changes[1..] {
        if c - prev - 1 > 2 * CONTEXT_LINES {
            groups.push((group_start, prev));
            group_start = c;
        }
        prev = c;
    }
    groups.push((group_start, prev));

    let mut out = String::new();
    for (first, last) in groups {
        let start_el = first.saturating_sub(CONTEXT_LINES);
        let end_el = (last + CONTEXT_LINES).min(els.len() - 1);
        let slice = &els[start_el..=end_el];
        let old_count = slice.iter().filter(|e| !matches!(e, El::Ins(_))).count();
        let new_count = slice.iter().filter(|e| !matches!(e, El::Del(_))).count();
        let (old_at, new_at) = numbers[start_el];
        let old_start = if old_count == 0 { old_at - 1 } else { old_at };
        let new_start = if new_count == 0 { new_at - 1 } else { new_at };

        out.push_str("@@ -");
        write_range(&mut out, old_start, old_count);
        out.push_str(" +");
        write_range(&mut out, new_start, new_count);
        out.push_str(" @@\n");
        for el in slice {
            match el {
                El::Ctx(i) => push_diff_line(&mut out, ' ', &old[*i]),
                El::Del(i) => push_diff_line(&mut out, '-', &old[*i]),
                El::Ins(j) => push_diff_line(&mut out, '+', &new[*j]),
            }
        }
    }
    out
}

fn write_range(out: &mut String, start: usize, count: usize) {
    if count == 1 {
        let _ = write!(out, "{start}");
    } else {
        let _ = write!(out, "{start},{count}");
    }
}

/// Full unified diff for one file, headers included. Returns an empty
/// string when a modification changes nothing.
pub fn file_diff(path: &Path, old_text: &str, new_text: &str, op: FileOp) -> String {
    let hunks = unified_hunks(old_text, new_text);
    if hunks.is_empty() && op == FileOp::Modify {
        return String::new();
    }
    let slash = path.to_string_lossy().replace('\\', "/");
    let old_header = match op {
        FileOp::Create => "/dev/null".to_string(),
        _ => format!("a/{slash}"),
    };
    let new_header = match op {
        FileOp::Delete => "/dev/null".to_string(),
        _ => format!("b/{slash}"),
    };
    format!("--- {old_header}\n+++ {new_header}\n{hunks}")
}

#[derive(Debug, Clone, PartialEq)]
pub enum PatchLine {
    Context(String, bool),
    Delete(String, bool),
    Insert(String, bool),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hunk {
    pub old_start: usize,
    pub old_count: usize,
    pub new_start: usize,
    pub new_count: usize,
    pub lines: Vec<PatchLine>,
}

/// One file section of a patch. `None` paths are `/dev/null` sides.
#[derive(Debug, Clone, PartialEq)]
pub struct FilePatch {
    pub old_path: Option<String>,
    pub new_path: Option<String>,
    pub hunks: Vec<Hunk>,
}

impl FilePatch {
    /// The path this section addresses: the new side, falling back to the
    /// old side for deletions.
    pub fn target_path(&self) -> Option<&str> {
        self.new_path.as_deref().or(self.old_path.as_deref())
    }
}

fn parse_header_path(raw: &str) -> Option<String> {
    let raw = raw.trim_end();
    if raw == "/dev/null" {
        return None;
    }
    let stripped = raw.strip_prefix("a/").or_else(|| raw.strip_prefix("b/")).unwrap_or(raw);
    Some(stripped.to_string())
}

fn parse_range(token: &str) -> Option<(usize, usize)> {
    match token.split_once(',') {
        Some((start, count)) => Some((start.parse().ok()?, count.parse().ok()?)),
        None => Some((token.parse().ok()?, 1)),
    }
}

/// Parse a (possibly multi-file) unified diff into file sections.
pub fn parse_patch(text: &str) -> Result<Vec<FilePatch>, DiffError> {
    let mut files: Vec<FilePatch> = Vec::new();
    let mut lines = text.lines().enumerate().peekable();
    while let Some((i, line)) = lines.next() {
        let line_no = i + 1;
        if let Some(old_raw) = line.strip_prefix("--- ") {
            let Some((_, plus)) = lines.next() else {
                return Err(DiffError::Malformed { line: line_no, message: "missing +++ header".into() });
            };
            let Some(new_raw) = plus.strip_prefix("+++ ") else {
                return Err(DiffError::Malformed {
                    line: line_no + 1,
                    message: format!("expected +++ header, found {plus:?}"),
                });
            };
            files.push(FilePatch {
                old_path: parse_header_path(old_raw),
                new_path: parse_header_path(new_raw),
                hunks: Vec::new(),
            });
            continue;
        }
        if let Some(rest) = line.strip_prefix("@@ -") {
            let header_err = || DiffError::Malformed {
                line: line_no,
                message: format!("bad hunk header {line:?}"),
            };
            let (old_part, rest) = rest.split_once(" +").ok_or_else(header_err)?;
            let (new_part, _) = rest.split_once(" @@").ok_or_else(header_err)?;
            let (old_start, old_count) = parse_range(old_part).ok_or_else(header_err)?;
            let (new_start, new_count) = parse_range(new_part).ok_or_else(header_err)?;
            let file = files.last_mut().ok_or_else(|| DiffError::Malformed {
                line: line_no,
                message: "hunk before any file header".into(),
            })?;
            file.hunks.push(Hunk {
                old_start,
                old_count,
                new_start,
                new_count,
                lines: Vec::new(),
            });

            let mut seen_old = 0usize;
            let mut seen_new = 0usize;
            while seen_old < old_count || seen_new < new_count {
                let Some((j, body)) = lines.next() else {
                    return Err(DiffError::Malformed {
                        line: line_no,
                        message: "hunk ended before declared counts were met".into(),
                    });
                };
                let hunk = file.hunks.last_mut().expect("just pushed");
                let (marker, text) = if body.is_empty() {
                    (' ', "")
                } else {
                    let mut chars = body.chars();
                    (chars.next().unwrap(), chars.as_str())
                };
                match marker {
                    ' ' => {
                        hunk.lines.push(PatchLine::Context(text.to_string(), true));
                        seen_old += 1;
                        seen_new += 1;
                    }
                    '-' => {
                        hunk.lines.push(PatchLine::Delete(text.to_string(), true));
                        seen_old += 1;
                    }
                    '+' => {
                        hunk.lines.push(PatchLine::Insert(text.to_string(), true));
                        seen_new += 1;
                    }
                    '\\' => {
                        let flag = match hunk.lines.last_mut() {
                            Some(
                                PatchLine::Context(_, f) | PatchLine::Delete(_, f) | PatchLine::Insert(_, f),
                            ) => f,
                            None => {
                                return Err(DiffError::Malformed {
                                    line: j + 1,
                                    message: "newline marker before any hunk line".into(),
                                })
                            }
                        };
                        *flag = false;
                    }
                    other => {
                        return Err(DiffError::Malformed {
                            line: j + 1,
                            message: format!("unexpected hunk line marker {other:?}"),
                        })
                    }
                }
            }
            // A trailing `\ No newline` after the final counted line.
            if let Some((_, peeked)) = lines.peek() {
                if peeked.starts_with('\\') {
                    let hunk = file.hunks.last_mut().expect("just pushed");
                    if let Some(
                        PatchLine::Context(_, f) | PatchLine::Delete(_, f) | PatchLine::Insert(_, f),
                    ) = hunk.lines.last_mut()
                    {
                        *f = false;
                    }
                    lines.next();
                }
            }
            continue;
        }
        // Tolerate `diff --git`/`index` style prelude lines between sections.
        if line.starts_with("diff ") || line.starts_with("index ") || line.trim().is_empty() {
            continue;
        }
        return Err(DiffError::Malformed {
            line: line_no,
            message: format!("unexpected line outside hunk: {line:?}"),
        });
    }
    Ok(files)
}

/// Apply one parsed file section to `original`, strictly.
pub fn apply_file_patch(original: &str, patch: &FilePatch) -> Result<String, DiffError> {
    let old = split_lines(original);
    let mut out: Vec<(String, bool)> = Vec::new();
    let mut pos = 0usize; // next unconsumed index into `old`

    for (hunk_idx, hunk) in patch.hunks.iter().enumerate() {
        let hunk_no = hunk_idx + 1;
        // Where this hunk starts consuming old lines (0-based).
        let target = if hunk.old_count == 0 { hunk.old_start } else { hunk.old_start - 1 };
        if target < pos {
            return Err(DiffError::Malformed {
                line: 0,
                message: format!("hunk {hunk_no} overlaps the previous hunk"),
            });
        }
        if target > old.len() {
            return Err(DiffError::HunkMismatch {
                hunk: hunk_no,
                line: hunk.old_start,
                expected: "file long enough for hunk".into(),
                found: format!("file has {} lines", old.len()),
            });
        }
        for line in &old[pos..target] {
            out.push((line.text.to_string(), line.has_newline));
        }
        pos = target;

        for pline in &hunk.lines {
            match pline {
                PatchLine::Context(text, has_nl) | PatchLine::Delete(text, has_nl) => {
                    let found = old.get(pos).ok_or_else(|| DiffError::HunkMismatch {
                        hunk: hunk_no,
                        line: pos + 1,
                        expected: text.clone(),
                        found: "<end of file>".into(),
                    })?;
                    if found.text != text || found.has_newline != *has_nl {
                        return Err(DiffError::HunkMismatch {
                            hunk: hunk_no,
                            line: pos + 1,
                            expected: text.clone(),
                            found: found.text.to_string(),
                        });
                    }
                    if matches!(pline, PatchLine::Context(..)) {
                        out.push((text.clone(), *has_nl));
                    }
                    pos += 1;
                }
                PatchLine::Insert(text, has_nl) => {
                    out.push((text.clone(), *has_nl));
                }
            }
        }
    }
    for line in &old[pos..] {
        out.push((line.text.to_string(), line.has_newline));
    }

    let mut result = String::new();
    for (text, has_nl) in out {
        result.push_str(&text);
        if has_nl {
            result.push('\n');
        }
    }
    Ok(result)
}

/// Parse a single-file patch and apply it to `original`.
pub fn apply_patch(original: &str, patch_text: &str) -> Result<String, DiffError> {
    let files = parse_patch(patch_text)?;
    match files.len() {
        1 => apply_file_patch(original, &files[0]),
        0 if patch_text.trim().is_empty() => Ok(original.to_string()),
        n => Err(DiffError::NotSingleFile { found: n }),
    }
}
