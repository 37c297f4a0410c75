//! Structure-aware source chunking.
//!
//! Files are split into line spans along top-level construct boundaries:
//! functions, type definitions, and the remainder runs between them. Brace
//! languages (Rust, TypeScript/JavaScript) are tracked with a depth counter
//! that ignores braces inside strings and comments; Python uses column-zero
//! indentation. Anything the tracker cannot balance falls back to a single
//! whole-file chunk, so chunking never fails — and the spans of one file
//! always tile it exactly: sorted, gap-free, overlap-free, full coverage.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChunkKind {
    Function,
    TypeDefinition,
    FileRemainder,
}

impl ChunkKind {
    pub fn name(self) -> &'static str {
        match self {
            ChunkKind::Function => "function",
            ChunkKind::TypeDefinition => "type_definition",
            ChunkKind::FileRemainder => "file_remainder",
        }
    }

    pub fn parse(token: &str) -> Option<Self> {
        match token {
            "function" => Some(Self::Function),
            "type_definition" => Some(Self::TypeDefinition),
            "file_remainder" => Some(Self::FileRemainder),
            _ => None,
        }
    }
}

impl fmt::Display for ChunkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One contiguous line span of a source file. Lines are 1-based and
/// `end_line` is inclusive.
#[derive(Debug, Clone, PartialEq)]
pub struct Chunk {
    pub path: PathBuf,
    pub start_line: usize,
    pub end_line: usize,
    pub kind: ChunkKind,
    pub symbol: Option<String>,
    pub text: String,
}

impl Chunk {
    /// Stable identity: SHA-256 over path and span, so re-indexing an
    /// unchanged file upserts rather than duplicates.
    pub fn id(&self) -> String {
        chunk_id(&self.path, self.start_line, self.end_line)
    }
}

pub fn chunk_id(path: &Path, start_line: usize, end_line: usize) -> String {
    let mut hasher = Sha256::new();
    hasher.update(path.to_string_lossy().as_bytes());
    hasher.update(b"\n");
    hasher.update(start_line.to_string().as_bytes());
    hasher.update(b"\n");
    hasher.update(end_line.to_string().as_bytes());
    hex::encode(hasher.finalize())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Language {
    Rust,
    TypeScript,
    Python,
    Other,
}

impl Language {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("rs") => Language::Rust,
            Some("ts" | "tsx" | "js" | "jsx" | "mjs" | "cjs") => Language::TypeScript,
            Some("py") => Language::Python,
            _ => Language::Other,
        }
    }
}

/// Split `text` into chunks for `path`. Never fails; unparseable structure
/// degrades to one `file_remainder` chunk covering the whole file.
pub fn chunk_source(path: &Path, text: &str) -> Vec<Chunk> {
    let text = text.replace("\r\n", "\n");
    let lines: Vec<&str> = text.lines().collect();
    if lines.is_empty() {
        return Vec::new();
    }
    let spans = match Language::from_path(path) {
        Language::Rust => brace_spans(&lines, rust_starter),
        Language::TypeScript => brace_spans(&lines, ts_starter),
        Language::Python => Some(python_spans(&lines)),
        Language::Other => None,
    };
    let spans = spans.unwrap_or_else(|| vec![(1, lines.len(), ChunkKind::FileRemainder, None)]);
    spans
        .into_iter()
        .map(|(start, end, kind, symbol)| Chunk {
            path: path.to_path_buf(),
            start_line: start,
            end_line: end,
            kind,
            symbol,
            text: lines[start - 1..end].join("\n"),
        })
        .collect()
}

/// Extract the lines `start..=end` (1-based, inclusive) of a file, joined
/// exactly as chunk text is built, so re-reading a span reproduces the text
/// that was embedded at index time.
pub fn read_span(text: &str, start_line: usize, end_line: usize) -> Option<String> {
    let text = text.replace("\r\n", "\n");
    let lines: Vec<&str> = text.lines().collect();
    if start_line == 0 || end_line < start_line || end_line > lines.len() {
        return None;
    }
    Some(lines[start_line - 1..end_line].join("\n"))
}

type Span = (usize, usize, ChunkKind, Option<String>);

/// Per-line brace counter carrying string/comment state across lines.
/// Double-quoted strings, backtick templates, and `/* */` comments may span
/// lines; `//` comments and char literals end within one.
struct BraceScanner {
    in_block_comment: bool,
    in_string: Option<u8>,
}

impl BraceScanner {
    fn new() -> Self {
        Self { in_block_comment: false, in_string: None }
    }

    /// Net brace delta of one line, or `None` when the depth would go
    /// negative mid-line.
    fn line_delta(&mut self, line: &str, depth: i64) -> Option<i64> {
        let bytes = line.as_bytes();
        let mut i = 0;
        let mut delta = 0i64;
        while i < bytes.len() {
            let c = bytes[i];
            if self.in_block_comment {
                if c == b'*' && bytes.get(i + 1) == Some(&b'/') {
                    self.in_block_comment = false;
                    i += 2;
                    continue;
                }
                i += 1;
                continue;
            }
            if let Some(quote) = self.in_string {
                if c == b'\\' {
                    i += 2;
                    continue;
                }
                if c == quote {
                    self.in_string = None;
                }
                i += 1;
                continue;
            }
            match c {
                b'/' if bytes.get(i + 1) == Some(&b'/') => break,
                b'/' if bytes.get(i + 1) == Some(&b'*') => {
                    self.in_block_comment = true;
                    i += 2;
                    continue;
                }
                b'"' | b'`' => self.in_string = Some(c),
                b'\'' => {
                    // Char literal ('x', '\n') vs Rust lifetime ('a): only a
                    // closing quote within the next few bytes makes it a literal.
                    if bytes.get(i + 1) == Some(&b'\\') && bytes.get(i + 3) == Some(&b'\'') {
                        i += 4;
                        continue;
                    }
                    if bytes.get(i + 2) == Some(&b'\'') {
                        i += 3;
                        continue;
                    }
                }
                b'{' => delta += 1,
                b'}' => {
                    delta -= 1;
                    if depth + delta < 0 {
                        return None;
                    }
                }
                _ => {}
            }
            i += 1;
        }
        Some(delta)
    }
}

fn regex(cell: &'static OnceLock<Regex>, pattern: &str) -> &'static Regex {
    cell.get_or_init(|| Regex::new(pattern).expect("static pattern"))
}

fn first_symbol(re: &Regex, line: &str) -> Option<String> {
    re.captures(line).and_then(|c| c.get(1)).map(|m| m.as_str().to_string())
}

fn rust_starter(line: &str) -> Option<(ChunkKind, Option<String>)> {
    static START: OnceLock<Regex> = OnceLock::new();
    static NAMED: OnceLock<Regex> = OnceLock::new();
    static IMPL: OnceLock<Regex> = OnceLock::new();
    static MACRO: OnceLock<Regex> = OnceLock::new();
    let start = regex(
        &START,
        r#"^(?:pub(?:\([^)]*\))?\s+)?(?:default\s+|const\s+|async\s+|unsafe\s+|extern\s+"[^"]*"\s+)*(fn|struct|enum|trait|union|mod|type|impl|macro_rules!)\b"#,
    );
    let keyword = start.captures(line.trim_start())?.get(1)?.as_str();
    let trimmed = line.trim_start();
    match keyword {
        "fn" => {
            let named = regex(&NAMED, r"\bfn\s+([A-Za-z_][A-Za-z0-9_]*)");
            Some((ChunkKind::Function, first_symbol(named, trimmed)))
        }
        "impl" => {
            let head = regex(&IMPL, r"^impl(?:<[^>]*>)?\s*(.*)$");
            let symbol = head.captures(trimmed).and_then(|c| c.get(1)).map(|m| {
                m.as_str().split('{').next().unwrap_or("").trim().to_string()
            });
            Some((ChunkKind::TypeDefinition, symbol.filter(|s| !s.is_empty())))
        }
        "macro_rules!" => {
            let named = regex(&MACRO, r"macro_rules!\s+([A-Za-z_][A-Za-z0-9_]*)");
            Some((ChunkKind::Function, first_symbol(named, trimmed)))
        }
        _ => {
            static OTHER: OnceLock<Regex> = OnceLock::new();
            let named = regex(
                &OTHER,
                r"\b(?:struct|enum|trait|union|mod|type)\s+([A-Za-z_][A-Za-z0-9_]*)",
            );
            Some((ChunkKind::TypeDefinition, first_symbol(named, trimmed)))
        }
    }
}

fn ts_starter(line: &str) -> Option<(ChunkKind, Option<String>)> {
    static START: OnceLock<Regex> = OnceLock::new();
    static FUNC: OnceLock<Regex> = OnceLock::new();
    static TYPEISH: OnceLock<Regex> = OnceLock::new();
    static BINDING: OnceLock<Regex> = OnceLock::new();
    let start = regex(
        &START,
        r"^(?:export\s+(?:default\s+)?)?(?:declare\s+)?(?:abstract\s+)?(?:async\s+)?(function|class|interface|enum|namespace|type|const|let|var)\b",
    );
    let trimmed = line.trim_start();
    let keyword = start.captures(trimmed)?.get(1)?.as_str();
    match keyword {
        "function" => {
            let named = regex(&FUNC, r"\bfunction\s*\*?\s*([A-Za-z_$][A-Za-z0-9_$]*)");
            Some((ChunkKind::Function, first_symbol(named, trimmed)))
        }
        "class" | "interface" | "enum" | "namespace" | "type" => {
            let named = regex(
                &TYPEISH,
                r"\b(?:class|interface|enum|namespace|type)\s+([A-Za-z_$][A-Za-z0-9_$]*)",
            );
            Some((ChunkKind::TypeDefinition, first_symbol(named, trimmed)))
        }
        // Bindings count only when they hold an arrow function.
        _ if trimmed.contains("=>") => {
            let named = regex(&BINDING, r"\b(?:const|let|var)\s+([A-Za-z_$][A-Za-z0-9_$]*)");
            Some((ChunkKind::Function, first_symbol(named, trimmed)))
        }
        _ => None,
    }
}

/// Walk a brace-language file. Construct starters fire only at depth zero;
/// a construct ends when its braces rebalance, or at the first depth-zero
/// `;` if no brace was opened. Returns `None` when braces never balance.
fn brace_spans(
    lines: &[&str],
    starter: fn(&str) -> Option<(ChunkKind, Option<String>)>,
) -> Option<Vec<Span>> {
    struct Open {
        start: usize,
        kind: ChunkKind,
        symbol: Option<String>,
        entered_body: bool,
    }

    let mut scanner = BraceScanner::new();
    let mut depth = 0i64;
    let mut spans: Vec<Span> = Vec::new();
    let mut remainder_start: Option<usize> = None;
    let mut open: Option<Open> = None;

    for (i, raw) in lines.iter().enumerate() {
        let line_no = i + 1;
        let code_line = !scanner.in_block_comment && scanner.in_string.is_none();
        if open.is_none() && depth == 0 && code_line {
            if let Some((kind, symbol)) = starter(raw) {
                if let Some(start) = remainder_start.take() {
                    spans.push((start, line_no - 1, ChunkKind::FileRemainder, None));
                }
                open = Some(Open { start: line_no, kind, symbol, entered_body: false });
            }
        }
        if open.is_none() && remainder_start.is_none() {
            remainder_start = Some(line_no);
        }

        let delta = scanner.line_delta(raw, depth)?;
        let saw_brace = delta != 0 || raw.contains('{');
        depth += delta;
        if depth < 0 {
            return None;
        }

        if let Some(ref mut o) = open {
            if saw_brace && depth > 0 {
                o.entered_body = true;
            }
            let balanced_body = (o.entered_body || saw_brace) && depth == 0;
            let bodiless_end = !o.entered_body && !saw_brace && depth == 0
                && strip_line_comment(raw).trim_end().ends_with(';');
            if balanced_body || bodiless_end {
                let o = open.take().unwrap();
                spans.push((o.start, line_no, o.kind, o.symbol));
            }
        }
    }

    if open.is_some() || depth != 0 {
        return None;
    }
    if let Some(start) = remainder_start {
        spans.push((start, lines.len(), ChunkKind::FileRemainder, None));
    }
    Some(spans)
}

fn strip_line_comment(line: &str) -> &str {
    match line.find("//") {
        Some(pos) => &line[..pos],
        None => line,
    }
}

/// Column-zero `def`/`class` blocks; a block owns every following line that
/// is blank or indented, up to the next column-zero statement.
fn python_spans(lines: &[&str]) -> Vec<Span> {
    static DEF: OnceLock<Regex> = OnceLock::new();
    static CLASS: OnceLock<Regex> = OnceLock::new();
    let def = regex(&DEF, r"^(?:async\s+)?def\s+([A-Za-z_][A-Za-z0-9_]*)");
    let class = regex(&CLASS, r"^class\s+([A-Za-z_][A-Za-z0-9_]*)");

    let mut spans: Vec<Span> = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        let line = lines[i];
        let starter = if let Some(sym) = first_symbol(def, line) {
            Some((ChunkKind::Function, Some(sym)))
        } else {
            first_symbol(class, line).map(|sym| (ChunkKind::TypeDefinition, Some(sym)))
        };
        match starter {
            Some((kind, symbol)) => {
                let start = i + 1;
                i += 1;
                while i < lines.len() {
                    let l = lines[i];
                    if l.trim().is_empty() || l.starts_with(' ') || l.starts_with('\t') {
                        i += 1;
                    } else {
                        break;
                    }
                }
                spans.push((start, i, kind, symbol));
            }
            None => {
                let start = i + 1;
                i += 1;
                while i < lines.len() {
                    let l = lines[i];
                    if def.is_match(l) || class.is_match(l) {
                        break;
                    }
                    i += 1;
                }
                spans.push((start, i, ChunkKind::FileRemainder, None));
            }
        }
    }
    spans
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn assert_tiles(chunks: &[Chunk], line_count: usize) {
        if line_count == 0 {
            assert!(chunks.is_empty());
            return;
        }
        assert!(!chunks.is_empty());
        assert_eq!(chunks[0].start_line, 1);
        assert_eq!(chunks.last().unwrap().end_line, line_count);
        for pair in chunks.windows(2) {
            assert_eq!(
                pair[1].start_line,
                pair[0].end_line + 1,
                "gap or overlap between {:?} and {:?}",
                pair[0],
                pair[1]
            );
        }
        for c in chunks {
            assert!(c.start_line <= c.end_line);
        }
    }

    #[test]
    fn rust_functions_types_and_remainder() {
        let src = "\
use std::fmt;

/// Doc comment stays in the remainder.
pub fn alpha(x: u32) -> u32 {
    let s = \"}{ not braces\";
    x + s.len() as u32
}

pub struct Config {
    pub retries: u32,
}

impl Config {
    pub fn new() -> Self {
        Self { retries: 2 }
    }
}

pub type Alias = Vec<u8>;
";
        let chunks = chunk_source(Path::new("src/config.rs"), src);
        assert_tiles(&chunks, src.lines().count());
        let kinds: Vec<(ChunkKind, Option<&str>)> =
            chunks.iter().map(|c| (c.kind, c.symbol.as_deref())).collect();
        assert_eq!(
            kinds,
            vec![
                (ChunkKind::FileRemainder, None),
                (ChunkKind::Function, Some("alpha")),
                (ChunkKind::FileRemainder, None),
                (ChunkKind::TypeDefinition, Some("Config")),
                (ChunkKind::FileRemainder, None),
                (ChunkKind::TypeDefinition, Some("Config")),
                (ChunkKind::FileRemainder, None),
                (ChunkKind::TypeDefinition, Some("Alias")),
            ]
        );
        let alpha = &chunks[1];
        assert!(alpha.text.starts_with("pub fn alpha"));
        assert!(alpha.text.ends_with('}'));
    }

    #[test]
    fn nested_items_stay_inside_their_parent() {
        let src = "\
mod helpers {
    pub fn inner() -> u32 {
        1
    }
}
";
        let chunks = chunk_source(Path::new("a.rs"), src);
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].kind, ChunkKind::TypeDefinition);
        assert_eq!(chunks[0].symbol.as_deref(), Some("helpers"));
    }

    #[test]
    fn typescript_arrow_and_interface() {
        let src = "\
import { Registry } from './registry';

export interface BlockOptions {
  label: string;
}

export const renderBlock = (opts: BlockOptions): string => {
  return `<div>${opts.label}</div>`;
};

export function register(r: Registry): void {
  r.add('block', renderBlock);
}
";
        let chunks = chunk_source(Path::new("src/block.ts"), src);
        assert_tiles(&chunks, src.lines().count());
        let by_symbol: Vec<(Option<&str>, ChunkKind)> =
            chunks.iter().map(|c| (c.symbol.as_deref(), c.kind)).collect();
        assert!(by_symbol.contains(&(Some("BlockOptions"), ChunkKind::TypeDefinition)));
        assert!(by_symbol.contains(&(Some("renderBlock"), ChunkKind::Function)));
        assert!(by_symbol.contains(&(Some("register"), ChunkKind::Function)));
    }

    #[test]
    fn python_blocks_by_indentation() {
        let src = "\
import os

def load(path):
    with open(path) as f:
        return f.read()

class Cache:
    def get(self, key):
        return self.data.get(key)

VERSION = '1.0'
";
        let chunks = chunk_source(Path::new("tool.py"), src);
        assert_tiles(&chunks, src.lines().count());
        let symbols: Vec<(Option<&str>, ChunkKind)> =
            chunks.iter().map(|c| (c.symbol.as_deref(), c.kind)).collect();
        assert!(symbols.contains(&(Some("load"), ChunkKind::Function)));
        assert!(symbols.contains(&(Some("Cache"), ChunkKind::TypeDefinition)));
        assert_eq!(chunks.last().unwrap().kind, ChunkKind::FileRemainder);
    }

    #[test]
    fn unbalanced_braces_fall_back_to_whole_file() {
        let src = "fn broken() {\n    let x = 1;\n";
        let chunks = chunk_source(Path::new("broken.rs"), src);
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].kind, ChunkKind::FileRemainder);
        assert_eq!((chunks[0].start_line, chunks[0].end_line), (1, 2));
    }

    #[test]
    fn unknown_extension_is_one_remainder() {
        let src = "key = value\nother = 3\n";
        let chunks = chunk_source(Path::new("config.toml"), src);
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].kind, ChunkKind::FileRemainder);
    }

    #[test]
    fn chunk_id_depends_on_path_and_span() {
        let a = chunk_id(Path::new("a.rs"), 1, 10);
        assert_eq!(a, chunk_id(Path::new("a.rs"), 1, 10));
        assert_ne!(a, chunk_id(Path::new("b.rs"), 1, 10));
        assert_ne!(a, chunk_id(Path::new("a.rs"), 2, 10));
        assert_ne!(a, chunk_id(Path::new("a.rs"), 1, 11));
        assert_eq!(a.len(), 64);
    }

    #[test]
    fn read_span_matches_chunk_text() {
        let src = "line one\nline two\nline three\n";
        let chunks = chunk_source(Path::new("notes.txt"), src);
        for c in &chunks {
            assert_eq!(read_span(src, c.start_line, c.end_line).as_deref(), Some(c.text.as_str()));
        }
        assert_eq!(read_span(src, 2, 3).as_deref(), Some("line two\nline three"));
        assert_eq!(read_span(src, 0, 1), None);
        assert_eq!(read_span(src, 2, 9), None);
    }

    proptest! {
        #[test]
        fn chunks_always_tile_the_file(
            lines in proptest::collection::vec(
                proptest::sample::select(vec![
                    "fn f() {", "}", "{", "struct S;", "let x = 1;", "", "    body();",
                    "def g():", "    pass", "class C {", "// comment", "\"}{\"",
                    "export const h = () => {", "};", "import x;", "*/", "/*",
                ]),
                0..40,
            ),
            ext in proptest::sample::select(vec!["rs", "ts", "py", "txt"]),
        ) {
            let text = lines.join("\n");
            let path = PathBuf::from(format!("f.{ext}"));
            let chunks = chunk_source(&path, &text);
            let line_count = text.lines().count();
            if line_count == 0 {
                prop_assert!(chunks.is_empty());
            } else {
                prop_assert!(!chunks.is_empty());
                prop_assert_eq!(chunks[0].start_line, 1);
                prop_assert_eq!(chunks.last().unwrap().end_line, line_count);
                for pair in chunks.windows(2) {
                    prop_assert_eq!(pair[1].start_line, pair[0].end_line + 1);
                }
                // Text reconstruction: concatenating chunk texts with
                // newlines gives back the (normalized) file.
                let joined: Vec<&str> = chunks.iter().map(|c| c.text.as_str()).collect();
                prop_assert_eq!(joined.join("\n"), text.lines().collect::<Vec<_>>().join("\n"));
            }
        }
    }
}
