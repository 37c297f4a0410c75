//! External knowledge: corpus search, summary synthesis, and follow-up Q&A.
//!
//! Documents are ranked against the task's search terms with the same
//! deterministic embeddings used for code retrieval. Synthesis is
//! extractive by default — headings become a table of contents, each bullet
//! the heading plus the section's first sentence — and answers are always
//! extractive: a real sentence from a real document, attributed to its
//! doc id, never generated text. A provider can optionally rewrite the TOC
//! bullets, but any provider failure falls back to the extractive path.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::provider::{Provider, ProviderRequest};
use crate::registry::ModelClass;
use crate::retrieval::{cosine, identifier_tokens, Embedder};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Doc {
    /// Stable hash of the origin path — the attribution key.
    pub doc_id: String,
    /// First heading, or the file stem when the doc has none.
    pub title: String,
    /// Corpus-relative path.
    pub origin: PathBuf,
    pub text: String,
}

/// First 12 hex chars of sha256 over the corpus-relative path.
pub fn doc_id_for(origin: &str) -> String {
    hex::encode(Sha256::digest(origin.as_bytes()))[..12].to_string()
}

fn title_for(origin: &Path, text: &str) -> String {
    for line in text.lines() {
        if is_heading_line(line) {
            return heading_text(line);
        }
    }
    origin.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

#[derive(Debug, Error)]
pub enum KnowledgeError {
    #[error("corpus i/o on {path}: {message}")]
    Io { path: String, message: String },
    #[error("corpus has no documents")]
    EmptyCorpus,
    #[error("no document sentence shares any term with the question {question:?}")]
    NoRelevantDoc { question: String },
}

/// Load every non-empty `.md`/`.txt`/`.markdown` file under `dir`, sorted
/// by relative path.
pub fn load_corpus(dir: &Path) -> Result<Vec<Doc>, KnowledgeError> {
    let mut docs = Vec::new();
    for entry in walkdir::WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| KnowledgeError::Io {
            path: dir.display().to_string(),
            message: e.to_string(),
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let ext = entry.path().extension().and_then(|e| e.to_str()).unwrap_or("");
        if !matches!(ext, "md" | "txt" | "markdown") {
            continue;
        }
        let text = std::fs::read_to_string(entry.path()).map_err(|e| KnowledgeError::Io {
            path: entry.path().display().to_string(),
            message: e.to_string(),
        })?;
        if text.trim().is_empty() {
            continue;
        }
        let rel = entry.path().strip_prefix(dir).expect("walk stays under dir");
        let origin_key = rel.to_string_lossy().replace('\\', "/");
        docs.push(Doc {
            doc_id: doc_id_for(&origin_key),
            title: title_for(rel, &text),
            origin: rel.to_path_buf(),
            text,
        });
    }
    docs.sort_by(|a, b| a.origin.cmp(&b.origin));
    Ok(docs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredDoc {
    pub score: f32,
    pub doc: Doc,
}

/// Rank documents by cosine similarity between the embedded search terms
/// (joined with spaces) and each document's embedded text. Equal scores
/// fall back to origin path order.
pub fn search_corpus(
    docs: &[Doc],
    embedder: &dyn Embedder,
    terms: &[String],
    k: usize,
) -> Result<Vec<ScoredDoc>, KnowledgeError> {
    if docs.is_empty() {
        return Err(KnowledgeError::EmptyCorpus);
    }
    let query = embedder.embed(&terms.join(" "));
    let mut scored: Vec<ScoredDoc> = docs
        .iter()
        .map(|doc| ScoredDoc { score: cosine(&query, &embedder.embed(&doc.text)), doc: doc.clone() })
        .collect();
    scored.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.doc.origin.cmp(&b.doc.origin))
    });
    scored.truncate(k);
    Ok(scored)
}

const BULLET_MAX_CHARS: usize = 200;

/// A heading line: markdown `#`-prefixed, or a short line whose letters are
/// all uppercase (classic plain-text section headers).
fn is_heading_line(line: &str) -> bool {
    let trimmed = line.trim();
    if trimmed.starts_with('#') {
        return true;
    }
    trimmed.len() <= 60
        && trimmed.chars().any(|c| c.is_ascii_uppercase())
        && !trimmed.chars().any(|c| c.is_ascii_lowercase())
        && !trimmed.is_empty()
}

fn heading_text(line: &str) -> String {
    line.trim().trim_start_matches('#').trim().to_string()
}

fn normalize_ws(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Byte position just past the first sentence terminator that is followed
/// by whitespace or end of text.
fn find_sentence_end(text: &str) -> Option<usize> {
    let bytes = text.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        if matches!(b, b'.' | b'!' | b'?') {
            match bytes.get(i + 1) {
                None => return Some(i + 1),
                Some(next) if next.is_ascii_whitespace() => return Some(i + 1),
                _ => {}
            }
        }
    }
    None
}

fn first_sentence(text: &str) -> Option<String> {
    let body = text.trim_start();
    let cut = find_sentence_end(body).unwrap_or(body.len());
    let sentence = normalize_ws(&body[..cut]);
    if sentence.is_empty() {
        None
    } else {
        Some(sentence)
    }
}

/// Every sentence of a document, heading lines excluded, blank lines
/// treated as hard breaks, whitespace normalized.
fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    let mut flush = |buf: &mut String| {
        let s = normalize_ws(buf);
        if !s.is_empty() {
            out.push(s);
        }
        buf.clear();
    };
    for line in text.lines() {
        if is_heading_line(line) {
            continue;
        }
        if line.trim().is_empty() {
            flush(&mut current);
            continue;
        }
        current.push_str(line);
        current.push('\n');
        while let Some(cut) = find_sentence_end(&current) {
            let rest = current.split_off(cut);
            flush(&mut current);
            current = rest;
        }
    }
    flush(&mut current);
    out
}

fn truncate_chars(text: &str, max: usize) -> String {
    match text.char_indices().nth(max) {
        Some((idx, _)) => text[..idx].to_string(),
        None => text.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bullet {
    pub doc_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaEntry {
    pub question: String,
    pub answer: String,
    pub doc_id: String,
}

/// The L2 payload: TOC bullets, answered questions, and the source docs
/// kept around so follow-up questions can be answered later.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeSummary {
    /// Bullets grouped by document, document order preserved.
    pub toc: Vec<Bullet>,
    pub qa_pairs: Vec<QaEntry>,
    pub docs: Vec<Doc>,
}

pub enum SummaryMode<'a> {
    Extractive,
    /// Ask a provider to write the TOC bullets; extraction remains the
    /// fallback per document and Q&A is never delegated.
    Provider(&'a dyn Provider),
}

fn extractive_bullets(doc: &Doc) -> Vec<Bullet> {
    // (heading, section text) pairs in order; None heading = preamble.
    let mut sections: Vec<(Option<String>, String)> = Vec::new();
    for line in doc.text.lines() {
        if is_heading_line(line) {
            sections.push((Some(heading_text(line)), String::new()));
        } else {
            if sections.is_empty() {
                sections.push((None, String::new()));
            }
            let body = &mut sections.last_mut().expect("non-empty").1;
            body.push_str(line);
            body.push('\n');
        }
    }

    let mut bullets = Vec::new();
    for (heading, body) in &sections {
        let Some(heading) = heading else { continue };
        let text = match first_sentence(body) {
            Some(sentence) => format!("{heading}: {sentence}"),
            None => heading.clone(),
        };
        bullets.push(Bullet {
            doc_id: doc.doc_id.clone(),
            text: truncate_chars(&text, BULLET_MAX_CHARS),
        });
    }
    if bullets.is_empty() {
        if let Some(sentence) = first_sentence(&doc.text) {
            bullets.push(Bullet {
                doc_id: doc.doc_id.clone(),
                text: truncate_chars(&sentence, BULLET_MAX_CHARS),
            });
        }
    }
    bullets
}

fn provider_bullets(doc: &Doc, provider: &dyn Provider) -> Option<Vec<Bullet>> {
    let prompt = format!(
        "Summarize the following document as a table of contents.\n\
         Respond with one line per section, each starting with \"- \".\n\n\
         Document {} ({}):\n{}",
        doc.doc_id,
        doc.origin.display(),
        doc.text
    );
    let request = ProviderRequest::new("knowledge-synthesizer", ModelClass::Balanced, prompt);
    let response = provider.complete(&request).ok()?;
    let bullets: Vec<Bullet> = response
        .message_text()
        .lines()
        .filter_map(|line| line.trim().strip_prefix("- "))
        .map(|text| Bullet {
            doc_id: doc.doc_id.clone(),
            text: truncate_chars(text.trim(), BULLET_MAX_CHARS),
        })
        .collect();
    if bullets.is_empty() {
        None
    } else {
        Some(bullets)
    }
}

/// Lowercased identifier tokens, the unit of question/sentence overlap.
fn term_set(text: &str) -> std::collections::BTreeSet<String> {
    identifier_tokens(&text.to_lowercase()).into_iter().collect()
}

/// The document sentence sharing the most terms with the question, with
/// ties broken by document order then sentence order. Zero overlap is a
/// miss, not a weak answer.
fn best_answer(docs: &[Doc], question: &str) -> Option<QaEntry> {
    let question_terms = term_set(question);
    if question_terms.is_empty() {
        return None;
    }
    let mut best: Option<(usize, QaEntry)> = None;
    for doc in docs {
        for sentence in split_sentences(&doc.text) {
            let overlap = term_set(&sentence).intersection(&question_terms).count();
            if overlap == 0 {
                continue;
            }
            if best.as_ref().is_none_or(|(b, _)| overlap > *b) {
                best = Some((
                    overlap,
                    QaEntry {
                        question: question.to_string(),
                        answer: sentence,
                        doc_id: doc.doc_id.clone(),
                    },
                ));
            }
        }
    }
    best.map(|(_, entry)| entry)
}

/// Build the knowledge summary for a set of ranked docs and the questions
/// the task raised. Questions with no matching sentence are skipped here —
/// a summary should contain answers, not apologies.
pub fn synthesize(docs: Vec<Doc>, questions: &[String], mode: SummaryMode<'_>) -> KnowledgeSummary {
    let mut toc = Vec::new();
    for doc in &docs {
        let generated = match &mode {
            SummaryMode::Extractive => None,
            SummaryMode::Provider(provider) => provider_bullets(doc, *provider),
        };
        toc.extend(generated.unwrap_or_else(|| extractive_bullets(doc)));
    }
    let qa_pairs = questions.iter().filter_map(|q| best_answer(&docs, q)).collect();
    KnowledgeSummary { toc, qa_pairs, docs }
}

/// Answer one question against the summary's docs, or say precisely that no
/// document matched.
pub fn ask_followup(summary: &KnowledgeSummary, question: &str) -> Result<QaEntry, KnowledgeError> {
    best_answer(&summary.docs, question)
        .ok_or_else(|| KnowledgeError::NoRelevantDoc { question: question.to_string() })
}

/// Render the summary as L2 context text. Bullets are labelled with the
/// origin path (readable), answers with the doc id (stable attribution).
pub fn render_summary(summary: &KnowledgeSummary) -> String {
    let origin_of = |doc_id: &str| {
        summary
            .docs
            .iter()
            .find(|d| d.doc_id == doc_id)
            .map(|d| d.origin.display().to_string())
            .unwrap_or_else(|| doc_id.to_string())
    };
    let mut out = String::new();
    for bullet in &summary.toc {
        out.push_str(&format!("- [{}] {}\n", origin_of(&bullet.doc_id), bullet.text));
    }
    for qa in &summary.qa_pairs {
        out.push_str(&format!("Q: {}\nA: {} ({})\n", qa.question, qa.answer, qa.doc_id));
    }
    out
}
