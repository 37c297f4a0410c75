//! Run transcripts: an append-only JSONL event log plus a verified report.
//!
//! Layout of a transcript file: one header line carrying the run id, one
//! line per event, and one trailing totals line. Events carry a short
//! human-readable payload summary and a SHA-256 digest of the full payload
//! (prompt, response, or tool output), so the log stays small while any
//! replay can still be checked against it byte-for-byte. Paths in payloads
//! are always workspace-relative; with a fixed clock, two identical runs
//! produce identical transcript bytes.

use std::fmt;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Time source for event stamps. The system clock emits milliseconds since
/// the Unix epoch; tests and replays inject a fixed value so transcripts
/// compare byte-identical.
pub trait Clock: Send + Sync {
    fn now(&self) -> String;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> String {
        let millis = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis())
            .unwrap_or(0);
        millis.to_string()
    }
}

#[derive(Debug, Clone)]
pub struct FixedClock {
    value: String,
}

impl FixedClock {
    pub fn at(value: impl Into<String>) -> Self {
        Self { value: value.into() }
    }
}

impl Clock for FixedClock {
    fn now(&self) -> String {
        self.value.clone()
    }
}

/// Stable run identity: first 16 hex digits of SHA-256 over the request and
/// a configuration fingerprint. Same request + same config = same run id.
pub fn derive_run_id(request: &str, config_fingerprint: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(request.as_bytes());
    hasher.update(b"\n");
    hasher.update(config_fingerprint.as_bytes());
    hex::encode(hasher.finalize())[..16].to_string()
}

pub fn payload_digest(payload: &str) -> String {
    hex::encode(Sha256::digest(payload.as_bytes()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    StateEnter,
    ProviderCall,
    ToolCall,
    Lock,
    Note,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            EventKind::StateEnter => "state_enter",
            EventKind::ProviderCall => "provider_call",
            EventKind::ToolCall => "tool_call",
            EventKind::Lock => "lock",
            EventKind::Note => "note",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenDelta {
    #[serde(rename = "in")]
    pub input: usize,
    #[serde(rename = "out")]
    pub output: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub wall_time: String,
    /// Orchestrator state at the moment of emission, e.g. `Edit`.
    pub state: String,
    /// Acting agent, or `orchestrator` for the loop's own events.
    pub agent: String,
    pub kind: EventKind,
    /// Short summary; full content is represented by `digest` only.
    pub payload: String,
    pub digest: String,
    pub tokens: TokenDelta,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Totals {
    /// Number of provider calls — the "messages" a run cost.
    pub messages: usize,
    pub input_tokens: usize,
    pub output_tokens: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    run_id: String,
}

#[derive(Debug, Error)]
pub enum TranscriptError {
    #[error("transcript i/o on {path}: {message}")]
    Io { path: String, message: String },
    #[error("malformed transcript at line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("transcript is missing its header line")]
    MissingHeader,
    #[error("transcript is missing its totals line")]
    MissingTotals,
    #[error("stored totals {stored:?} disagree with totals recomputed from events {computed:?}")]
    TotalsMismatch { stored: Totals, computed: Totals },
    #[error("event sequence broken at line {line}: expected seq {expected}, found {found}")]
    BrokenSequence { line: usize, expected: u64, found: u64 },
}

/// Collects events for one run and serializes the final JSONL document.
pub struct TranscriptWriter {
    run_id: String,
    clock: Box<dyn Clock>,
    inner: Mutex<WriterState>,
}

struct WriterState {
    events: Vec<Event>,
    next_seq: u64,
    totals: Totals,
}

impl TranscriptWriter {
    pub fn new(run_id: impl Into<String>, clock: Box<dyn Clock>) -> Self {
        Self {
            run_id: run_id.into(),
            clock,
            inner: Mutex::new(WriterState {
                events: Vec::new(),
                next_seq: 1,
                totals: Totals::default(),
            }),
        }
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    /// Append an event. `full_payload` is digested, not stored; `summary`
    /// is what a reader sees. Provider calls feed the totals line.
    pub fn record(
        &self,
        state: &str,
        agent: &str,
        kind: EventKind,
        summary: impl Into<String>,
        full_payload: &str,
        tokens: TokenDelta,
    ) -> u64 {
        let mut inner = self.inner.lock().expect("transcript poisoned");
        let seq = inner.next_seq;
        inner.next_seq += 1;
        if kind == EventKind::ProviderCall {
            inner.totals.messages += 1;
            inner.totals.input_tokens += tokens.input;
            inner.totals.output_tokens += tokens.output;
        }
        inner.events.push(Event {
            seq,
            wall_time: self.clock.now(),
            state: state.to_string(),
            agent: agent.to_string(),
            kind,
            payload: summary.into(),
            digest: payload_digest(full_payload),
            tokens,
        });
        seq
    }

    pub fn totals(&self) -> Totals {
        self.inner.lock().expect("transcript poisoned").totals
    }

    pub fn events(&self) -> Vec<Event> {
        self.inner.lock().expect("transcript poisoned").events.clone()
    }

    /// The complete JSONL document: header, events, totals.
    pub fn render(&self) -> String {
        let inner = self.inner.lock().expect("transcript poisoned");
        let mut out = String::new();
        out.push_str(
            &serde_json::to_string(&Header { run_id: self.run_id.clone() }).expect("header"),
        );
        out.push('\n');
        for event in &inner.events {
            out.push_str(&serde_json::to_string(event).expect("event"));
            out.push('\n');
        }
        out.push_str(&serde_json::to_string(&inner.totals).expect("totals"));
        out.push('\n');
        out
    }

    pub fn write_to(&self, path: &Path) -> Result<(), TranscriptError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| TranscriptError::Io {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
        }
        std::fs::write(path, self.render()).map_err(|e| TranscriptError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranscriptFile {
    pub run_id: String,
    pub events: Vec<Event>,
    pub totals: Totals,
}

pub fn parse_transcript(text: &str) -> Result<TranscriptFile, TranscriptError> {
    let mut lines = text.lines().enumerate();
    let (_, first) = lines.next().ok_or(TranscriptError::MissingHeader)?;
    let header: Header = serde_json::from_str(first)
        .map_err(|e| TranscriptError::Malformed { line: 1, message: format!("header: {e}") })?;

    let mut events: Vec<Event> = Vec::new();
    let mut totals: Option<Totals> = None;
    for (i, line) in lines {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        if totals.is_some() {
            return Err(TranscriptError::Malformed {
                line: line_no,
                message: "content after totals line".into(),
            });
        }
        match serde_json::from_str::<Event>(line) {
            Ok(event) => {
                let expected = events.len() as u64 + 1;
                if event.seq != expected {
                    return Err(TranscriptError::BrokenSequence {
                        line: line_no,
                        expected,
                        found: event.seq,
                    });
                }
                events.push(event);
            }
            Err(_) => {
                let parsed: Totals = serde_json::from_str(line).map_err(|e| {
                    TranscriptError::Malformed {
                        line: line_no,
                        message: format!("neither event nor totals: {e}"),
                    }
                })?;
                totals = Some(parsed);
            }
        }
    }
    Ok(TranscriptFile {
        run_id: header.run_id,
        events,
        totals: totals.ok_or(TranscriptError::MissingTotals)?,
    })
}

pub fn read_transcript(path: &Path) -> Result<TranscriptFile, TranscriptError> {
    let text = std::fs::read_to_string(path).map_err(|e| TranscriptError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_transcript(&text)
}

/// Recompute totals from the provider-call events — an independent pass
/// over the raw data — and require them to equal the stored totals line.
pub fn verify_totals(file: &TranscriptFile) -> Result<Totals, TranscriptError> {
    let mut computed = Totals::default();
    for event in &file.events {
        if event.kind == EventKind::ProviderCall {
            computed.messages += 1;
            computed.input_tokens += event.tokens.input;
            computed.output_tokens += event.tokens.output;
        }
    }
    if computed != file.totals {
        return Err(TranscriptError::TotalsMismatch { stored: file.totals, computed });
    }
    Ok(computed)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AgentStat {
    pub calls: usize,
    pub input_tokens: usize,
    pub output_tokens: usize,
}

/// Human-readable run summary. Totals are verified first, so a report can
/// only be produced from a self-consistent transcript.
pub fn render_report(file: &TranscriptFile) -> Result<String, TranscriptError> {
    let totals = verify_totals(file)?;

    let mut agents: std::collections::BTreeMap<String, AgentStat> = std::collections::BTreeMap::new();
    for event in &file.events {
        if event.kind == EventKind::ProviderCall {
            let stat = agents.entry(event.agent.clone()).or_default();
            stat.calls += 1;
            stat.input_tokens += event.tokens.input;
            stat.output_tokens += event.tokens.output;
        }
    }

    let states: Vec<&str> = file
        .events
        .iter()
        .filter(|e| e.kind == EventKind::StateEnter)
        .map(|e| e.state.as_str())
        .collect();

    // Overhead of running a troupe instead of one agent: total tokens
    // relative to the busiest single agent's tokens.
    let total_tokens = totals.input_tokens + totals.output_tokens;
    let busiest = agents
        .values()
        .map(|s| s.input_tokens + s.output_tokens)
        .max()
        .unwrap_or(0);
    let ratio_line = if busiest == 0 {
        "overhead ratio: n/a".to_string()
    } else {
        format!("overhead ratio: {:.2}x", total_tokens as f64 / busiest as f64)
    };

    let mut out = String::new();
    out.push_str(&format!("run {}\n", file.run_id));
    out.push_str(&format!("messages: {}\n", totals.messages));
    out.push_str(&format!("input tokens: {}\n", totals.input_tokens));
    out.push_str(&format!("output tokens: {}\n", totals.output_tokens));
    out.push_str(&format!("total tokens: {}\n", total_tokens));
    if !states.is_empty() {
        out.push_str(&format!("states: {}\n", states.join(" -> ")));
    }
    if !agents.is_empty() {
        out.push_str("agents:\n");
        for (name, stat) in &agents {
            out.push_str(&format!(
                "  {name}: calls {} in {} out {}\n",
                stat.calls, stat.input_tokens, stat.output_tokens
            ));
        }
    }
    out.push_str(&ratio_line);
    out.push('\n');
    Ok(out)
}

/// Total-token ratio of one run against a baseline run, e.g. `"3.00x"` for
/// a 30k-token run over a 10k-token baseline. Both transcripts are
/// verified first. A zero-token baseline has no meaningful ratio.
pub fn render_comparison(
    file: &TranscriptFile,
    baseline: &TranscriptFile,
) -> Result<String, TranscriptError> {
    let totals = verify_totals(file)?;
    let base = verify_totals(baseline)?;
    let tokens = (totals.input_tokens + totals.output_tokens) as f64;
    let base_tokens = (base.input_tokens + base.output_tokens) as f64;
    if base_tokens == 0.0 {
        return Ok(format!("tokens vs baseline {}: n/a (baseline used 0 tokens)\n", baseline.run_id));
    }
    Ok(format!("tokens vs baseline {}: {:.2}x\n", baseline.run_id, tokens / base_tokens))
}
