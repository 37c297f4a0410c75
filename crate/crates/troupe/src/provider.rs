//! Model providers: scripted, recording, and replay.
//!
//! The orchestrator never talks to a model directly; it sends a fully
//! rendered prompt through the [`Provider`] trait and gets back a list of
//! structured [`AgentAction`]s — tool invocations, messages, or a
//! completion marker. Responses are never free text the orchestrator has
//! to parse; a live adapter would own any text-to-action translation.
//!
//! The implementations here are all offline. [`ScriptedProvider`] serves
//! responses from a JSONL fixture matched by agent and substring;
//! [`RecordingProvider`] tees any provider's traffic into the same fixture
//! format keyed by prompt digest; replay mode serves a recording back and
//! fails loudly the moment a prompt diverges from what was recorded.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::context::estimate_tokens;
use crate::registry::ModelClass;

pub const DEFAULT_MAX_OUTPUT_TOKENS: usize = 4096;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderRequest {
    pub agent: String,
    pub model: ModelClass,
    pub prompt: String,
    pub max_output_tokens: usize,
}

impl ProviderRequest {
    pub fn new(agent: impl Into<String>, model: ModelClass, prompt: impl Into<String>) -> Self {
        Self {
            agent: agent.into(),
            model,
            prompt: prompt.into(),
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DoneStatus {
    #[default]
    Complete,
    Blocked,
}

/// One step of an agent's reply. Tool names are matched against the
/// invoking profile's grant by the orchestrator — the provider is never
/// trusted on permissions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AgentAction {
    ToolInvocation {
        tool_name: String,
        #[serde(default)]
        args: BTreeMap<String, String>,
    },
    Message {
        content: String,
    },
    Done {
        #[serde(default)]
        status: DoneStatus,
        #[serde(default)]
        note: String,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input_tokens: usize,
    pub output_tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProviderResponse {
    /// Never empty for a well-formed provider.
    pub actions: Vec<AgentAction>,
    pub usage: TokenUsage,
}

impl ProviderResponse {
    /// All `Message` content joined with newlines — the payload the
    /// planning and synthesis phases parse as structured text.
    pub fn message_text(&self) -> String {
        let parts: Vec<&str> = self
            .actions
            .iter()
            .filter_map(|a| match a {
                AgentAction::Message { content } => Some(content.as_str()),
                _ => None,
            })
            .collect();
        parts.join("\n")
    }
}

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("no scripted response for agent {agent}: {detail}")]
    NoScriptedResponse { agent: String, detail: String },
    #[error("replay diverged for agent {agent}: recorded digest {expected}, live digest {found}")]
    ReplayDivergence { agent: String, expected: String, found: String },
    #[error("replay fixture exhausted; no entry left for agent {agent}")]
    ReplayExhausted { agent: String },
    #[error("invalid fixture at line {line}: {message}")]
    InvalidFixture { line: usize, message: String },
    #[error("fixture i/o on {path}: {message}")]
    Io { path: String, message: String },
}

pub trait Provider: Send + Sync {
    fn complete(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError>;
}

pub fn prompt_digest(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

/// Token usage as the deterministic estimator sees it; every offline
/// provider reports usage this way so replays account identically. Output
/// cost is estimated over the serialized action list.
pub fn estimated_usage(prompt: &str, actions: &[AgentAction]) -> TokenUsage {
    let rendered = serde_json::to_string(actions).expect("actions serialize");
    TokenUsage {
        input_tokens: estimate_tokens(prompt),
        output_tokens: estimate_tokens(&rendered),
    }
}

/// One line of a fixture file. `prompt_contains` and `prompt_digest` are
/// both optional constraints; an entry with neither matches any prompt for
/// its agent. Hand-written fixtures usually use `prompt_contains`;
/// recordings always carry `prompt_digest`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub agent: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_contains: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_digest: Option<String>,
    pub response: Vec<AgentAction>,
}

impl FixtureEntry {
    fn matches(&self, request: &ProviderRequest) -> bool {
        self.agent == request.agent
            && self.prompt_contains.as_ref().is_none_or(|needle| request.prompt.contains(needle))
            && self.prompt_digest.as_ref().is_none_or(|d| *d == prompt_digest(&request.prompt))
    }
}

/// How fixture entries are consumed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchMode {
    /// First unconsumed entry whose constraints hold, scanning from the top
    /// of the fixture. Each entry is served at most once.
    Script,
    /// Entries must be consumed strictly in file order with digests intact —
    /// any drift between the replayed run and the recorded one is an error.
    Replay,
}

#[derive(Debug)]
pub struct ScriptedProvider {
    entries: Vec<FixtureEntry>,
    consumed: Mutex<Vec<bool>>,
    mode: MatchMode,
}

impl ScriptedProvider {
    pub fn new(entries: Vec<FixtureEntry>, mode: MatchMode) -> Self {
        let consumed = Mutex::new(vec![false; entries.len()]);
        Self { entries, consumed, mode }
    }

    pub fn from_jsonl(text: &str, mode: MatchMode) -> Result<Self, ProviderError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: FixtureEntry = serde_json::from_str(line)
                .map_err(|e| ProviderError::InvalidFixture { line: i + 1, message: e.to_string() })?;
            if entry.response.is_empty() {
                return Err(ProviderError::InvalidFixture {
                    line: i + 1,
                    message: "response has no actions".into(),
                });
            }
            entries.push(entry);
        }
        Ok(Self::new(entries, mode))
    }

    pub fn from_path(path: &Path, mode: MatchMode) -> Result<Self, ProviderError> {
        let text = std::fs::read_to_string(path).map_err(|e| ProviderError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_jsonl(&text, mode)
    }

    /// Entries not yet served; a scenario that ends with leftovers scripted
    /// something that never happened.
    pub fn remaining(&self) -> usize {
        self.consumed.lock().expect("consumed poisoned").iter().filter(|&&c| !c).count()
    }
}

impl Provider for ScriptedProvider {
    fn complete(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        let mut consumed = self.consumed.lock().expect("consumed poisoned");
        let idx = match self.mode {
            MatchMode::Script => self
                .entries
                .iter()
                .enumerate()
                .position(|(i, e)| !consumed[i] && e.matches(request)),
            MatchMode::Replay => {
                let next = consumed.iter().position(|&c| !c);
                match next {
                    None => return Err(ProviderError::ReplayExhausted { agent: request.agent.clone() }),
                    Some(i) => {
                        let entry = &self.entries[i];
                        if !entry.matches(request) {
                            return Err(ProviderError::ReplayDivergence {
                                agent: request.agent.clone(),
                                expected: format!(
                                    "{} for agent {}",
                                    entry.prompt_digest.as_deref().unwrap_or("<none>"),
                                    entry.agent
                                ),
                                found: prompt_digest(&request.prompt),
                            });
                        }
                        Some(i)
                    }
                }
            }
        };
        let Some(idx) = idx else {
            let preview: String = request.prompt.chars().take(120).collect();
            return Err(ProviderError::NoScriptedResponse {
                agent: request.agent.clone(),
                detail: format!(
                    "{} unconsumed entries, prompt digest {}, prompt began {preview:?}",
                    consumed.iter().filter(|&&c| !c).count(),
                    prompt_digest(&request.prompt),
                ),
            });
        };
        consumed[idx] = true;
        let actions = self.entries[idx].response.clone();
        Ok(ProviderResponse { usage: estimated_usage(&request.prompt, &actions), actions })
    }
}

/// Tees every successful completion into a JSONL fixture keyed by prompt
/// digest. Recording appends per call, so even an aborted run leaves a
/// replayable prefix.
pub struct RecordingProvider<'a> {
    inner: &'a dyn Provider,
    sink: Mutex<std::fs::File>,
}

impl<'a> RecordingProvider<'a> {
    pub fn create(inner: &'a dyn Provider, path: &Path) -> Result<Self, ProviderError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| ProviderError::Io {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
        }
        let file = std::fs::File::create(path).map_err(|e| ProviderError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Ok(Self { inner, sink: Mutex::new(file) })
    }
}

impl Provider for RecordingProvider<'_> {
    fn complete(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        let response = self.inner.complete(request)?;
        let entry = FixtureEntry {
            agent: request.agent.clone(),
            prompt_contains: None,
            prompt_digest: Some(prompt_digest(&request.prompt)),
            response: response.actions.clone(),
        };
        let line = serde_json::to_string(&entry).expect("fixture entry serializes");
        use std::io::Write;
        let mut sink = self.sink.lock().expect("record sink poisoned");
        writeln!(sink, "{line}").map_err(|e| ProviderError::Io {
            path: "<recording>".into(),
            message: e.to_string(),
        })?;
        Ok(response)
    }
}

/// Shorthand for a one-message response, the shape every planning-phase
/// fixture uses.
pub fn message(content: impl Into<String>) -> Vec<AgentAction> {
    vec![AgentAction::Message { content: content.into() }]
}
