//! Review gate: suggestion schema, severity ordering, and the policy that
//! decides whether a suggestion is applied silently, held for human
//! confirmation, or merely noted.

use serde::{Deserialize, Serialize};
use std::fmt;

/// Ordered by escalation; `Blocking` is never auto-applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Minor,
    Major,
    Blocking,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Severity::Minor => "minor",
            Severity::Major => "major",
            Severity::Blocking => "blocking",
        };
        f.write_str(name)
    }
}

/// Highest severity the run may apply without confirmation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoApplyLevel {
    None,
    #[default]
    Minor,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProposedEdit {
    pub find: String,
    pub replace: String,
}

/// One reviewer finding, anchored by a find-text within a file rather
/// than a line number so it survives unrelated edits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewSuggestion {
    pub severity: Severity,
    pub path: String,
    pub anchor: String,
    pub suggestion: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposed_edit: Option<ProposedEdit>,
}

impl ReviewSuggestion {
    pub fn summary(&self) -> String {
        format!("[{}] {}: {}", self.severity, self.path, self.suggestion)
    }
}

#[derive(Deserialize)]
struct ReviewReply {
    suggestions: Vec<ReviewSuggestion>,
}

/// Parse a reviewer reply of the form `{"suggestions": [...]}`.
pub fn parse_review(text: &str) -> Result<Vec<ReviewSuggestion>, String> {
    let trimmed = text.trim();
    let slice = match (trimmed.find('{'), trimmed.rfind('}')) {
        (Some(start), Some(end)) if start < end => &trimmed[start..=end],
        _ => trimmed,
    };
    let reply: ReviewReply = serde_json::from_str(slice).map_err(|e| e.to_string())?;
    for suggestion in &reply.suggestions {
        if suggestion.path.trim().is_empty() {
            return Err("suggestion has an empty path".into());
        }
    }
    Ok(reply.suggestions)
}

/// What the orchestrator does with one suggestion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Disposition {
    /// Minor, carries a concrete edit, and policy allows it: apply silently.
    AutoApply,
    /// Needs explicit confirmation before anything is applied.
    Confirm,
    /// Recorded in the transcript; nothing is changed.
    Note,
}

pub fn disposition(suggestion: &ReviewSuggestion, level: AutoApplyLevel) -> Disposition {
    match suggestion.severity {
        Severity::Minor if suggestion.proposed_edit.is_some() && level == AutoApplyLevel::Minor => {
            Disposition::AutoApply
        }
        Severity::Minor => Disposition::Note,
        Severity::Major | Severity::Blocking => Disposition::Confirm,
    }
}

/// Decides whether a gated suggestion proceeds. The CLI implements this
/// over stdin; tests use the canned gates below.
pub trait ReviewGate {
    fn confirm(&self, suggestion: &ReviewSuggestion) -> bool;
}

/// Accepts every gated suggestion.
pub struct ApproveAll;

impl ReviewGate for ApproveAll {
    fn confirm(&self, _suggestion: &ReviewSuggestion) -> bool {
        true
    }
}

/// Declines every gated suggestion, pausing the run.
pub struct DeclineAll;

impl ReviewGate for DeclineAll {
    fn confirm(&self, _suggestion: &ReviewSuggestion) -> bool {
        false
    }
}
