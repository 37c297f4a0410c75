//! Intent translation and planning: the two provider calls that turn a
//! free-form request into a validated [`TaskSpec`] and a role-assigned
//! [`Plan`].
//!
//! Both calls share a discipline: the reply must be one JSON object
//! matching a schema, structural invariants are checked immediately, and a
//! rejected reply earns exactly one retry with the rejection reason
//! prepended. A provider that cannot produce a valid structure twice in a
//! row fails the phase — silently accepting a malformed plan would poison
//! every later stage.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::TaskSpec;
use crate::provider::{Provider, ProviderError, ProviderRequest};
use crate::registry::{AgentRegistry, ModelClass};

/// Fixed agent name for the intent-translation call; not a registry
/// profile, since translation happens before any delegation exists.
pub const INTENT_AGENT: &str = "intent-translator";

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("request is empty")]
    EmptyRequest,
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("task spec validation failed after retry: {message}")]
    SpecValidationFailed { message: String },
    #[error("plan validation failed after retry: {message}")]
    PlanValidationFailed { message: String },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    #[default]
    Pending,
    InProgress,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanStep {
    pub id: u32,
    pub description: String,
    /// Registry agent name that will execute this step.
    pub role: String,
    #[serde(default)]
    pub depends_on: Vec<u32>,
    #[serde(default, skip_serializing_if = "is_pending")]
    pub status: StepStatus,
}

fn is_pending(status: &StepStatus) -> bool {
    *status == StepStatus::Pending
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub steps: Vec<PlanStep>,
}

impl Plan {
    /// Structural validation: at least one step, unique ids, dependencies
    /// referencing earlier steps only, every role known to the registry.
    pub fn validate(&self, registry: &AgentRegistry) -> Result<(), String> {
        if self.steps.is_empty() {
            return Err("plan has no steps".into());
        }
        let mut seen: Vec<u32> = Vec::with_capacity(self.steps.len());
        for step in &self.steps {
            if seen.contains(&step.id) {
                return Err(format!("duplicate step id {}", step.id));
            }
            if step.description.trim().is_empty() {
                return Err(format!("step {} has an empty description", step.id));
            }
            if registry.get(&step.role).is_none() {
                return Err(format!(
                    "step {} names unknown role {:?} (known: {})",
                    step.id,
                    step.role,
                    registry.names().join(", ")
                ));
            }
            for dep in &step.depends_on {
                if !seen.contains(dep) {
                    return Err(format!(
                        "step {} depends on {}, which is not an earlier step",
                        step.id, dep
                    ));
                }
            }
            seen.push(step.id);
        }
        Ok(())
    }

    /// One line per step for delegation notes and run summaries.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for step in &self.steps {
            out.push_str(&format!("{}. [{}] {}", step.id, step.role, step.description));
            if !step.depends_on.is_empty() {
                let deps: Vec<String> = step.depends_on.iter().map(|d| d.to_string()).collect();
                out.push_str(&format!(" (after {})", deps.join(",")));
            }
            out.push('\n');
        }
        out
    }
}

/// The reply may wrap its JSON object in prose; take the outermost braces.
fn json_slice(text: &str) -> &str {
    let trimmed = text.trim();
    match (trimmed.find('{'), trimmed.rfind('}')) {
        (Some(start), Some(end)) if start < end => &trimmed[start..=end],
        _ => trimmed,
    }
}

/// Ask, validate, and — on a rejected reply — ask once more with the
/// rejection reason prepended. A provider error on the retry call falls
/// back to reporting the original validation failure: the retry was the
/// provider's chance to do better, not a new obligation on the caller.
pub(crate) fn request_validated<T>(
    provider: &dyn Provider,
    agent: &str,
    model: ModelClass,
    prompt: &str,
    parse: impl Fn(&str) -> Result<T, String>,
) -> Result<T, Result<String, ProviderError>> {
    let first = provider
        .complete(&ProviderRequest::new(agent, model, prompt))
        .map_err(Err)?;
    let failure = match parse(&first.message_text()) {
        Ok(value) => return Ok(value),
        Err(message) => message,
    };
    let retry_prompt = format!(
        "Your previous reply was rejected: {failure}. Respond with exactly one \
         valid JSON object matching the required schema, and nothing else.\n\n{prompt}"
    );
    let second = match provider.complete(&ProviderRequest::new(agent, model, retry_prompt)) {
        Ok(response) => response,
        Err(_) => return Err(Ok(failure)),
    };
    parse(&second.message_text()).map_err(Ok)
}

fn spec_prompt(request: &str) -> String {
    format!(
        "You are an intent translator. Convert the user request below into a \
         structured task specification.\n\
         Respond with one JSON object:\n\
         {{\"title\": string, \"clarified_goal\": string, \"subtasks\": \
         [{{\"id\": int, \"description\": string, \"suggested_role\": string or null, \
         \"target_hints\": [string], \"depends_on\": [int]}}], \
         \"acceptance_checks\": [string], \"search_terms\": [string]}}\n\
         Subtask ids must be unique and depends_on may reference earlier ids only.\n\n\
         User request:\n{request}\n"
    )
}

/// Turn a free-form request into a validated [`TaskSpec`].
pub fn translate_intent(request: &str, provider: &dyn Provider) -> Result<TaskSpec, PlanError> {
    if request.trim().is_empty() {
        return Err(PlanError::EmptyRequest);
    }
    let prompt = spec_prompt(request);
    let parse = |text: &str| -> Result<TaskSpec, String> {
        let spec: TaskSpec = serde_json::from_str(json_slice(text)).map_err(|e| e.to_string())?;
        spec.validate().map_err(|e| e.to_string())?;
        Ok(spec)
    };
    request_validated(provider, INTENT_AGENT, ModelClass::Powerful, &prompt, parse).map_err(
        |failure| match failure {
            Ok(message) => PlanError::SpecValidationFailed { message },
            Err(provider_err) => PlanError::Provider(provider_err),
        },
    )
}

fn plan_prompt(context: &str, registry: &AgentRegistry) -> String {
    let mut roles = String::new();
    for profile in registry.iter() {
        roles.push_str(&format!("- {}: {}\n", profile.name, profile.description));
    }
    format!(
        "{context}\n\
         Available roles:\n{roles}\
         Produce an implementation plan. Respond with one JSON object:\n\
         {{\"steps\": [{{\"id\": int, \"description\": string, \
         \"role\": string, \"depends_on\": [int]}}]}}\n\
         Every role must be one of the listed role names. Step ids must be \
         unique and depends_on may reference earlier ids only.\n"
    )
}

/// Ask the planner for a role-assigned step sequence. `context` is the
/// already-assembled prompt (task spec, knowledge, snippets); this call
/// appends the role list and the reply schema.
pub fn make_plan(
    context: &str,
    registry: &AgentRegistry,
    provider: &dyn Provider,
    planner_agent: &str,
    model: ModelClass,
) -> Result<Plan, PlanError> {
    let prompt = plan_prompt(context, registry);
    let parse = |text: &str| -> Result<Plan, String> {
        let plan: Plan = serde_json::from_str(json_slice(text)).map_err(|e| e.to_string())?;
        plan.validate(registry)?;
        Ok(plan)
    };
    request_validated(provider, planner_agent, model, &prompt, parse).map_err(|failure| {
        match failure {
            Ok(message) => PlanError::PlanValidationFailed { message },
            Err(provider_err) => PlanError::Provider(provider_err),
        }
    })
}
