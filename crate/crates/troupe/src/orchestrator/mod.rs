//! The run loop: a fixed state machine that takes a free-form request
//! through planning, delegated edits, validation, review, and change-set
//! integration, writing a replayable transcript as it goes.
//!
//! Every phase error lands the run in `Failed` rather than returning an
//! `Err`: once a transcript exists, the transcript is the authority on
//! what happened, and a failure is an outcome, not an exception.

pub mod plan;
pub mod review;

pub use plan::{make_plan, translate_intent, Plan, PlanError, PlanStep, StepStatus, INTENT_AGENT};
pub use review::{
    disposition, parse_review, ApproveAll, AutoApplyLevel, DeclineAll, Disposition, ProposedEdit,
    ReviewGate, ReviewSuggestion, Severity,
};

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::context::{ContextEntry, ContextStack, LayerId, ProjectMemory, TaskSpec};
use crate::diff::{apply_file_patch, parse_patch, FileOp};
use crate::knowledge::{load_corpus, render_summary, search_corpus, synthesize, SummaryMode};
use crate::locks::{FileLockTable, LockError};
use crate::provider::{
    AgentAction, DoneStatus, Provider, ProviderError, ProviderRequest, ProviderResponse,
};
use crate::registry::{AgentProfile, AgentRegistry, RegistryError, ToolKind};
use crate::retrieval::{
    index_repository, query_index, MemoryIndex, NgramEmbedder, RetrievalQuery, SearchHit,
    TokenEmbedder,
};
use crate::sandbox::{Occurrence, Sandbox, ToolError, ToolResult};
use crate::snapshot::{changed_paths, integrate, restore, Snapshot, SnapshotError};
use crate::transcript::{derive_run_id, Clock, EventKind, TokenDelta, TranscriptWriter};

// ---------------------------------------------------------------------------
// State machine

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum State {
    Plan,
    RetrieveContext,
    Delegate,
    Edit,
    Test,
    Review,
    IntegratePR,
    Done,
    Failed,
}

/// The legal forward edges. `Failed` is additionally reachable from every
/// non-terminal state, so it is not listed here.
const TRANSITIONS: &[(State, State)] = &[
    (State::Plan, State::RetrieveContext),
    (State::RetrieveContext, State::Delegate),
    (State::Delegate, State::Edit),
    (State::Edit, State::Test),
    (State::Test, State::Review),
    // test failure with retry budget left: re-delegate the culprit step
    (State::Test, State::Delegate),
    (State::Review, State::IntegratePR),
    // review produced edits to apply before integration
    (State::Review, State::Edit),
    (State::Edit, State::IntegratePR),
    (State::IntegratePR, State::Done),
];

impl State {
    pub const ALL: [State; 9] = [
        State::Plan,
        State::RetrieveContext,
        State::Delegate,
        State::Edit,
        State::Test,
        State::Review,
        State::IntegratePR,
        State::Done,
        State::Failed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            State::Plan => "Plan",
            State::RetrieveContext => "RetrieveContext",
            State::Delegate => "Delegate",
            State::Edit => "Edit",
            State::Test => "Test",
            State::Review => "Review",
            State::IntegratePR => "IntegratePR",
            State::Done => "Done",
            State::Failed => "Failed",
        }
    }

    pub fn parse(name: &str) -> Option<State> {
        State::ALL.into_iter().find(|s| s.name() == name)
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, State::Done | State::Failed)
    }

    pub fn can_transition(from: State, to: State) -> bool {
        if to == State::Failed {
            return !from.is_terminal();
        }
        TRANSITIONS.contains(&(from, to))
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Check that a sequence of state names is a walk the machine could have
/// taken: it starts at `Plan` and every hop is a legal transition.
pub fn validate_state_path(names: &[String]) -> Result<(), String> {
    let mut states = Vec::with_capacity(names.len());
    for name in names {
        states.push(State::parse(name).ok_or_else(|| format!("unknown state {name:?}"))?);
    }
    match states.first() {
        None => return Err("state path is empty".into()),
        Some(State::Plan) => {}
        Some(other) => return Err(format!("runs begin in Plan, not {other}")),
    }
    for pair in states.windows(2) {
        if !State::can_transition(pair[0], pair[1]) {
            return Err(format!("illegal transition {} -> {}", pair[0], pair[1]));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Configuration

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read config {path}: {message}")]
    Io { path: String, message: String },
    #[error("failed to parse config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// How many Test -> Delegate retry loops a run may take.
    pub max_test_retries: u32,
    pub auto_apply_max_severity: AutoApplyLevel,
    pub token_budget_per_agent: usize,
    /// The only non-allowlisted command the Bash tool will run.
    pub test_command: String,
    pub k_retrieval: usize,
    pub agents_dir: PathBuf,
    pub memory_path: PathBuf,
    /// Optional directory of reference documents summarised into L2.
    pub corpus_dir: Option<PathBuf>,
    pub planner_role: String,
    pub reviewer_role: String,
    pub test_timeout_secs: u64,
    /// Per-step ceiling on agent actions; a looping agent hits this, not OOM.
    pub action_cap: u32,
    /// Skip review (with a transcript note) when no reviewer profile exists.
    pub allow_missing_reviewer: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            max_test_retries: 2,
            auto_apply_max_severity: AutoApplyLevel::Minor,
            token_budget_per_agent: 16_384,
            test_command: "true".into(),
            k_retrieval: 5,
            agents_dir: PathBuf::from("agents"),
            memory_path: PathBuf::from("PROJECT.md"),
            corpus_dir: None,
            planner_role: "planner".into(),
            reviewer_role: "code-reviewer".into(),
            test_timeout_secs: 300,
            action_cap: 25,
            allow_missing_reviewer: true,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let config: RunConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.token_budget_per_agent == 0 {
            return Err(ConfigError::Invalid("token_budget_per_agent must be positive".into()));
        }
        if self.k_retrieval == 0 {
            return Err(ConfigError::Invalid("k_retrieval must be positive".into()));
        }
        if self.action_cap == 0 {
            return Err(ConfigError::Invalid("action_cap must be positive".into()));
        }
        if self.test_command.trim().is_empty() {
            return Err(ConfigError::Invalid("test_command must not be empty".into()));
        }
        if self.test_timeout_secs == 0 {
            return Err(ConfigError::Invalid("test_timeout_secs must be positive".into()));
        }
        Ok(())
    }

    /// Stable digest feeding the run id: same request + same config =>
    /// same id, so replayed runs are comparable by construction.
    pub fn fingerprint(&self) -> String {
        let rendered = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(rendered.as_bytes()))[..16].to_string()
    }
}

// ---------------------------------------------------------------------------
// Results

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunOutcome {
    Done,
    Failed,
    /// A gated review suggestion was declined; the workspace was restored
    /// to its pre-review state and the run stopped at Review.
    Paused,
}

impl RunOutcome {
    pub fn exit_code(self) -> i32 {
        match self {
            RunOutcome::Done => 0,
            RunOutcome::Failed => 2,
            RunOutcome::Paused => 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ChangeSet {
    /// Concatenated per-file unified diffs from the pre-run snapshot;
    /// verified to replay byte-exactly before being handed out.
    pub unified_diff: String,
    pub files_touched: Vec<String>,
    pub summary: String,
}

#[derive(Debug)]
pub struct RunResult {
    pub run_id: String,
    pub outcome: RunOutcome,
    pub final_state: State,
    pub state_path: Vec<String>,
    pub task_spec: Option<TaskSpec>,
    pub plan: Option<Plan>,
    pub change_set: Option<ChangeSet>,
    pub failure: Option<String>,
    /// Number of times the test command ran.
    pub test_attempts: u32,
    /// Summaries of review suggestions applied without confirmation.
    pub auto_applied: Vec<String>,
    /// Rendered JSONL transcript (also the replay fixture source).
    pub transcript: String,
}

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Workspace(#[from] ToolError),
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
}

pub struct RunRequest<'a> {
    pub request: &'a str,
    pub root: &'a Path,
    pub config: RunConfig,
    pub provider: &'a dyn Provider,
    pub gate: &'a dyn ReviewGate,
    pub clock: Box<dyn Clock>,
}

// ---------------------------------------------------------------------------
// Transcript plumbing

/// Current state shared between the run loop and the provider wrapper so
/// every event carries the phase it happened in.
struct Tracker<'a> {
    writer: &'a TranscriptWriter,
    current: Mutex<Option<State>>,
    path: Mutex<Vec<State>>,
}

impl<'a> Tracker<'a> {
    fn new(writer: &'a TranscriptWriter) -> Self {
        Self { writer, current: Mutex::new(None), path: Mutex::new(Vec::new()) }
    }

    fn enter(&self, next: State) {
        {
            let mut current = self.current.lock().expect("tracker poisoned");
            match *current {
                Some(prev) => assert!(
                    State::can_transition(prev, next),
                    "orchestrator bug: illegal transition {prev} -> {next}"
                ),
                None => assert_eq!(next, State::Plan, "orchestrator bug: runs begin in Plan"),
            }
            *current = Some(next);
        }
        self.path.lock().expect("tracker poisoned").push(next);
        self.writer.record(
            next.name(),
            "orchestrator",
            EventKind::StateEnter,
            format!("enter {next}"),
            next.name(),
            TokenDelta::default(),
        );
    }

    fn state_name(&self) -> &'static str {
        self.current
            .lock()
            .expect("tracker poisoned")
            .map(State::name)
            .unwrap_or("Init")
    }

    fn names(&self) -> Vec<String> {
        self.path
            .lock()
            .expect("tracker poisoned")
            .iter()
            .map(|s| s.name().to_string())
            .collect()
    }

    fn last(&self) -> Option<State> {
        self.path.lock().expect("tracker poisoned").last().copied()
    }
}

/// Wraps the configured provider so every completion is logged with the
/// state it happened in and its token usage; the totals line is built
/// entirely from these events.
struct LoggingProvider<'a> {
    inner: &'a dyn Provider,
    writer: &'a TranscriptWriter,
    tracker: &'a Tracker<'a>,
}

impl Provider for LoggingProvider<'_> {
    fn complete(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        let response = self.inner.complete(request)?;
        let actions = serde_json::to_string(&response.actions).expect("actions serialize");
        self.writer.record(
            self.tracker.state_name(),
            &request.agent,
            EventKind::ProviderCall,
            format!("{} action(s) from {}", response.actions.len(), request.agent),
            &format!("{}\n---\n{}", request.prompt, actions),
            TokenDelta {
                input: response.usage.input_tokens,
                output: response.usage.output_tokens,
            },
        );
        Ok(response)
    }
}

// ---------------------------------------------------------------------------
// Tool broker

/// Read-only commands the Bash tool may run besides the test command.
pub const READONLY_COMMANDS: &[&str] =
    &["ls", "cat", "head", "tail", "wc", "grep", "find", "pwd", "echo", "true"];

fn tool_kind(name: &str) -> Option<ToolKind> {
    match name.to_ascii_lowercase().as_str() {
        "read" => Some(ToolKind::Read),
        "write" => Some(ToolKind::Write),
        "edit" => Some(ToolKind::Edit),
        "bash" => Some(ToolKind::Bash),
        "grep" => Some(ToolKind::Grep),
        "glob" => Some(ToolKind::Glob),
        _ => None,
    }
}

fn slash(path: &Path) -> String {
    path.to_string_lossy().replace('\\', "/")
}

fn first_token(command: &str) -> &str {
    command.split_whitespace().next().unwrap_or("")
}

fn parse_occurrence(value: &str) -> Result<Occurrence, ToolError> {
    match value {
        "" | "single" => Ok(Occurrence::Single),
        "all" => Ok(Occurrence::All),
        other => other.parse::<usize>().map(Occurrence::Index).map_err(|_| {
            ToolError::BadPattern {
                pattern: other.into(),
                message: "occurrence must be `single`, `all`, or a 1-based index".into(),
            }
        }),
    }
}

/// Mediates every tool invocation an agent makes: profile grants are
/// checked first, writes must hold the path lock, and Bash is narrowed to
/// the configured test command plus [`READONLY_COMMANDS`].
pub struct ToolBroker<'a> {
    sandbox: &'a Sandbox,
    locks: &'a FileLockTable,
    test_command: String,
    test_timeout: Duration,
}

impl<'a> ToolBroker<'a> {
    pub fn new(
        sandbox: &'a Sandbox,
        locks: &'a FileLockTable,
        test_command: impl Into<String>,
        test_timeout: Duration,
    ) -> Self {
        Self { sandbox, locks, test_command: test_command.into(), test_timeout }
    }

    /// Acquire the write lock on `rel` for `agent`. Returns the
    /// normalized path and whether the lock was newly taken (false when
    /// the agent already held it).
    pub fn lock_path(&self, agent: &str, rel: &str) -> Result<(PathBuf, bool), ToolError> {
        let norm = self.sandbox.relative_norm(Path::new(rel))?;
        if self.locks.holder(&norm).as_deref() == Some(agent) {
            return Ok((norm, false));
        }
        self.locks.acquire(&norm, agent).map_err(|e| match e {
            LockError::Conflict { path, holder } => ToolError::LockNotHeld {
                agent: agent.to_string(),
                path: format!("{path} (held by {holder})"),
            },
            LockError::NotHeld { agent, path } => ToolError::LockNotHeld { agent, path },
        })?;
        Ok((norm, true))
    }

    /// Run one tool invocation under the profile's grants. Writes and
    /// edits require the caller to already hold the path lock — a write
    /// without it is rejected, never silently serialized.
    pub fn invoke(
        &self,
        profile: &AgentProfile,
        tool: &str,
        args: &BTreeMap<String, String>,
    ) -> Result<ToolResult, ToolError> {
        let kind = tool_kind(tool).ok_or_else(|| ToolError::NotPermitted {
            tool: tool.to_string(),
            agent: profile.name.clone(),
        })?;
        if !profile.allows(kind) {
            return Err(ToolError::NotPermitted {
                tool: kind.name().to_string(),
                agent: profile.name.clone(),
            });
        }
        let arg = |key: &str| args.get(key).map(String::as_str).unwrap_or("");
        match kind {
            ToolKind::Read => self.sandbox.tool_read(Path::new(arg("path"))),
            ToolKind::Grep => self.sandbox.tool_grep(arg("pattern")),
            ToolKind::Glob => self.sandbox.tool_glob(arg("pattern")),
            ToolKind::Write => {
                self.assert_lock(profile, arg("path"))?;
                self.sandbox.tool_write(Path::new(arg("path")), arg("content"))
            }
            ToolKind::Edit => {
                self.assert_lock(profile, arg("path"))?;
                let occurrence = parse_occurrence(arg("occurrence"))?;
                self.sandbox.tool_edit(Path::new(arg("path")), arg("find"), arg("replace"), occurrence)
            }
            ToolKind::Bash => {
                let command = arg("command");
                if !self.bash_allowed(command) {
                    return Err(ToolError::NotPermitted {
                        tool: format!("bash command {:?}", first_token(command)),
                        agent: profile.name.clone(),
                    });
                }
                self.sandbox.tool_run(command, self.test_timeout)
            }
        }
    }

    /// Run the configured test command with orchestrator privilege.
    pub fn run_test(&self) -> Result<ToolResult, ToolError> {
        self.sandbox.tool_run(&self.test_command, self.test_timeout)
    }

    fn assert_lock(&self, profile: &AgentProfile, rel: &str) -> Result<(), ToolError> {
        let norm = self.sandbox.relative_norm(Path::new(rel))?;
        self.locks.assert_holder(&norm, &profile.name).map_err(|_| ToolError::LockNotHeld {
            agent: profile.name.clone(),
            path: slash(&norm),
        })
    }

    fn bash_allowed(&self, command: &str) -> bool {
        command.trim() == self.test_command.trim()
            || READONLY_COMMANDS.contains(&first_token(command))
    }
}

// ---------------------------------------------------------------------------
// Run environment

fn clip(text: &str, max_chars: usize) -> String {
    let mut out = String::new();
    for (i, c) in text.chars().enumerate() {
        if i == max_chars {
            out.push('…');
            return out;
        }
        out.push(if c == '\n' { ' ' } else { c });
    }
    out
}

struct Env<'a> {
    request: &'a str,
    root: &'a Path,
    config: &'a RunConfig,
    registry: &'a AgentRegistry,
    provider: &'a dyn Provider,
    gate: &'a dyn ReviewGate,
    broker: &'a ToolBroker<'a>,
    writer: &'a TranscriptWriter,
    tracker: &'a Tracker<'a>,
    locks: &'a FileLockTable,
    initial: &'a Snapshot,
}

impl Env<'_> {
    fn note(&self, agent: &str, summary: impl Into<String>, payload: &str) {
        self.writer.record(
            self.tracker.state_name(),
            agent,
            EventKind::Note,
            summary,
            payload,
            TokenDelta::default(),
        );
    }

    fn note_orch(&self, summary: impl Into<String>, payload: &str) {
        self.note("orchestrator", summary, payload);
    }

    fn lock_event(&self, agent: &str, verb: &str, path: &Path) {
        let line = format!("{verb} {}", slash(path));
        self.writer.record(
            self.tracker.state_name(),
            agent,
            EventKind::Lock,
            line.clone(),
            &line,
            TokenDelta::default(),
        );
    }

    fn record_tool(&self, agent: &str, summary: impl Into<String>, payload: &str) {
        self.writer.record(
            self.tracker.state_name(),
            agent,
            EventKind::ToolCall,
            summary,
            payload,
            TokenDelta::default(),
        );
    }

    fn release_agent_locks(&self, agent: &str) {
        for path in self.locks.release_all(agent) {
            self.lock_event(agent, "release", &path);
        }
    }

    /// Execute one tool invocation for an agent loop: lock bookkeeping,
    /// broker dispatch, transcript event, and L5 feedback. Policy
    /// violations fail the step; ordinary tool errors are fed back to the
    /// agent instead.
    fn run_tool(
        &self,
        profile: &AgentProfile,
        tool_name: &str,
        args: &BTreeMap<String, String>,
        stack: &mut ContextStack,
        priority: u32,
        edits: &mut Vec<String>,
    ) -> Result<(), String> {
        let lower = tool_name.to_ascii_lowercase();
        let target = match lower.as_str() {
            "read" | "write" | "edit" => args.get("path").cloned().unwrap_or_default(),
            "grep" | "glob" => args.get("pattern").cloned().unwrap_or_default(),
            "bash" => args.get("command").cloned().unwrap_or_default(),
            _ => String::new(),
        };
        let args_payload = serde_json::to_string(args).expect("args serialize");
        if matches!(lower.as_str(), "write" | "edit") {
            match self.broker.lock_path(&profile.name, args.get("path").map(String::as_str).unwrap_or("")) {
                Ok((norm, true)) => self.lock_event(&profile.name, "acquire", &norm),
                Ok((_, false)) => {}
                Err(err) => {
                    self.record_tool(
                        &profile.name,
                        format!("tool {lower} {}: {err}", clip(&target, 80)),
                        &args_payload,
                    );
                    return Err(err.to_string());
                }
            }
        }
        match self.broker.invoke(profile, &lower, args) {
            Ok(result) => {
                let verdict = if result.ok { "ok" } else { "nonzero" };
                self.record_tool(
                    &profile.name,
                    format!("tool {lower} {}: {verdict}", clip(&target, 80)),
                    &format!("{args_payload}\n---\n{}", result.output),
                );
                if matches!(lower.as_str(), "write" | "edit") {
                    let norm = self
                        .broker
                        .lock_path(&profile.name, args.get("path").map(String::as_str).unwrap_or(""))
                        .map(|(p, _)| slash(&p))
                        .unwrap_or_else(|_| target.clone());
                    if !edits.contains(&norm) {
                        edits.push(norm);
                    }
                }
                stack.add_entry(
                    LayerId::L5,
                    ContextEntry::new(format!("tool:{lower}"), trim_output(&result.output), priority),
                );
                Ok(())
            }
            Err(err) => {
                self.record_tool(
                    &profile.name,
                    format!("tool {lower} {} failed: {err}", clip(&target, 80)),
                    &format!("{args_payload}\n---\n{err}"),
                );
                match err {
                    ToolError::NotPermitted { .. }
                    | ToolError::LockNotHeld { .. }
                    | ToolError::PathEscapesWorkspace { .. } => Err(err.to_string()),
                    recoverable => {
                        stack.add_entry(
                            LayerId::L5,
                            ContextEntry::new(format!("tool-error:{lower}"), recoverable.to_string(), priority),
                        );
                        Ok(())
                    }
                }
            }
        }
    }
}

/// Keep L5 tool feedback bounded; full output always lives in the event
/// payload digest.
fn trim_output(output: &str) -> String {
    const MAX: usize = 4000;
    if output.len() <= MAX {
        return output.to_string();
    }
    let mut cut = MAX;
    while !output.is_char_boundary(cut) {
        cut -= 1;
    }
    format!("{}\n[output truncated]", &output[..cut])
}

// ---------------------------------------------------------------------------
// Step execution

struct StepRun {
    /// Normalized slash paths this step wrote or edited, in first-touch order.
    edits: Vec<String>,
    blocked: Option<String>,
}

#[allow(clippy::too_many_arguments)]
fn execute_step(
    env: &Env,
    spec: &TaskSpec,
    memory: &ProjectMemory,
    knowledge: Option<&str>,
    plan_text: &str,
    step: &PlanStep,
    snippets: &[(String, String)],
    failures: &[String],
) -> Result<StepRun, String> {
    let profile = env.registry.require(&step.role).map_err(|e| e.to_string())?;
    let role_prompt = format!(
        "{}\n\nYou are executing step {} of the plan: {}\nFull plan:\n{}\
         Use tool actions to complete the step, then reply with a done action.",
        profile.system_prompt, step.id, step.description, plan_text
    );
    let mut stack = ContextStack::new(spec, memory);
    if let Some(text) = knowledge {
        stack.add_entry(LayerId::L2, ContextEntry::new("knowledge-summary", text, 1));
    }
    for (i, (tag, content)) in snippets.iter().enumerate() {
        // best hit gets the highest priority so it is dropped last
        let priority = (snippets.len() - i) as u32;
        stack.add_entry(LayerId::L4, ContextEntry::new(tag.clone(), content.clone(), priority));
    }
    for (i, output) in failures.iter().enumerate() {
        stack.add_entry(
            LayerId::L5,
            ContextEntry::new(format!("test-failure-{}", i + 1), output.clone(), (i + 1) as u32),
        );
    }

    let mut actions_used: u32 = 0;
    let mut edits: Vec<String> = Vec::new();
    let result = loop {
        let prompt = match stack.assemble_prompt(&role_prompt, env.config.token_budget_per_agent) {
            Ok(prompt) => prompt,
            Err(err) => break Err(format!("step {}: {err}", step.id)),
        };
        let response =
            match env.provider.complete(&ProviderRequest::new(&profile.name, profile.model, prompt)) {
                Ok(response) => response,
                Err(err) => break Err(format!("step {}: {err}", step.id)),
            };
        let mut done: Option<(DoneStatus, String)> = None;
        let mut failure: Option<String> = None;
        for action in response.actions {
            actions_used += 1;
            if actions_used > env.config.action_cap {
                failure = Some(format!(
                    "step {}: exceeded the action cap of {}",
                    step.id, env.config.action_cap
                ));
                break;
            }
            match action {
                AgentAction::Message { content } => {
                    env.note(&profile.name, format!("message: {}", clip(&content, 96)), &content);
                    stack.add_entry(
                        LayerId::L5,
                        ContextEntry::new("self-note", content, 100 + actions_used),
                    );
                }
                AgentAction::Done { status, note } => {
                    done = Some((status, note));
                    break;
                }
                AgentAction::ToolInvocation { tool_name, args } => {
                    if let Err(reason) = env.run_tool(
                        profile,
                        &tool_name,
                        &args,
                        &mut stack,
                        100 + actions_used,
                        &mut edits,
                    ) {
                        failure = Some(format!("step {}: {reason}", step.id));
                        break;
                    }
                }
            }
        }
        if let Some(reason) = failure {
            break Err(reason);
        }
        match done {
            Some((DoneStatus::Complete, _)) => break Ok(StepRun { edits, blocked: None }),
            Some((DoneStatus::Blocked, note)) => {
                let reason = if note.trim().is_empty() { "no reason given".to_string() } else { note };
                break Ok(StepRun { edits, blocked: Some(reason) });
            }
            // reply carried no done action: ask again with the grown L5
            None => continue,
        }
    };
    env.release_agent_locks(&profile.name);
    result
}

/// Pick the step to re-delegate after a test failure: the most recently
/// executed step whose edited files appear in the failure output, falling
/// back to the last executed step.
fn attribute_failure(output: &str, executed: &[(u32, String, Vec<String>)]) -> Option<(u32, String)> {
    let mut hit = None;
    for (id, role, edits) in executed {
        if edits.iter().any(|path| output.contains(path.as_str())) {
            hit = Some((*id, role.clone()));
        }
    }
    hit.or_else(|| executed.last().map(|(id, role, _)| (*id, role.clone())))
}

// ---------------------------------------------------------------------------
// Review

fn review_changes(
    env: &Env,
    profile: &AgentProfile,
    spec: &TaskSpec,
    memory: &ProjectMemory,
    diff: &str,
) -> Result<Vec<ReviewSuggestion>, String> {
    let role_prompt = format!(
        "{}\n\nReview the unified diff provided in the execution context. \
         Reply with one JSON object: {{\"suggestions\": [{{\"severity\": \
         \"minor\"|\"major\"|\"blocking\", \"path\": string, \"anchor\": string, \
         \"suggestion\": string, \"proposed_edit\": {{\"find\": string, \
         \"replace\": string}} (optional)}}]}}. An empty list approves the change.",
        profile.system_prompt
    );
    let mut stack = ContextStack::new(spec, memory);
    stack.add_entry(LayerId::L5, ContextEntry::new("unified-diff", diff, 1));
    let prompt = stack
        .assemble_prompt(&role_prompt, env.config.token_budget_per_agent)
        .map_err(|e| e.to_string())?;
    let parse = |text: &str| parse_review(text);
    plan::request_validated(env.provider, &profile.name, profile.model, &prompt, parse).map_err(
        |failure| match failure {
            Ok(message) => format!("review reply invalid after retry: {message}"),
            Err(provider_err) => format!("review failed: {provider_err}"),
        },
    )
}

// ---------------------------------------------------------------------------
// The run itself

enum Verdict {
    Done(ChangeSet),
    Paused,
}

struct DriveReport {
    task_spec: Option<TaskSpec>,
    plan: Option<Plan>,
    test_attempts: u32,
    auto_applied: Vec<String>,
    verdict: Result<Verdict, String>,
}

fn op_label(op: FileOp) -> &'static str {
    match op {
        FileOp::Create => "create",
        FileOp::Modify => "modify",
        FileOp::Delete => "delete",
    }
}

/// Re-apply the change set to the pre-run snapshot and require the result
/// to match the workspace byte-for-byte. A diff that does not replay is a
/// bug worth failing the whole run over.
fn verify_replay(initial: &Snapshot, patch_text: &str, target: &Snapshot) -> Result<(), String> {
    let sections = parse_patch(patch_text).map_err(|e| format!("change set replay: {e}"))?;
    let mut rebuilt = initial.clone();
    for section in &sections {
        let path = section
            .target_path()
            .ok_or("change set replay: section without a target path")?
            .to_string();
        let old = initial.get(&path).unwrap_or("");
        let new = apply_file_patch(old, section)
            .map_err(|e| format!("change set replay on {path}: {e}"))?;
        if target.get(&path).is_some() {
            rebuilt.files.insert(path, new);
        } else {
            rebuilt.files.remove(&path);
        }
    }
    if rebuilt != *target {
        return Err("change set replay: rebuilt tree differs from the workspace".into());
    }
    Ok(())
}

fn render_hits(hits: &[SearchHit]) -> Vec<(String, String)> {
    hits.iter()
        .map(|hit| {
            let tag = format!("{}:{}-{}", slash(&hit.path), hit.start_line, hit.end_line);
            (tag, hit.snippet.clone())
        })
        .collect()
}

fn drive(env: &Env) -> DriveReport {
    let mut report = DriveReport {
        task_spec: None,
        plan: None,
        test_attempts: 0,
        auto_applied: Vec::new(),
        verdict: Ok(Verdict::Paused),
    };
    report.verdict = drive_inner(env, &mut report);
    report
}

fn drive_inner(env: &Env, report: &mut DriveReport) -> Result<Verdict, String> {
    // ---- Plan: translate the request, gather knowledge, index, plan ----
    env.tracker.enter(State::Plan);
    env.note_orch(format!("request: {}", clip(env.request, 120)), env.request);

    let spec = translate_intent(env.request, env.provider).map_err(|e| e.to_string())?;
    report.task_spec = Some(spec.clone());
    env.note_orch(
        format!("task spec: {} ({} subtask hint(s))", spec.title, spec.subtasks.len()),
        &spec.render(),
    );

    let memory = ProjectMemory::load(env.root, &env.config.memory_path)
        .map_err(|e| format!("project memory: {e}"))?;

    let knowledge = match &env.config.corpus_dir {
        None => None,
        Some(dir) => {
            let docs = load_corpus(&env.root.join(dir)).map_err(|e| e.to_string())?;
            if docs.is_empty() {
                None
            } else {
                let terms = if spec.search_terms.is_empty() {
                    vec![spec.title.clone()]
                } else {
                    spec.search_terms.clone()
                };
                let ranked = search_corpus(&docs, &TokenEmbedder, &terms, env.config.k_retrieval)
                    .map_err(|e| e.to_string())?;
                let chosen: Vec<_> = ranked.into_iter().map(|scored| scored.doc).collect();
                let summary = synthesize(chosen, &spec.acceptance_checks, SummaryMode::Extractive);
                let text = render_summary(&summary);
                env.note_orch(
                    format!(
                        "knowledge: {} bullet(s), {} answered question(s)",
                        summary.toc.len(),
                        summary.qa_pairs.len()
                    ),
                    &text,
                );
                Some(text)
            }
        }
    };

    let embedder = NgramEmbedder;
    let mut index = MemoryIndex::new(&embedder);
    let stats = index_repository(env.root, &mut index, &embedder).map_err(|e| e.to_string())?;
    env.note_orch(
        format!(
            "indexed {} file(s) into {} chunk(s), {} skipped",
            stats.files_indexed, stats.chunks_indexed, stats.files_skipped
        ),
        "",
    );
    let search = |text: &str| -> Result<Vec<SearchHit>, String> {
        if stats.chunks_indexed == 0 {
            return Ok(Vec::new());
        }
        let query = RetrievalQuery::new(text).with_k(env.config.k_retrieval);
        query_index(env.root, &index, &embedder, &query).map_err(|e| e.to_string())
    };

    let planner = env.registry.require(&env.config.planner_role).map_err(|e| e.to_string())?;
    let plan_query = if spec.search_terms.is_empty() {
        spec.clarified_goal.clone()
    } else {
        spec.search_terms.join(" ")
    };
    let planner_hits = search(&plan_query)?;
    let mut planner_stack = ContextStack::new(&spec, &memory);
    if let Some(text) = &knowledge {
        planner_stack.add_entry(LayerId::L2, ContextEntry::new("knowledge-summary", text.clone(), 1));
    }
    for (i, (tag, content)) in render_hits(&planner_hits).into_iter().enumerate() {
        let priority = (planner_hits.len() - i) as u32;
        planner_stack.add_entry(LayerId::L4, ContextEntry::new(tag, content, priority));
    }
    let planner_context = planner_stack
        .assemble_prompt(&planner.system_prompt, env.config.token_budget_per_agent)
        .map_err(|e| e.to_string())?;
    let plan = make_plan(&planner_context, env.registry, env.provider, &planner.name, planner.model)
        .map_err(|e| e.to_string())?;
    let plan_text = plan.render();
    env.note_orch(format!("plan: {} step(s)", plan.steps.len()), &plan_text);
    report.plan = Some(plan);

    // ---- RetrieveContext: per-step snippets, once per run ----
    env.tracker.enter(State::RetrieveContext);
    let mut step_snippets: BTreeMap<u32, Vec<(String, String)>> = BTreeMap::new();
    {
        let plan = report.plan.as_ref().expect("plan recorded");
        for step in &plan.steps {
            let hits = search(&step.description)?;
            env.note_orch(
                format!("step {}: {} snippet(s) retrieved", step.id, hits.len()),
                &hits.iter().map(|h| slash(&h.path)).collect::<Vec<_>>().join("\n"),
            );
            step_snippets.insert(step.id, render_hits(&hits));
        }
    }

    // ---- Delegate/Edit/Test rounds ----
    let all_ids: Vec<u32> =
        report.plan.as_ref().expect("plan recorded").steps.iter().map(|s| s.id).collect();
    let mut pending = all_ids;
    let mut failures: Vec<String> = Vec::new();
    let mut executed: Vec<(u32, String, Vec<String>)> = Vec::new();
    let mut retries_used: u32 = 0;

    loop {
        env.tracker.enter(State::Delegate);
        for id in &pending {
            let plan = report.plan.as_ref().expect("plan recorded");
            let step = plan.steps.iter().find(|s| s.id == *id).expect("pending step exists");
            env.note_orch(format!("step {} -> {}", step.id, step.role), &step.description);
        }

        env.tracker.enter(State::Edit);
        for id in pending.clone() {
            let step = {
                let plan = report.plan.as_ref().expect("plan recorded");
                let step = plan.steps.iter().find(|s| s.id == id).expect("step exists").clone();
                let unmet = step.depends_on.iter().any(|dep| {
                    plan.steps
                        .iter()
                        .find(|s| s.id == *dep)
                        .map(|s| s.status != StepStatus::Done)
                        .unwrap_or(true)
                });
                if unmet {
                    return Err(format!("step {id} delegated before its dependencies completed"));
                }
                step
            };
            report
                .plan
                .as_mut()
                .expect("plan recorded")
                .steps
                .iter_mut()
                .find(|s| s.id == id)
                .expect("step exists")
                .status = StepStatus::InProgress;
            let snippets = step_snippets.get(&id).cloned().unwrap_or_default();
            let outcome = execute_step(
                env,
                &spec,
                &memory,
                knowledge.as_deref(),
                &plan_text,
                &step,
                &snippets,
                &failures,
            );
            let plan = report.plan.as_mut().expect("plan recorded");
            let slot = plan.steps.iter_mut().find(|s| s.id == id).expect("step exists");
            match outcome {
                Ok(run) if run.blocked.is_none() => {
                    slot.status = StepStatus::Done;
                    executed.push((id, step.role.clone(), run.edits));
                }
                Ok(run) => {
                    slot.status = StepStatus::Failed;
                    return Err(format!(
                        "step {id} blocked: {}",
                        run.blocked.expect("blocked reason")
                    ));
                }
                Err(reason) => {
                    slot.status = StepStatus::Failed;
                    return Err(reason);
                }
            }
        }

        env.tracker.enter(State::Test);
        report.test_attempts += 1;
        let result = env.broker.run_test().map_err(|e| format!("test command: {e}"))?;
        env.record_tool(
            "orchestrator",
            format!(
                "test command `{}`: {}",
                env.config.test_command,
                if result.ok { "pass" } else { "fail" }
            ),
            &result.output,
        );
        if result.ok {
            break;
        }
        failures.push(result.output.clone());
        if retries_used >= env.config.max_test_retries {
            return Err(format!(
                "tests failed on attempt {} and the retry budget ({}) is exhausted; last output:\n{}",
                report.test_attempts, env.config.max_test_retries, result.output
            ));
        }
        retries_used += 1;
        let (culprit, role) =
            attribute_failure(&result.output, &executed).ok_or("tests failed before any step ran")?;
        env.note_orch(
            format!("test failure attributed to step {culprit} ({role}); re-delegating"),
            &result.output,
        );
        pending = vec![culprit];
    }

    // ---- Review ----
    env.tracker.enter(State::Review);
    let pre_review = Snapshot::capture(env.root).map_err(|e| e.to_string())?;
    let work_diff = integrate(env.initial, &pre_review);
    let reviewer = env.registry.get(&env.config.reviewer_role);
    let suggestions = if work_diff.is_empty() {
        env.note_orch("review skipped: workspace unchanged", "");
        Vec::new()
    } else {
        match reviewer {
            Some(profile) => {
                let suggestions = review_changes(env, profile, &spec, &memory, &work_diff)?;
                env.note_orch(format!("review: {} suggestion(s)", suggestions.len()), &work_diff);
                suggestions
            }
            None if env.config.allow_missing_reviewer => {
                env.note_orch(
                    format!(
                        "review skipped: no {:?} profile in the registry",
                        env.config.reviewer_role
                    ),
                    "",
                );
                Vec::new()
            }
            None => {
                return Err(format!(
                    "reviewer profile {:?} is missing and allow_missing_reviewer is off",
                    env.config.reviewer_role
                ))
            }
        }
    };

    let mut to_apply: Vec<(ReviewSuggestion, bool)> = Vec::new();
    for suggestion in &suggestions {
        let payload = serde_json::to_string(suggestion).expect("suggestion serializes");
        match disposition(suggestion, env.config.auto_apply_max_severity) {
            Disposition::Note => {
                env.note_orch(format!("review note: {}", suggestion.summary()), &payload);
            }
            Disposition::AutoApply => {
                env.note_orch(format!("auto-applying: {}", suggestion.summary()), &payload);
                to_apply.push((suggestion.clone(), true));
            }
            Disposition::Confirm => {
                env.note_orch(
                    format!("confirmation required: {}", suggestion.summary()),
                    &payload,
                );
                if env.gate.confirm(suggestion) {
                    env.note_orch(format!("confirmed: {}", suggestion.summary()), &payload);
                    if suggestion.proposed_edit.is_some() {
                        to_apply.push((suggestion.clone(), false));
                    }
                } else {
                    env.note_orch(
                        format!(
                            "declined: {}; restoring pre-review state and pausing",
                            suggestion.summary()
                        ),
                        &payload,
                    );
                    restore(env.root, &pre_review).map_err(|e| e.to_string())?;
                    return Ok(Verdict::Paused);
                }
            }
        }
    }

    if !to_apply.is_empty() {
        let profile = reviewer.expect("suggestions imply a reviewer profile");
        env.tracker.enter(State::Edit);
        for (suggestion, auto) in &to_apply {
            let edit = suggestion.proposed_edit.as_ref().expect("apply requires an edit");
            let mut args = BTreeMap::new();
            args.insert("path".to_string(), suggestion.path.clone());
            args.insert("find".to_string(), edit.find.clone());
            args.insert("replace".to_string(), edit.replace.clone());
            let (norm, fresh) = env
                .broker
                .lock_path(&profile.name, &suggestion.path)
                .map_err(|e| format!("review edit on {}: {e}", suggestion.path))?;
            if fresh {
                env.lock_event(&profile.name, "acquire", &norm);
            }
            let result = env
                .broker
                .invoke(profile, "edit", &args)
                .map_err(|e| format!("review edit on {}: {e}", suggestion.path))?;
            env.record_tool(
                &profile.name,
                format!("tool edit {}: ok", suggestion.path),
                &result.output,
            );
            if *auto {
                report.auto_applied.push(suggestion.summary());
            }
        }
        env.release_agent_locks(&profile.name);
    }

    // ---- IntegratePR ----
    env.tracker.enter(State::IntegratePR);
    let final_snapshot = Snapshot::capture(env.root).map_err(|e| e.to_string())?;
    let unified_diff = integrate(env.initial, &final_snapshot);
    verify_replay(env.initial, &unified_diff, &final_snapshot)?;
    let changes = changed_paths(env.initial, &final_snapshot);
    let files_touched: Vec<String> = changes.iter().map(|c| c.path.clone()).collect();

    let plan = report.plan.as_ref().expect("plan recorded");
    let mut summary = String::new();
    summary.push_str(&format!("# {}\n\n{}\n\nSteps:\n{}", spec.title, spec.clarified_goal, plan.render()));
    summary.push_str("\nFiles changed:\n");
    for change in &changes {
        summary.push_str(&format!("- {} ({})\n", change.path, op_label(change.op)));
    }
    summary.push_str(&format!("\nValidation: {} test run(s)\n", report.test_attempts));
    if !report.auto_applied.is_empty() {
        summary.push_str("Review suggestions auto-applied:\n");
        for line in &report.auto_applied {
            summary.push_str(&format!("- {line}\n"));
        }
    }
    env.note_orch(format!("change set ready: {} file(s)", changes.len()), &unified_diff);

    env.tracker.enter(State::Done);
    Ok(Verdict::Done(ChangeSet { unified_diff, files_touched, summary }))
}

/// Run a task end to end. Setup failures (bad config, unloadable
/// registry, missing workspace) are `Err`; anything after the transcript
/// starts resolves to a `RunResult`, with phase errors recorded as a
/// `Failed` outcome.
pub fn run_task(req: RunRequest<'_>) -> Result<RunResult, OrchestratorError> {
    req.config.validate()?;
    let registry = AgentRegistry::load(&req.root.join(&req.config.agents_dir))?;
    let sandbox = Sandbox::new(req.root)?;
    let initial = Snapshot::capture(req.root)?;
    let locks = FileLockTable::new();
    let run_id = derive_run_id(req.request, &req.config.fingerprint());
    let writer = TranscriptWriter::new(run_id.clone(), req.clock);
    let tracker = Tracker::new(&writer);
    let logging = LoggingProvider { inner: req.provider, writer: &writer, tracker: &tracker };
    let broker = ToolBroker::new(
        &sandbox,
        &locks,
        req.config.test_command.clone(),
        Duration::from_secs(req.config.test_timeout_secs),
    );
    let env = Env {
        request: req.request,
        root: req.root,
        config: &req.config,
        registry: &registry,
        provider: &logging,
        gate: req.gate,
        broker: &broker,
        writer: &writer,
        tracker: &tracker,
        locks: &locks,
        initial: &initial,
    };

    let report = drive(&env);

    // Locks are released at step boundaries; anything still held here is
    // an abandoned step's residue from a failure path. Release with
    // events so the transcript shows a balanced acquire/release history.
    let mut holders: Vec<String> =
        locks.held_paths().into_iter().map(|(_, holder)| holder).collect();
    holders.sort();
    holders.dedup();
    for holder in holders {
        env.release_agent_locks(&holder);
    }

    let (outcome, change_set, failure) = match report.verdict {
        Ok(Verdict::Done(change_set)) => (RunOutcome::Done, Some(change_set), None),
        Ok(Verdict::Paused) => (RunOutcome::Paused, None, None),
        Err(reason) => {
            tracker.enter(State::Failed);
            env.note_orch(format!("run failed: {}", clip(&reason, 160)), &reason);
            (RunOutcome::Failed, None, Some(reason))
        }
    };
    debug_assert!(locks.held_paths().is_empty(), "locks leaked past run end");

    let final_state = tracker.last().expect("at least Plan was entered");
    Ok(RunResult {
        run_id,
        outcome,
        final_state,
        state_path: tracker.names(),
        task_spec: report.task_spec,
        plan: report.plan,
        change_set,
        failure,
        test_attempts: report.test_attempts,
        auto_applied: report.auto_applied,
        transcript: writer.render(),
    })
}
