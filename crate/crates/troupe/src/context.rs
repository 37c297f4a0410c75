//! Layered prompt assembly.
//!
//! Each agent invocation sees one prompt built from five fixed layers:
//! task specification (L1), external knowledge (L2), project memory (L3),
//! retrieved code context (L4), and execution artifacts (L5). The stack is
//! assembled under a token budget; overflowing entries are dropped from the
//! regenerable layers first and L1 is never dropped.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Deterministic token estimate: `ceil(byte_length / 4)`.
///
/// A byte-count heuristic rather than a real tokenizer, so the same text
/// yields the same count regardless of which model provider is configured.
pub fn estimate_tokens(text: &str) -> usize {
    text.len().div_ceil(4)
}

/// One subtask of a structured task specification.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubtaskSpec {
    pub id: u32,
    pub description: String,
    /// Agent role suggested by the intent translator, if any.
    #[serde(default)]
    pub suggested_role: Option<String>,
    /// Path or symbol strings hinting where the work lands.
    #[serde(default)]
    pub target_hints: Vec<String>,
    /// Ids of subtasks that must complete first. Must reference earlier
    /// entries only, which keeps the dependency graph acyclic by construction.
    #[serde(default)]
    pub depends_on: Vec<u32>,
}

/// A clarified, step-decomposed task specification.
///
/// Produced by the intent-translation stage from a free-form user request,
/// or loaded directly from a file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub title: String,
    pub clarified_goal: String,
    pub subtasks: Vec<SubtaskSpec>,
    #[serde(default)]
    pub acceptance_checks: Vec<String>,
    #[serde(default)]
    pub search_terms: Vec<String>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SpecError {
    #[error("task spec has no subtasks")]
    NoSubtasks,
    #[error("duplicate subtask id {0}")]
    DuplicateSubtaskId(u32),
    #[error("subtask {0} has an empty description")]
    EmptyDescription(u32),
    #[error("subtask {id} depends on {dep}, which is not an earlier subtask")]
    ForwardDependency { id: u32, dep: u32 },
}

impl TaskSpec {
    /// Check the structural invariants: at least one subtask, unique ids,
    /// non-empty descriptions, and dependencies that reference earlier
    /// subtasks only.
    pub fn validate(&self) -> Result<(), SpecError> {
        if self.subtasks.is_empty() {
            return Err(SpecError::NoSubtasks);
        }
        let mut seen: Vec<u32> = Vec::with_capacity(self.subtasks.len());
        for sub in &self.subtasks {
            if seen.contains(&sub.id) {
                return Err(SpecError::DuplicateSubtaskId(sub.id));
            }
            if sub.description.trim().is_empty() {
                return Err(SpecError::EmptyDescription(sub.id));
            }
            for dep in &sub.depends_on {
                if !seen.contains(dep) {
                    return Err(SpecError::ForwardDependency {
                        id: sub.id,
                        dep: *dep,
                    });
                }
            }
            seen.push(sub.id);
        }
        Ok(())
    }

    /// Render the spec as the L1 layer text: title, goal, numbered steps,
    /// acceptance checks, and search terms.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("# {}\n\nGoal: {}\n\nSteps:\n", self.title, self.clarified_goal));
        for (pos, sub) in self.subtasks.iter().enumerate() {
            out.push_str(&format!("{}. {}", pos + 1, sub.description));
            if let Some(role) = &sub.suggested_role {
                out.push_str(&format!(" [role: {role}]"));
            }
            if !sub.depends_on.is_empty() {
                let deps: Vec<String> = sub.depends_on.iter().map(|d| d.to_string()).collect();
                out.push_str(&format!(" [after: {}]", deps.join(",")));
            }
            if !sub.target_hints.is_empty() {
                out.push_str(&format!(" [hints: {}]", sub.target_hints.join(", ")));
            }
            out.push('\n');
        }
        if !self.acceptance_checks.is_empty() {
            out.push_str("\nAcceptance checks:\n");
            for check in &self.acceptance_checks {
                out.push_str(&format!("- {check}\n"));
            }
        }
        if !self.search_terms.is_empty() {
            out.push_str(&format!("\nSearch terms: {}\n", self.search_terms.join(", ")));
        }
        out
    }
}

/// Persistent project memory, read verbatim from a workspace file
/// (`PROJECT.md` by default). A missing file is treated as empty memory.
#[derive(Debug, Clone, Default)]
pub struct ProjectMemory {
    pub path: PathBuf,
    pub content: String,
}

impl ProjectMemory {
    pub fn load(workspace_root: &Path, rel_path: &Path) -> std::io::Result<Self> {
        let full = workspace_root.join(rel_path);
        let content = match std::fs::read_to_string(&full) {
            Ok(text) => text,
            Err(err) if err.kind() == std::io::ErrorKind::NotFound => String::new(),
            Err(err) => return Err(err),
        };
        Ok(Self { path: rel_path.to_path_buf(), content })
    }

    pub fn from_content(content: impl Into<String>) -> Self {
        Self { path: PathBuf::from("PROJECT.md"), content: content.into() }
    }
}

/// The five context layers, in prompt order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LayerId {
    L1,
    L2,
    L3,
    L4,
    L5,
}

impl LayerId {
    pub const ALL: [LayerId; 5] = [LayerId::L1, LayerId::L2, LayerId::L3, LayerId::L4, LayerId::L5];

    pub fn label(self) -> &'static str {
        match self {
            LayerId::L1 => "Task Specification",
            LayerId::L2 => "External Knowledge",
            LayerId::L3 => "Project Memory",
            LayerId::L4 => "Retrieved Code Context",
            LayerId::L5 => "Execution Artifacts",
        }
    }

    /// The fixed ASCII banner that opens this layer in an assembled prompt.
    pub fn banner(self) -> String {
        format!("== {self}: {} ==", self.label())
    }

    fn index(self) -> usize {
        match self {
            LayerId::L1 => 0,
            LayerId::L2 => 1,
            LayerId::L3 => 2,
            LayerId::L4 => 3,
            LayerId::L5 => 4,
        }
    }
}

impl fmt::Display for LayerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            LayerId::L1 => "L1",
            LayerId::L2 => "L2",
            LayerId::L3 => "L3",
            LayerId::L4 => "L4",
            LayerId::L5 => "L5",
        };
        f.write_str(name)
    }
}

/// One tagged block of context inside a layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextEntry {
    /// Where the content came from: a file path, a doc id, "project-memory", ...
    pub source_tag: String,
    pub content: String,
    /// Always `estimate_tokens(content)`; maintained by the constructor.
    pub token_estimate: usize,
    /// Higher survives longer when the layer is truncated.
    pub priority: u32,
}

impl ContextEntry {
    pub fn new(source_tag: impl Into<String>, content: impl Into<String>, priority: u32) -> Self {
        let content = content.into();
        let token_estimate = estimate_tokens(&content);
        Self { source_tag: source_tag.into(), content, token_estimate, priority }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ContextError {
    #[error(
        "token budget {budget} cannot fit the role prompt and task specification ({required} tokens); \
         L1 is never dropped"
    )]
    BudgetTooSmall { budget: usize, required: usize },
}

/// The ordered five-layer context for one agent invocation.
///
/// A stack belongs to exactly one in-flight invocation; cloning the base
/// stack per delegation keeps agent contexts isolated from each other.
#[derive(Debug, Clone, Default)]
pub struct ContextStack {
    layers: [Vec<ContextEntry>; 5],
}

/// Layers in the order entries are dropped from when over budget. Execution
/// artifacts and retrieved code are regenerable; external knowledge and
/// project memory go last. L1 is never dropped.
const DROP_ORDER: [LayerId; 4] = [LayerId::L5, LayerId::L4, LayerId::L2, LayerId::L3];

impl ContextStack {
    /// Build the initial stack for a task: L1 holds the rendered spec, L3 the
    /// project memory (when non-empty), and L2/L4/L5 start empty.
    pub fn new(spec: &TaskSpec, memory: &ProjectMemory) -> Self {
        let mut stack = Self::default();
        stack.add_entry(LayerId::L1, ContextEntry::new("task-spec", spec.render(), 0));
        if !memory.content.is_empty() {
            stack.add_entry(LayerId::L3, ContextEntry::new("project-memory", memory.content.clone(), 0));
        }
        stack
    }

    /// An empty stack, for callers that assemble layers by hand.
    pub fn empty() -> Self {
        Self::default()
    }

    /// Append an entry to a layer, preserving insertion order.
    pub fn add_entry(&mut self, layer: LayerId, entry: ContextEntry) {
        self.layers[layer.index()].push(entry);
    }

    pub fn layer(&self, layer: LayerId) -> &[ContextEntry] {
        &self.layers[layer.index()]
    }

    /// Sum of entry token estimates across all layers.
    pub fn content_tokens(&self) -> usize {
        self.layers.iter().flatten().map(|e| e.token_estimate).sum()
    }

    /// Assemble the prompt: role prompt first, then every layer in L1..L5
    /// order under its banner.
    ///
    /// Budget accounting covers the role prompt and entry contents; banners
    /// and elision markers are structural overhead and excluded. When the
    /// content is over budget, entries are dropped layer by layer in the
    /// order L5, L4, L2, L3 — lowest priority first within a layer, and
    /// among equal priorities the latest-inserted first — and each affected
    /// layer gets a one-line `[N entries elided]` marker.
    pub fn assemble_prompt(&self, role_prompt: &str, budget: usize) -> Result<String, ContextError> {
        let base = estimate_tokens(role_prompt);
        let l1_tokens: usize = self.layer(LayerId::L1).iter().map(|e| e.token_estimate).sum();
        if budget < base + l1_tokens {
            return Err(ContextError::BudgetTooSmall { budget, required: base + l1_tokens });
        }

        // keep[layer][i] marks survivors; victims are visited in a fixed,
        // budget-independent order so a larger budget only ever keeps more.
        let mut keep: Vec<Vec<bool>> = self.layers.iter().map(|l| vec![true; l.len()]).collect();
        let mut total = base + self.content_tokens();
        'drop: for layer in DROP_ORDER {
            if total <= budget {
                break;
            }
            let li = layer.index();
            let entries = &self.layers[li];
            // (priority ascending, insertion index descending)
            let mut victims: Vec<usize> = (0..entries.len()).collect();
            victims.sort_by(|&a, &b| {
                entries[a]
                    .priority
                    .cmp(&entries[b].priority)
                    .then(b.cmp(&a))
            });
            for idx in victims {
                if total <= budget {
                    continue 'drop;
                }
                keep[li][idx] = false;
                total -= entries[idx].token_estimate;
            }
        }

        let mut out = String::new();
        out.push_str(role_prompt);
        for layer in LayerId::ALL {
            let li = layer.index();
            if !out.is_empty() && !out.ends_with('\n') {
                out.push('\n');
            }
            out.push_str(&layer.banner());
            out.push('\n');
            let mut dropped = 0usize;
            for (idx, entry) in self.layers[li].iter().enumerate() {
                if keep[li][idx] {
                    out.push_str(&entry.content);
                    if !entry.content.ends_with('\n') {
                        out.push('\n');
                    }
                } else {
                    dropped += 1;
                }
            }
            if dropped > 0 {
                out.push_str(&format!("[{dropped} entries elided]\n"));
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn four_step_spec() -> TaskSpec {
        TaskSpec {
            title: "Add a calendar view".into(),
            clarified_goal: "Show scheduled events in a month grid".into(),
            subtasks: (1..=4)
                .map(|id| SubtaskSpec {
                    id,
                    description: format!("step number {id}"),
                    suggested_role: None,
                    target_hints: vec![],
                    depends_on: if id > 1 { vec![id - 1] } else { vec![] },
                })
                .collect(),
            acceptance_checks: vec!["all tests pass".into()],
            search_terms: vec!["calendar widget".into()],
        }
    }

    #[test]
    fn estimate_is_ceil_of_quarter_bytes() {
        assert_eq!(estimate_tokens(""), 0);
        assert_eq!(estimate_tokens("abcd"), 1);
        assert_eq!(estimate_tokens("abcde"), 2);
        assert_eq!(estimate_tokens("abc"), 1);
    }

    #[test]
    fn new_stack_fills_l1_and_l3_only() {
        let spec = four_step_spec();
        let stack = ContextStack::new(&spec, &ProjectMemory::default());
        assert!(!stack.layer(LayerId::L1).is_empty());
        for layer in [LayerId::L2, LayerId::L3, LayerId::L4, LayerId::L5] {
            assert!(stack.layer(layer).is_empty(), "{layer} should start empty");
        }

        let memory = ProjectMemory::from_content("style: no default exports");
        let stack = ContextStack::new(&spec, &memory);
        assert_eq!(stack.layer(LayerId::L3).len(), 1);
        assert_eq!(stack.layer(LayerId::L3)[0].content, "style: no default exports");
        assert_eq!(stack.layer(LayerId::L3)[0].source_tag, "project-memory");
    }

    #[test]
    fn render_lists_steps_in_order() {
        let rendered = four_step_spec().render();
        let mut last = 0;
        for n in 1..=4 {
            let needle = format!("{n}. step number {n}");
            let pos = rendered.find(&needle).unwrap_or_else(|| panic!("missing {needle:?}"));
            assert!(pos > last || n == 1);
            last = pos;
        }
    }

    #[test]
    fn add_entry_preserves_insertion_order() {
        let mut stack = ContextStack::empty();
        for i in 0..5 {
            stack.add_entry(LayerId::L4, ContextEntry::new(format!("s{i}"), format!("c{i}"), 0));
        }
        let tags: Vec<&str> = stack.layer(LayerId::L4).iter().map(|e| e.source_tag.as_str()).collect();
        assert_eq!(tags, vec!["s0", "s1", "s2", "s3", "s4"]);
    }

    #[test]
    fn assemble_orders_banners_l1_to_l5() {
        let spec = four_step_spec();
        let mut stack = ContextStack::new(&spec, &ProjectMemory::from_content("memory"));
        stack.add_entry(LayerId::L2, ContextEntry::new("doc", "knowledge", 0));
        stack.add_entry(LayerId::L4, ContextEntry::new("src/a.rs", "snippet", 0));
        stack.add_entry(LayerId::L5, ContextEntry::new("tests", "output", 0));
        let prompt = stack.assemble_prompt("You are an agent.", 100_000).unwrap();
        let mut pos = 0;
        for layer in LayerId::ALL {
            let at = prompt.find(&layer.banner()).expect("banner present");
            assert!(at >= pos, "banner {layer} out of order");
            pos = at;
        }
        for needle in ["knowledge", "snippet", "output", "memory"] {
            assert!(prompt.contains(needle));
        }
    }

    #[test]
    fn budget_at_role_plus_l1_keeps_only_l1_with_elision_markers() {
        let spec = four_step_spec();
        let mut stack = ContextStack::new(&spec, &ProjectMemory::default());
        stack.add_entry(LayerId::L4, ContextEntry::new("src/a.rs", "x".repeat(400), 0));
        stack.add_entry(LayerId::L5, ContextEntry::new("tests", "y".repeat(400), 0));
        let role = "role prompt";
        let budget = estimate_tokens(role) + estimate_tokens(&spec.render());
        let prompt = stack.assemble_prompt(role, budget).unwrap();
        assert!(prompt.contains(&LayerId::L1.banner()));
        assert!(!prompt.contains("xxxx"));
        assert!(!prompt.contains("yyyy"));
        assert_eq!(prompt.matches("[1 entries elided]").count(), 2);

        let err = stack.assemble_prompt(role, budget - 1).unwrap_err();
        assert!(matches!(err, ContextError::BudgetTooSmall { .. }));
    }

    #[test]
    fn truncation_keeps_highest_priority_then_earliest() {
        // Oracle: sort by (priority desc, insertion asc) and keep the prefix
        // that fits.
        let spec = TaskSpec {
            title: "t".into(),
            clarified_goal: "g".into(),
            subtasks: vec![SubtaskSpec {
                id: 1,
                description: "only step".into(),
                suggested_role: None,
                target_hints: vec![],
                depends_on: vec![],
            }],
            acceptance_checks: vec![],
            search_terms: vec![],
        };
        let mut stack = ContextStack::new(&spec, &ProjectMemory::default());
        let priorities = [3u32, 1, 4, 1, 5, 9, 2, 6, 5, 3];
        for (i, prio) in priorities.iter().enumerate() {
            // 40 bytes each -> 10 tokens each
            let content = format!("L4-entry-{i:02} {}", "z".repeat(28));
            assert_eq!(estimate_tokens(&content), 10);
            stack.add_entry(LayerId::L4, ContextEntry::new(format!("e{i}"), content, *prio));
        }
        let role = "r";
        let base = estimate_tokens(role) + estimate_tokens(&spec.render());
        let budget = base + 6 * 10;
        let prompt = stack.assemble_prompt(role, budget).unwrap();

        let mut order: Vec<usize> = (0..10).collect();
        order.sort_by(|&a, &b| priorities[b].cmp(&priorities[a]).then(a.cmp(&b)));
        let expect_keep: Vec<usize> = order[..6].to_vec();
        for i in 0..10 {
            let marker = format!("L4-entry-{i:02}");
            assert_eq!(
                prompt.contains(&marker),
                expect_keep.contains(&i),
                "entry {i} survival mismatch"
            );
        }
        assert!(prompt.contains("[4 entries elided]"));
    }

    proptest! {
        #[test]
        fn estimate_is_subadditive_within_one(a in ".{0,64}", b in ".{0,64}") {
            let joined = format!("{a}{b}");
            prop_assert!(estimate_tokens(&joined) <= estimate_tokens(&a) + estimate_tokens(&b) + 1);
        }

        #[test]
        fn estimate_is_monotone_in_length(a in ".{0,64}", b in ".{0,64}") {
            let joined = format!("{a}{b}");
            prop_assert!(estimate_tokens(&joined) >= estimate_tokens(&a));
        }

        #[test]
        fn assembly_is_budget_sound_and_monotone(
            sizes in proptest::collection::vec((4usize..200, 0u32..4), 0..12),
            budget_slack in 0usize..300,
        ) {
            let spec = TaskSpec {
                title: "t".into(),
                clarified_goal: "g".into(),
                subtasks: vec![SubtaskSpec {
                    id: 1,
                    description: "d".into(),
                    suggested_role: None,
                    target_hints: vec![],
                    depends_on: vec![],
                }],
                acceptance_checks: vec![],
                search_terms: vec![],
            };
            let mut stack = ContextStack::new(&spec, &ProjectMemory::default());
            for (i, (len, prio)) in sizes.iter().enumerate() {
                let layer = [LayerId::L2, LayerId::L4, LayerId::L5][i % 3];
                let content = format!("e{i:03}{}", "q".repeat(*len));
                stack.add_entry(layer, ContextEntry::new(format!("e{i:03}"), content, *prio));
            }
            let role = "role";
            let base = estimate_tokens(role) + estimate_tokens(&spec.render());
            let budget = base + budget_slack;
            let prompt = stack.assemble_prompt(role, budget).unwrap();

            // Budget soundness over content accounting.
            let kept: usize = (0..sizes.len())
                .filter(|i| prompt.contains(&format!("e{i:03}")))
                .map(|i| {
                    let layer = [LayerId::L2, LayerId::L4, LayerId::L5][i % 3];
                    stack.layer(layer).iter()
                        .find(|e| e.source_tag == format!("e{i:03}"))
                        .unwrap().token_estimate
                })
                .sum();
            prop_assert!(base + kept <= budget);

            // Raising the budget never evicts a survivor.
            let bigger = stack.assemble_prompt(role, budget + 64).unwrap();
            for i in 0..sizes.len() {
                let tag = format!("e{i:03}");
                if prompt.contains(&tag) {
                    prop_assert!(bigger.contains(&tag), "budget increase dropped {tag}");
                }
            }
        }

        #[test]
        fn l1_rendering_survives_every_successful_assembly(extra in 0usize..200) {
            let spec = TaskSpec {
                title: "keep me".into(),
                clarified_goal: "verbatim".into(),
                subtasks: vec![SubtaskSpec {
                    id: 1,
                    description: "the one step".into(),
                    suggested_role: None,
                    target_hints: vec![],
                    depends_on: vec![],
                }],
                acceptance_checks: vec![],
                search_terms: vec![],
            };
            let mut stack = ContextStack::new(&spec, &ProjectMemory::default());
            stack.add_entry(LayerId::L5, ContextEntry::new("log", "noise ".repeat(50), 0));
            let role = "r";
            let budget = estimate_tokens(role) + estimate_tokens(&spec.render()) + extra;
            let prompt = stack.assemble_prompt(role, budget).unwrap();
            prop_assert!(prompt.contains(&spec.render()));
        }
    }
}
