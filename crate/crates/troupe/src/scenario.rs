//! Self-contained demo and property workspaces for exercising the run
//! loop offline.
//!
//! [`build_demo`] lays out a small TypeScript block-editor repository with
//! agent profiles, reference docs, a content-based check script, and a
//! scripted provider fixture whose run takes the full loop: one planted
//! test failure, one re-delegation, and one auto-applied review
//! suggestion. Build into a fresh directory per run — the check script
//! reads real workspace state, so a second run over the same tree would
//! find the work already done.
//!
//! [`build_random`] generates seed-determined variations (failure counts,
//! retry budgets, review severities, blocked agents) together with an
//! [`Expectation`] computed analytically from the drawn parameters, so a
//! harness can compare what the orchestrator did against what the
//! scenario's construction says must happen.

use std::collections::BTreeMap;
use std::io;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::context::{SubtaskSpec, TaskSpec};
use crate::orchestrator::{
    Plan, PlanStep, ProposedEdit, ReviewSuggestion, RunConfig, RunOutcome, Severity, StepStatus,
};
use crate::provider::{AgentAction, DoneStatus, FixtureEntry};
use crate::registry::{serialize_profile, AgentProfile, ModelClass, ToolKind};

fn write_file(root: &Path, rel: &str, content: &str) -> io::Result<()> {
    let full = root.join(rel);
    if let Some(parent) = full.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(full, content)
}

fn message_action(content: impl Into<String>) -> AgentAction {
    AgentAction::Message { content: content.into() }
}

fn done_action() -> AgentAction {
    AgentAction::Done { status: DoneStatus::Complete, note: String::new() }
}

fn tool(name: &str, pairs: &[(&str, &str)]) -> AgentAction {
    let args: BTreeMap<String, String> =
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
    AgentAction::ToolInvocation { tool_name: name.to_string(), args }
}

fn entry(agent: &str, contains: Option<&str>, response: Vec<AgentAction>) -> FixtureEntry {
    FixtureEntry {
        agent: agent.to_string(),
        prompt_contains: contains.map(String::from),
        prompt_digest: None,
        response,
    }
}

/// Render fixture entries as the JSONL document `ScriptedProvider`
/// accepts, one entry per line.
pub fn fixture_jsonl(entries: &[FixtureEntry]) -> String {
    let mut out = String::new();
    for entry in entries {
        out.push_str(&serde_json::to_string(entry).expect("fixture entry serializes"));
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// Demo workspace

/// Everything a caller needs to run the demo: the request to pass in, the
/// config, the scripted fixture, and the state walk the run must take.
pub struct DemoSetup {
    pub request: String,
    pub config: RunConfig,
    pub fixture: Vec<FixtureEntry>,
    pub expected_state_path: Vec<String>,
}

pub const DEMO_REQUEST: &str = "Add a custom quote block to the editor";

/// The walk the demo run takes: one test failure re-delegated once, one
/// review suggestion auto-applied.
pub fn demo_state_path() -> Vec<String> {
    [
        "Plan",
        "RetrieveContext",
        "Delegate",
        "Edit",
        "Test",
        "Delegate",
        "Edit",
        "Test",
        "Review",
        "Edit",
        "IntegratePR",
        "Done",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

const QUOTE_BLOCK_TS: &str = r#"import { Block } from '../types';

export class QuoteBlock {
  readonly type = 'quote';
  citation = '';

  accepts(child: Block): boolean {
    return child.type !== 'quote';
  }

  render(): string {
    return '<blockquote class="editor-quote"></blockquote>';
  }
}
"#;

const QUOTE_PANEL_TS: &str = r#"import { QuoteBlock } from '../blocks/QuoteBlock';

export class QuoteOptionsPanel {
  private depth = 1;

  setDepth(depth: number): void {
    this.depth = this.clampDepth(depth);
  }

  private clampDepth(depth: number): number {
    return Math.min(depth, 3);
  }

  render(): string {
    return `<div class="quote-options" data-depth="${this.depth}"></div>`;
  }
}
"#;

/// The review suggestion's target text inside `QuoteOptionsPanel.ts`.
const PANEL_FIND: &str =
    "  private clampDepth(depth: number): number {\n    return Math.min(depth, 3);\n  }";
const PANEL_REPLACE: &str = "  private static readonly MAX_DEPTH = 3;\n\n  private clampDepth(depth: number): number {\n    return Math.min(depth, QuoteOptionsPanel.MAX_DEPTH);\n  }";

fn demo_repo_files() -> Vec<(&'static str, String)> {
    let mut files: Vec<(&'static str, String)> = Vec::new();
    let mut push = |path: &'static str, text: &str| files.push((path, text.to_string()));

    push(
        "package.json",
        r#"{
  "name": "block-editor",
  "version": "0.4.2",
  "private": true,
  "scripts": {
    "check": "sh scripts/check.sh"
  }
}
"#,
    );
    push(
        "tsconfig.json",
        r#"{
  "compilerOptions": {
    "target": "es2020",
    "module": "es2020",
    "strict": true,
    "outDir": "dist"
  },
  "include": ["src"]
}
"#,
    );
    push(
        "README.md",
        r#"# Block editor

A small block-based document editor. Blocks are plain classes registered
in `src/registry.ts`; documents serialize to JSON via
`src/serialization.ts`. Run `sh scripts/check.sh` before sending changes.
"#,
    );
    push(
        "PROJECT.md",
        r#"# Block editor conventions

- Blocks are classes with a `render(): string` method; no UI framework.
- Every block type appears in three places: the `BlockType` union, the
  block registry, and the serialization whitelist.
- `scripts/check.sh` is the gate; it must pass after every change.
"#,
    );
    push(
        "docs/architecture.md",
        r#"# Editor architecture

The editor keeps a normalized document model in src/state.ts and renders
blocks through definitions looked up in src/registry.ts. Every block type
is declared once in the BlockType union and registered with a label and a
factory function.

## Adding a block

A new block needs a component class under src/blocks, a registry entry,
and the type added to the BlockType union in src/types.ts.
"#,
    );
    push(
        "docs/serialization.md",
        r#"# Serialization rules

Documents serialize to JSON through serializeDoc in src/serialization.ts.
Only block types listed in the SERIALIZABLE_TYPES whitelist are persisted.
Unknown types are dropped with a console warning when a document is saved
or loaded. New block types must be added to the whitelist or they will
silently vanish on save.
"#,
    );
    push(
        "docs/block-model.md",
        r#"# Block model

Blocks form a tree. Each Block carries an id, a type from the BlockType
union, attrs, and children. Container blocks accept children; leaf blocks
always report an empty child list. The selection model in src/selection.ts
addresses blocks by id path.
"#,
    );
    push(
        "scripts/check.sh",
        r#"#!/bin/sh
# Block editor consistency checks; fail fast naming the offending file.
fail() { echo "FAIL: $1"; exit 1; }
test -f src/blocks/QuoteBlock.ts || fail "src/blocks/QuoteBlock.ts is missing"
grep -q "'quote'" src/types.ts || fail "src/types.ts does not include the quote block type"
grep -q "QuoteBlock" src/registry.ts || fail "src/registry.ts does not register the quote block"
grep -q "'quote'" src/serialization.ts || fail "serialization whitelist in src/serialization.ts does not include 'quote'"
echo "all block editor checks passed"
"#,
    );
    push(
        "src/types.ts",
        r#"export type BlockType = 'paragraph' | 'heading' | 'list' | 'code' | 'image' | 'divider';

export interface Block {
  id: string;
  type: BlockType;
  attrs: Record<string, string>;
  children: Block[];
}

export interface EditorDoc {
  version: number;
  blocks: Block[];
}

export function isContainer(block: Block): boolean {
  return block.children.length > 0;
}
"#,
    );
    push(
        "src/registry.ts",
        r#"import { ParagraphBlock } from './blocks/ParagraphBlock';
import { HeadingBlock } from './blocks/HeadingBlock';
import { ListBlock } from './blocks/ListBlock';
import { CodeBlock } from './blocks/CodeBlock';
import { ImageBlock } from './blocks/ImageBlock';
import { DividerBlock } from './blocks/DividerBlock';
import { BlockType } from './types';

export interface BlockDefinition {
  type: BlockType;
  label: string;
  create: () => object;
}

export const BLOCK_REGISTRY: BlockDefinition[] = [
  { type: 'paragraph', label: 'Paragraph', create: () => new ParagraphBlock() },
  { type: 'heading', label: 'Heading', create: () => new HeadingBlock() },
  { type: 'list', label: 'List', create: () => new ListBlock() },
  { type: 'code', label: 'Code', create: () => new CodeBlock() },
  { type: 'image', label: 'Image', create: () => new ImageBlock() },
  { type: 'divider', label: 'Divider', create: () => new DividerBlock() },
];

export function definitionFor(type: BlockType): BlockDefinition | undefined {
  return BLOCK_REGISTRY.find((def) => def.type === type);
}
"#,
    );
    push(
        "src/serialization.ts",
        r#"import { Block, BlockType, EditorDoc } from './types';

// Types the serializer persists; anything else is dropped with a warning
// so stale documents stay loadable after a block type is retired.
const SERIALIZABLE_TYPES: BlockType[] = ['paragraph', 'heading', 'list', 'code', 'image', 'divider'];

export function serializeDoc(doc: EditorDoc): string {
  const blocks = doc.blocks.filter(keepBlock);
  return JSON.stringify({ version: doc.version, blocks });
}

export function deserializeDoc(raw: string): EditorDoc {
  const parsed = JSON.parse(raw) as EditorDoc;
  return { version: parsed.version, blocks: parsed.blocks.filter(keepBlock) };
}

function keepBlock(block: Block): boolean {
  if (!SERIALIZABLE_TYPES.includes(block.type)) {
    console.warn(`dropping unserializable block type ${block.type}`);
    return false;
  }
  return true;
}
"#,
    );
    push(
        "src/editor.ts",
        r#"import { EditorDoc } from './types';
import { definitionFor } from './registry';

export class Editor {
  constructor(private doc: EditorDoc) {}

  renderAll(): string {
    return this.doc.blocks
      .map((block) => definitionFor(block.type))
      .filter((def) => def !== undefined)
      .map((def) => `<section>${def!.label}</section>`)
      .join('\n');
  }
}
"#,
    );
    push(
        "src/state.ts",
        r#"import { Block, EditorDoc } from './types';

export interface EditorState {
  doc: EditorDoc;
  selectedId: string | null;
  dirty: boolean;
}

export function emptyState(): EditorState {
  return { doc: { version: 1, blocks: [] }, selectedId: null, dirty: false };
}

export function findBlock(doc: EditorDoc, id: string): Block | undefined {
  const walk = (blocks: Block[]): Block | undefined => {
    for (const block of blocks) {
      if (block.id === id) return block;
      const hit = walk(block.children);
      if (hit) return hit;
    }
    return undefined;
  };
  return walk(doc.blocks);
}
"#,
    );
    push(
        "src/history.ts",
        r#"import { EditorDoc } from './types';

const MAX_HISTORY = 100;

export class History {
  private past: EditorDoc[] = [];
  private future: EditorDoc[] = [];

  push(doc: EditorDoc): void {
    this.past.push(doc);
    if (this.past.length > MAX_HISTORY) this.past.shift();
    this.future = [];
  }

  undo(current: EditorDoc): EditorDoc | undefined {
    const prev = this.past.pop();
    if (prev) this.future.push(current);
    return prev;
  }
}
"#,
    );
    push(
        "src/clipboard.ts",
        r#"import { Block } from './types';
import { serializeDoc } from './serialization';

export function copyBlocks(blocks: Block[]): string {
  return serializeDoc({ version: 1, blocks });
}
"#,
    );
    push(
        "src/keymap.ts",
        r#"export interface KeyBinding {
  combo: string;
  command: string;
}

export const DEFAULT_KEYMAP: KeyBinding[] = [
  { combo: 'Mod-z', command: 'undo' },
  { combo: 'Mod-Shift-z', command: 'redo' },
  { combo: 'Mod-c', command: 'copy' },
  { combo: 'Mod-Alt-0', command: 'set-paragraph' },
];
"#,
    );
    push(
        "src/selection.ts",
        r#"export interface Selection {
  anchorPath: string[];
  headPath: string[];
}

export function collapsed(sel: Selection): boolean {
  return (
    sel.anchorPath.length === sel.headPath.length &&
    sel.anchorPath.every((seg, i) => seg === sel.headPath[i])
  );
}
"#,
    );
    push(
        "src/theme.ts",
        r#"export interface Theme {
  name: string;
  accent: string;
  editorFont: string;
}

export const LIGHT: Theme = { name: 'light', accent: '#2a6df4', editorFont: 'serif' };
export const DARK: Theme = { name: 'dark', accent: '#7aa2ff', editorFont: 'serif' };
"#,
    );
    push(
        "src/blocks/ParagraphBlock.ts",
        r#"export class ParagraphBlock {
  readonly type = 'paragraph';
  text = '';

  render(): string {
    return `<p>${this.text}</p>`;
  }
}
"#,
    );
    push(
        "src/blocks/HeadingBlock.ts",
        r#"export class HeadingBlock {
  readonly type = 'heading';
  level = 1;
  text = '';

  render(): string {
    return `<h${this.level}>${this.text}</h${this.level}>`;
  }
}
"#,
    );
    push(
        "src/blocks/ListBlock.ts",
        r#"export class ListBlock {
  readonly type = 'list';
  ordered = false;
  items: string[] = [];

  render(): string {
    const tag = this.ordered ? 'ol' : 'ul';
    const items = this.items.map((item) => `<li>${item}</li>`).join('');
    return `<${tag}>${items}</${tag}>`;
  }
}
"#,
    );
    push(
        "src/blocks/CodeBlock.ts",
        r#"export class CodeBlock {
  readonly type = 'code';
  language = 'text';
  source = '';

  render(): string {
    return `<pre data-lang="${this.language}"><code></code></pre>`;
  }
}
"#,
    );
    push(
        "src/blocks/ImageBlock.ts",
        r#"export class ImageBlock {
  readonly type = 'image';
  src = '';
  alt = '';

  render(): string {
    return `<figure><img src="${this.src}" alt="${this.alt}"></figure>`;
  }
}
"#,
    );
    push(
        "src/blocks/DividerBlock.ts",
        r#"export class DividerBlock {
  readonly type = 'divider';

  render(): string {
    return '<hr>';
  }
}
"#,
    );
    push(
        "src/panels/BlockPalette.ts",
        r#"import { BLOCK_REGISTRY } from '../registry';

export class BlockPalette {
  render(): string {
    const buttons = BLOCK_REGISTRY.map(
      (def) => `<button data-type="${def.type}">${def.label}</button>`,
    ).join('');
    return `<nav class="palette">${buttons}</nav>`;
  }
}
"#,
    );
    push(
        "src/panels/InspectorPanel.ts",
        r#"import { Block } from '../types';

export class InspectorPanel {
  render(block: Block | undefined): string {
    if (!block) return '<aside class="inspector empty"></aside>';
    const rows = Object.entries(block.attrs)
      .map(([key, value]) => `<dt>${key}</dt><dd>${value}</dd>`)
      .join('');
    return `<aside class="inspector"><dl>${rows}</dl></aside>`;
  }
}
"#,
    );
    push(
        "src/panels/HistoryPanel.ts",
        r#"export class HistoryPanel {
  private entries: string[] = [];

  record(label: string): void {
    this.entries.push(label);
  }

  render(): string {
    const items = this.entries.map((label) => `<li>${label}</li>`).join('');
    return `<aside class="history"><ol>${items}</ol></aside>`;
  }
}
"#,
    );
    push(
        "src/utils/dom.ts",
        r#"export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, '&amp;')
    .replace(/</g, '&lt;')
    .replace(/>/g, '&gt;');
}
"#,
    );
    push(
        "src/utils/uuid.ts",
        r#"let counter = 0;

export function nextId(prefix: string): string {
  counter += 1;
  return `${prefix}-${counter.toString(36)}`;
}
"#,
    );
    push(
        "src/utils/debounce.ts",
        r#"export function debounce<T extends (...args: never[]) => void>(fn: T, ms: number): T {
  let handle: ReturnType<typeof setTimeout> | undefined;
  return ((...args: never[]) => {
    if (handle) clearTimeout(handle);
    handle = setTimeout(() => fn(...args), ms);
  }) as T;
}
"#,
    );
    push(
        "tests/serialization.test.ts",
        r#"import { serializeDoc, deserializeDoc } from '../src/serialization';

const doc = { version: 1, blocks: [] };
const raw = serializeDoc(doc);
if (deserializeDoc(raw).version !== 1) {
  throw new Error('round trip lost the version');
}
"#,
    );
    push(
        "tests/registry.test.ts",
        r#"import { BLOCK_REGISTRY, definitionFor } from '../src/registry';

if (BLOCK_REGISTRY.length === 0) {
  throw new Error('registry is empty');
}
if (!definitionFor('paragraph')) {
  throw new Error('paragraph must stay registered');
}
"#,
    );
    files
}

fn demo_profiles() -> Vec<AgentProfile> {
    let all_edit = vec![ToolKind::Read, ToolKind::Write, ToolKind::Edit, ToolKind::Grep, ToolKind::Glob];
    vec![
        AgentProfile {
            name: "planner".into(),
            description: "Decomposes feature requests into ordered, role-assigned steps".into(),
            model: ModelClass::Powerful,
            tools: vec![ToolKind::Read, ToolKind::Grep, ToolKind::Glob],
            system_prompt: "You decompose feature requests into ordered implementation steps \
                            and assign each step to the role best suited for it. Keep plans \
                            minimal and name the concrete files each step touches."
                .into(),
        },
        AgentProfile {
            name: "frontend-specialist".into(),
            description: "Builds editor UI components and panels".into(),
            model: ModelClass::Balanced,
            tools: all_edit.clone(),
            system_prompt: "You build editor UI components and panels. Follow the existing \
                            class-based block conventions and keep markup in template strings."
                .into(),
        },
        AgentProfile {
            name: "backend-architect".into(),
            description: "Owns the document model, registry, and serialization".into(),
            model: ModelClass::Balanced,
            tools: {
                let mut tools = all_edit;
                tools.push(ToolKind::Bash);
                tools
            },
            system_prompt: "You own the document model: the type union, the block registry, \
                            and serialization. Keep all three in sync when block types change."
                .into(),
        },
        AgentProfile {
            name: "code-reviewer".into(),
            description: "Reviews diffs for convention and correctness issues".into(),
            model: ModelClass::Powerful,
            tools: vec![ToolKind::Read, ToolKind::Grep, ToolKind::Glob, ToolKind::Edit],
            system_prompt: "You review unified diffs for consistency with project conventions. \
                            Prefer small concrete fixes expressed as find/replace edits; reserve \
                            blocking severity for correctness risks."
                .into(),
        },
    ]
}

fn demo_task_spec() -> TaskSpec {
    TaskSpec {
        title: "Add a custom quote block".into(),
        clarified_goal: "Introduce a quote block: component class, options panel, type union \
                         entry, and registry registration."
            .into(),
        subtasks: vec![
            SubtaskSpec {
                id: 1,
                description: "Create the QuoteBlock component".into(),
                suggested_role: Some("frontend-specialist".into()),
                target_hints: vec!["src/blocks".into()],
                depends_on: vec![],
            },
            SubtaskSpec {
                id: 2,
                description: "Add a quote options panel".into(),
                suggested_role: Some("frontend-specialist".into()),
                target_hints: vec!["src/panels".into()],
                depends_on: vec![1],
            },
            SubtaskSpec {
                id: 3,
                description: "Extend the BlockType union with quote".into(),
                suggested_role: Some("backend-architect".into()),
                target_hints: vec!["src/types.ts".into()],
                depends_on: vec![],
            },
            SubtaskSpec {
                id: 4,
                description: "Register the quote block".into(),
                suggested_role: Some("backend-architect".into()),
                target_hints: vec!["src/registry.ts".into()],
                depends_on: vec![1, 3],
            },
        ],
        acceptance_checks: vec![
            "the quote block type is part of the BlockType union".into(),
            "the registry lists a quote block definition".into(),
            "the serialization whitelist includes the quote type".into(),
        ],
        search_terms: vec![
            "quote block".into(),
            "BlockType union".into(),
            "serialization whitelist".into(),
            "block registry".into(),
        ],
    }
}

fn demo_plan() -> Plan {
    let step = |id: u32, description: &str, role: &str, depends_on: Vec<u32>| PlanStep {
        id,
        description: description.into(),
        role: role.into(),
        depends_on,
        status: StepStatus::Pending,
    };
    Plan {
        steps: vec![
            step(1, "Create the quote block component in src/blocks/QuoteBlock.ts", "frontend-specialist", vec![]),
            step(2, "Add the quote options panel in src/panels/QuoteOptionsPanel.ts", "frontend-specialist", vec![1]),
            step(3, "Extend the BlockType union in src/types.ts with the quote type", "backend-architect", vec![]),
            step(4, "Register the quote block in src/registry.ts", "backend-architect", vec![1, 3]),
        ],
    }
}

fn demo_fixture() -> Vec<FixtureEntry> {
    let spec_json = serde_json::to_string(&demo_task_spec()).expect("spec serializes");
    let plan_json = serde_json::to_string(&demo_plan()).expect("plan serializes");
    let suggestion = ReviewSuggestion {
        severity: Severity::Minor,
        path: "src/panels/QuoteOptionsPanel.ts".into(),
        anchor: "Math.min(depth, 3)".into(),
        suggestion: "Name the depth limit instead of repeating the literal 3.".into(),
        proposed_edit: Some(ProposedEdit { find: PANEL_FIND.into(), replace: PANEL_REPLACE.into() }),
    };
    let review_json = serde_json::to_string(&serde_json::json!({ "suggestions": [suggestion] }))
        .expect("review serializes");

    vec![
        entry("intent-translator", Some("quote block"), vec![message_action(spec_json)]),
        entry("planner", Some("Available roles"), vec![message_action(plan_json)]),
        entry(
            "frontend-specialist",
            Some("step 1 of the plan"),
            vec![
                tool("read", &[("path", "src/types.ts")]),
                tool("write", &[("path", "src/blocks/QuoteBlock.ts"), ("content", QUOTE_BLOCK_TS)]),
                message_action("Added the QuoteBlock component with a nesting guard."),
                done_action(),
            ],
        ),
        entry(
            "frontend-specialist",
            Some("step 2 of the plan"),
            vec![
                tool(
                    "write",
                    &[("path", "src/panels/QuoteOptionsPanel.ts"), ("content", QUOTE_PANEL_TS)],
                ),
                done_action(),
            ],
        ),
        entry(
            "backend-architect",
            Some("step 3 of the plan"),
            vec![
                tool(
                    "edit",
                    &[
                        ("path", "src/types.ts"),
                        ("find", "'image' | 'divider';"),
                        ("replace", "'image' | 'divider' | 'quote';"),
                    ],
                ),
                done_action(),
            ],
        ),
        entry(
            "backend-architect",
            Some("step 4 of the plan"),
            vec![
                tool(
                    "edit",
                    &[
                        ("path", "src/registry.ts"),
                        ("find", "import { DividerBlock } from './blocks/DividerBlock';"),
                        (
                            "replace",
                            "import { DividerBlock } from './blocks/DividerBlock';\nimport { QuoteBlock } from './blocks/QuoteBlock';",
                        ),
                    ],
                ),
                tool(
                    "edit",
                    &[
                        ("path", "src/registry.ts"),
                        (
                            "find",
                            "  { type: 'divider', label: 'Divider', create: () => new DividerBlock() },\n];",
                        ),
                        (
                            "replace",
                            "  { type: 'divider', label: 'Divider', create: () => new DividerBlock() },\n  { type: 'quote', label: 'Quote', create: () => new QuoteBlock() },\n];",
                        ),
                    ],
                ),
                done_action(),
            ],
        ),
        // re-delegation after the planted serialization failure
        entry(
            "backend-architect",
            Some("serialization whitelist in src/serialization.ts does not include"),
            vec![
                tool("read", &[("path", "src/serialization.ts")]),
                tool(
                    "edit",
                    &[
                        ("path", "src/serialization.ts"),
                        ("find", "'image', 'divider'];"),
                        ("replace", "'image', 'divider', 'quote'];"),
                    ],
                ),
                message_action("Added 'quote' to the serialization whitelist."),
                done_action(),
            ],
        ),
        entry("code-reviewer", Some("Review the unified diff"), vec![message_action(review_json)]),
    ]
}

/// Lay out the demo workspace under `workspace` (repository files, agent
/// profiles, reference docs, check script) and return the runnable setup.
pub fn build_demo(workspace: &Path) -> io::Result<DemoSetup> {
    for (rel, content) in demo_repo_files() {
        write_file(workspace, rel, &content)?;
    }
    for profile in demo_profiles() {
        let rel = format!("agents/{}.agent", profile.name);
        write_file(workspace, &rel, &serialize_profile(&profile))?;
    }
    let config = RunConfig {
        test_command: "sh scripts/check.sh".into(),
        corpus_dir: Some("docs".into()),
        ..RunConfig::default()
    };
    Ok(DemoSetup {
        request: DEMO_REQUEST.to_string(),
        config,
        fixture: demo_fixture(),
        expected_state_path: demo_state_path(),
    })
}

// ---------------------------------------------------------------------------
// Randomized scenarios

/// What a generated scenario's construction guarantees about its run.
#[derive(Debug, Clone, PartialEq)]
pub struct Expectation {
    pub outcome: RunOutcome,
    pub state_path: Vec<String>,
    pub test_attempts: u32,
    pub auto_applied: usize,
    /// Which gate the harness must install for gated review suggestions.
    pub gate_approves: bool,
}

pub struct RandomSetup {
    pub request: String,
    pub config: RunConfig,
    pub fixture: Vec<FixtureEntry>,
    pub expected: Expectation,
    /// Drawn parameters, for failure messages.
    pub descriptor: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ReviewVariant {
    MissingReviewer,
    Clean,
    MinorNote,
    MinorAuto,
    GatedApprove { severity: Severity, with_edit: bool },
    GatedDecline { severity: Severity },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Culprit {
    Step1,
    Step2,
    Unnamed,
}

fn draw_review_variant(rng: &mut ChaCha8Rng) -> ReviewVariant {
    let gated_severity = |rng: &mut ChaCha8Rng| {
        if rng.random_bool(0.5) {
            Severity::Major
        } else {
            Severity::Blocking
        }
    };
    match rng.random_range(0..6) {
        0 => ReviewVariant::MissingReviewer,
        1 => ReviewVariant::Clean,
        2 => ReviewVariant::MinorNote,
        3 => ReviewVariant::MinorAuto,
        4 => {
            let severity = gated_severity(rng);
            ReviewVariant::GatedApprove { severity, with_edit: rng.random_bool(0.5) }
        }
        _ => ReviewVariant::GatedDecline { severity: gated_severity(rng) },
    }
}

fn check_script(fail_attempts: u32, detail: &str) -> String {
    format!(
        "#!/bin/sh\n\
         i=$(cat .run_count 2>/dev/null || echo 0)\n\
         i=$((i+1))\n\
         echo \"$i\" > .run_count\n\
         if [ \"$i\" -le {fail_attempts} ]; then\n\
         \x20 echo \"FAIL: attempt $i: {detail}\"\n\
         \x20 exit 1\n\
         fi\n\
         echo \"checks passed on attempt $i\"\n"
    )
}

fn worker_profile(name: &str, duty: &str) -> AgentProfile {
    AgentProfile {
        name: name.into(),
        description: format!("Maintains {duty}"),
        model: ModelClass::Balanced,
        tools: vec![ToolKind::Read, ToolKind::Write, ToolKind::Edit],
        system_prompt: format!(
            "You maintain {duty}. Apply the requested refresh exactly and stop."
        ),
    }
}

/// Build one seed-determined scenario under `workspace` and return its
/// analytically computed [`Expectation`]. Scenarios vary over: one or two
/// plan steps, 0–4 scripted test failures against a retry budget of 0–3,
/// which step the failure output names, a blocked agent, and the review
/// severity/gate spectrum.
pub fn build_random(workspace: &Path, seed: u64) -> io::Result<RandomSetup> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let blocked = rng.random_bool(0.08);
    let steps: u32 = if blocked { 1 } else { rng.random_range(1..=2) };
    let budget: u32 = rng.random_range(0..=3);
    let fail_count: u32 = match rng.random_range(0..100) {
        0..45 => 0,
        45..70 => 1,
        70..85 => 2,
        85..95 => 3,
        _ => 4,
    };
    let culprit = if fail_count == 0 || blocked {
        Culprit::Unnamed
    } else {
        match rng.random_range(0..3) {
            0 => Culprit::Step1,
            1 if steps == 2 => Culprit::Step2,
            _ => Culprit::Unnamed,
        }
    };
    let review = draw_review_variant(&mut rng);

    // --- workspace files ---
    write_file(workspace, "src/alpha.txt", "alpha baseline\n")?;
    write_file(workspace, "src/beta.txt", "beta baseline\n")?;
    write_file(workspace, "src/gamma.txt", "gamma baseline\n")?;
    write_file(
        workspace,
        "PROJECT.md",
        "# Asset refresh notes\n\nTracked assets live under src/ and are refreshed in batches.\n",
    )?;
    let detail = match culprit {
        Culprit::Step1 => "stale content in src/alpha.txt",
        Culprit::Step2 => "stale content in src/beta.txt",
        Culprit::Unnamed => "checks unsatisfied",
    };
    write_file(workspace, "scripts/check.sh", &check_script(fail_count, detail))?;

    let planner = AgentProfile {
        name: "planner".into(),
        description: "Plans asset refresh batches".into(),
        model: ModelClass::Powerful,
        tools: vec![ToolKind::Read, ToolKind::Grep, ToolKind::Glob],
        system_prompt: "You turn refresh requests into one step per tracked asset.".into(),
    };
    write_file(workspace, "agents/planner.agent", &serialize_profile(&planner))?;
    write_file(
        workspace,
        "agents/alpha-dev.agent",
        &serialize_profile(&worker_profile("alpha-dev", "the alpha asset")),
    )?;
    write_file(
        workspace,
        "agents/beta-dev.agent",
        &serialize_profile(&worker_profile("beta-dev", "the beta asset")),
    )?;
    if review != ReviewVariant::MissingReviewer {
        let reviewer = AgentProfile {
            name: "code-reviewer".into(),
            description: "Reviews refresh diffs".into(),
            model: ModelClass::Powerful,
            tools: vec![ToolKind::Read, ToolKind::Grep, ToolKind::Edit],
            system_prompt: "You review refresh diffs and flag anything off-baseline.".into(),
        };
        write_file(workspace, "agents/code-reviewer.agent", &serialize_profile(&reviewer))?;
    }

    // --- fixture ---
    let request = format!("Refresh the tracked assets to the new baseline (batch {seed})");
    let spec = TaskSpec {
        title: format!("Asset refresh batch {seed}"),
        clarified_goal: "Bring the tracked asset files up to the new baseline.".into(),
        subtasks: vec![SubtaskSpec {
            id: 1,
            description: "Refresh the tracked assets".into(),
            suggested_role: None,
            target_hints: vec!["src".into()],
            depends_on: vec![],
        }],
        acceptance_checks: vec!["the check script passes".into()],
        search_terms: vec!["baseline".into()],
    };
    let mut plan_steps = vec![PlanStep {
        id: 1,
        description: "Refresh src/alpha.txt to the new baseline".into(),
        role: "alpha-dev".into(),
        depends_on: vec![],
        status: StepStatus::Pending,
    }];
    if steps == 2 {
        plan_steps.push(PlanStep {
            id: 2,
            description: "Refresh src/beta.txt to the new baseline".into(),
            role: "beta-dev".into(),
            depends_on: vec![],
            status: StepStatus::Pending,
        });
    }
    let plan = Plan { steps: plan_steps };

    let mut fixture = vec![
        entry(
            "intent-translator",
            Some("tracked assets"),
            vec![message_action(serde_json::to_string(&spec).expect("spec serializes"))],
        ),
        entry(
            "planner",
            Some("Available roles"),
            vec![message_action(serde_json::to_string(&plan).expect("plan serializes"))],
        ),
    ];

    if blocked {
        fixture.push(entry(
            "alpha-dev",
            Some("step 1 of the plan"),
            vec![AgentAction::Done {
                status: DoneStatus::Blocked,
                note: "the alpha baseline definition is ambiguous".into(),
            }],
        ));
    } else {
        fixture.push(entry(
            "alpha-dev",
            Some("step 1 of the plan"),
            vec![
                tool("write", &[("path", "src/alpha.txt"), ("content", "alpha updated by step 1\n")]),
                done_action(),
            ],
        ));
        if steps == 2 {
            fixture.push(entry(
                "beta-dev",
                Some("step 2 of the plan"),
                vec![
                    tool("write", &[("path", "src/beta.txt"), ("content", "beta updated by step 2\n")]),
                    done_action(),
                ],
            ));
        }
        // One retry entry per re-delegated round; round r is matched by
        // the attempt-r failure line, which first appears in its prompt.
        let retries = fail_count.min(budget);
        let (culprit_agent, culprit_file, culprit_word) = match culprit {
            Culprit::Step1 => ("alpha-dev", "src/alpha.txt", "alpha"),
            Culprit::Step2 => ("beta-dev", "src/beta.txt", "beta"),
            Culprit::Unnamed if steps == 2 => ("beta-dev", "src/beta.txt", "beta"),
            Culprit::Unnamed => ("alpha-dev", "src/alpha.txt", "alpha"),
        };
        for r in 1..=retries {
            fixture.push(entry(
                culprit_agent,
                Some(&format!("attempt {r}: {detail}")),
                vec![
                    tool(
                        "write",
                        &[("path", culprit_file), ("content", &format!("{culprit_word} fix round {r}\n"))],
                    ),
                    done_action(),
                ],
            ));
        }
        if fail_count <= budget && review != ReviewVariant::MissingReviewer {
            let suggestion = |severity: Severity, with_edit: bool| -> String {
                let edit = with_edit.then(|| ProposedEdit {
                    find: "alpha".into(),
                    replace: "alpha (reviewed)".into(),
                });
                let s = ReviewSuggestion {
                    severity,
                    path: "src/alpha.txt".into(),
                    anchor: "alpha".into(),
                    suggestion: "Mark the refreshed asset as reviewed.".into(),
                    proposed_edit: edit,
                };
                serde_json::to_string(&serde_json::json!({ "suggestions": [s] }))
                    .expect("review serializes")
            };
            let reply = match review {
                ReviewVariant::Clean => r#"{"suggestions":[]}"#.to_string(),
                ReviewVariant::MinorNote => suggestion(Severity::Minor, false),
                ReviewVariant::MinorAuto => suggestion(Severity::Minor, true),
                ReviewVariant::GatedApprove { severity, with_edit } => suggestion(severity, with_edit),
                ReviewVariant::GatedDecline { severity } => suggestion(severity, true),
                ReviewVariant::MissingReviewer => unreachable!("filtered above"),
            };
            fixture.push(entry(
                "code-reviewer",
                Some("Review the unified diff"),
                vec![message_action(reply)],
            ));
        }
    }

    // --- analytic expectation ---
    let mut path: Vec<String> = vec!["Plan".into(), "RetrieveContext".into()];
    let push_round = |path: &mut Vec<String>| {
        path.push("Delegate".into());
        path.push("Edit".into());
        path.push("Test".into());
    };
    let (outcome, test_attempts, auto_applied, gate_approves) = if blocked {
        path.push("Delegate".into());
        path.push("Edit".into());
        path.push("Failed".into());
        (RunOutcome::Failed, 0, 0, true)
    } else {
        let rounds = fail_count.min(budget) + 1;
        for _ in 0..rounds {
            push_round(&mut path);
        }
        if fail_count > budget {
            path.push("Failed".into());
            (RunOutcome::Failed, budget + 1, 0, true)
        } else {
            path.push("Review".into());
            match review {
                ReviewVariant::MissingReviewer | ReviewVariant::Clean | ReviewVariant::MinorNote => {
                    path.push("IntegratePR".into());
                    path.push("Done".into());
                    (RunOutcome::Done, fail_count + 1, 0, true)
                }
                ReviewVariant::MinorAuto => {
                    path.push("Edit".into());
                    path.push("IntegratePR".into());
                    path.push("Done".into());
                    (RunOutcome::Done, fail_count + 1, 1, true)
                }
                ReviewVariant::GatedApprove { with_edit, .. } => {
                    if with_edit {
                        path.push("Edit".into());
                    }
                    path.push("IntegratePR".into());
                    path.push("Done".into());
                    (RunOutcome::Done, fail_count + 1, 0, true)
                }
                ReviewVariant::GatedDecline { .. } => (RunOutcome::Paused, fail_count + 1, 0, false),
            }
        }
    };

    let config = RunConfig {
        test_command: "sh scripts/check.sh".into(),
        max_test_retries: budget,
        ..RunConfig::default()
    };
    let descriptor = format!(
        "seed={seed} steps={steps} fails={fail_count} budget={budget} blocked={blocked} \
         culprit={culprit:?} review={review:?}"
    );
    Ok(RandomSetup {
        request,
        config,
        fixture,
        expected: Expectation {
            outcome,
            state_path: path,
            test_attempts,
            auto_applied,
            gate_approves,
        },
        descriptor,
    })
}
