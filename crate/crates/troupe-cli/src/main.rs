//! Command-line front end: index a repository, plan or run a task with a
//! scripted provider, replay a recorded run, and report token usage from
//! transcripts.
//!
//! Exit codes: 0 success / run done, 2 run failed, 3 run paused at review,
//! 64 usage or configuration problems, 1 everything else.

use std::io::{BufRead, Write as _};
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use troupe::orchestrator::{
    make_plan, run_task, translate_intent, ReviewGate, ReviewSuggestion, RunConfig, RunOutcome,
    RunRequest, RunResult,
};
use troupe::context::{ContextEntry, ContextStack, LayerId, ProjectMemory};
use troupe::knowledge::{load_corpus, render_summary, search_corpus, synthesize, SummaryMode};
use troupe::provider::{MatchMode, Provider, RecordingProvider, ScriptedProvider};
use troupe::registry::AgentRegistry;
use troupe::retrieval::{
    index_repository, query_index, FileIndex, MemoryIndex, NgramEmbedder, RetrievalQuery,
    TokenEmbedder,
};
use troupe::transcript::{
    parse_transcript, render_comparison, render_report, Clock, FixedClock, SystemClock,
};

#[derive(Parser)]
#[command(
    name = "troupe",
    version,
    about = "Deterministic multi-agent coding assistant",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Index a repository for semantic retrieval.
    Index {
        #[arg(long)]
        repo: PathBuf,
        /// "memory" prints stats only; "file" also persists the index.
        #[arg(long, default_value = "memory")]
        backend: String,
        /// Directory for the persisted index (required with --backend file).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a task end to end and write the change set.
    Run(RunArgs),
    /// Translate and plan a task without executing any step.
    Plan(PlanArgs),
    /// Re-run a task against a recorded fixture, failing on any divergence.
    Replay(ReplayArgs),
    /// Summarize token usage from a transcript, optionally against a baseline.
    Report {
        transcript: PathBuf,
        baseline: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    repo: PathBuf,
    /// Task text; alternative to --task-file.
    #[arg(long)]
    task: Option<String>,
    /// File containing the task text.
    #[arg(long)]
    task_file: Option<PathBuf>,
    /// Provider spec "scripted:FIXTURE.jsonl" or "replay:FIXTURE.jsonl"
    /// (default from TROUPE_PROVIDER).
    #[arg(long)]
    provider: Option<String>,
    /// Config TOML (default from TROUPE_CONFIG, then <repo>/troupe.toml).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Record provider traffic to this JSONL file for later replay.
    #[arg(long)]
    record: Option<PathBuf>,
    /// Output directory for diff.patch, transcript.log, summary.txt
    /// (default <repo>/.troupe).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Approve every gated review suggestion without prompting.
    #[arg(long, conflicts_with = "no")]
    yes: bool,
    /// Decline every gated review suggestion without prompting.
    #[arg(long)]
    no: bool,
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long)]
    repo: PathBuf,
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    task_file: Option<PathBuf>,
    #[arg(long)]
    provider: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    repo: PathBuf,
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    task_file: Option<PathBuf>,
    /// The recorded fixture to replay.
    #[arg(long)]
    fixture: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, conflicts_with = "no")]
    yes: bool,
    #[arg(long)]
    no: bool,
}

struct Failure {
    code: i32,
    message: String,
}

type CliResult<T> = Result<T, Failure>;

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: 64, message: message.into() }
}

fn fault(message: impl Into<String>) -> Failure {
    Failure { code: 1, message: message.into() }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 64,
            };
            let _ = err.print();
            std::process::exit(code);
        }
    };
    let outcome = match cli.command {
        Command::Index { repo, backend, out } => cmd_index(&repo, &backend, out.as_deref()),
        Command::Run(args) => cmd_run(args),
        Command::Plan(args) => cmd_plan(args),
        Command::Replay(args) => cmd_run(RunArgs {
            repo: args.repo,
            task: args.task,
            task_file: args.task_file,
            provider: Some(format!("replay:{}", args.fixture.display())),
            config: args.config,
            record: None,
            out: args.out,
            yes: args.yes,
            no: args.no,
        }),
        Command::Report { transcript, baseline } => cmd_report(&transcript, baseline.as_deref()),
    };
    match outcome {
        Ok(code) => std::process::exit(code),
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            std::process::exit(failure.code);
        }
    }
}

// ---------------------------------------------------------------------------
// Shared plumbing

fn load_config(repo: &Path, explicit: Option<&Path>) -> CliResult<RunConfig> {
    let path = explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os("TROUPE_CONFIG").map(PathBuf::from))
        .or_else(|| {
            let default = repo.join("troupe.toml");
            default.is_file().then_some(default)
        });
    match path {
        Some(path) => RunConfig::load(&path).map_err(|e| usage(e.to_string())),
        None => Ok(RunConfig::default()),
    }
}

fn load_task(task: Option<String>, task_file: Option<&Path>) -> CliResult<String> {
    match (task, task_file) {
        (Some(_), Some(_)) => Err(usage("pass --task or --task-file, not both")),
        (Some(text), None) => Ok(text),
        (None, Some(path)) => std::fs::read_to_string(path)
            .map(|text| text.trim().to_string())
            .map_err(|e| usage(format!("cannot read {}: {e}", path.display()))),
        (None, None) => Err(usage("a task is required: --task TEXT or --task-file PATH")),
    }
}

fn build_provider(spec: Option<&str>) -> CliResult<Box<dyn Provider>> {
    let spec = match spec {
        Some(spec) => spec.to_string(),
        None => std::env::var("TROUPE_PROVIDER")
            .map_err(|_| usage("a provider is required: --provider scripted:FIXTURE or replay:FIXTURE"))?,
    };
    let (mode_name, path) = spec
        .split_once(':')
        .ok_or_else(|| usage(format!("provider spec {spec:?} is not MODE:PATH")))?;
    let mode = match mode_name {
        "scripted" => MatchMode::Script,
        "replay" => MatchMode::Replay,
        other => return Err(usage(format!("unknown provider mode {other:?} (scripted, replay)"))),
    };
    let provider = ScriptedProvider::from_path(Path::new(path), mode)
        .map_err(|e| usage(e.to_string()))?;
    Ok(Box::new(provider))
}

fn build_clock() -> Box<dyn Clock> {
    match std::env::var("TROUPE_FIXED_TIME") {
        Ok(value) if !value.is_empty() => Box::new(FixedClock::at(value)),
        _ => Box::new(SystemClock),
    }
}

/// Gate that asks on the terminal unless an answer was fixed up front.
struct PromptGate {
    assume: Option<bool>,
}

impl ReviewGate for PromptGate {
    fn confirm(&self, suggestion: &ReviewSuggestion) -> bool {
        if let Some(answer) = self.assume {
            return answer;
        }
        eprintln!("review gate: {}", suggestion.summary());
        eprint!("apply this suggestion? [y/N] ");
        let _ = std::io::stderr().flush();
        let mut line = String::new();
        if std::io::stdin().lock().read_line(&mut line).is_err() {
            return false;
        }
        matches!(line.trim().to_ascii_lowercase().as_str(), "y" | "yes")
    }
}

/// Holds `.troupe-run.lock` in the repo root for the life of a run so two
/// runs cannot interleave edits in one workspace.
struct RunLock {
    path: PathBuf,
}

impl RunLock {
    fn acquire(repo: &Path) -> CliResult<Self> {
        let path = repo.join(".troupe-run.lock");
        match std::fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut file) => {
                let _ = writeln!(file, "pid {}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(usage(format!(
                "another run appears to be active ({} exists); remove it if stale",
                path.display()
            ))),
            Err(e) => Err(fault(format!("cannot create {}: {e}", path.display()))),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

// ---------------------------------------------------------------------------
// Subcommands

fn cmd_index(repo: &Path, backend: &str, out: Option<&Path>) -> CliResult<i32> {
    if !repo.is_dir() {
        return Err(usage(format!("{} is not a directory", repo.display())));
    }
    let embedder = NgramEmbedder;
    let stats = match backend {
        "memory" => {
            let mut index = MemoryIndex::new(&embedder);
            index_repository(repo, &mut index, &embedder).map_err(|e| fault(e.to_string()))?
        }
        "file" => {
            let out = out.ok_or_else(|| usage("--backend file requires --out DIR"))?;
            let mut index = FileIndex::create(out, &embedder);
            let stats =
                index_repository(repo, &mut index, &embedder).map_err(|e| fault(e.to_string()))?;
            index.persist().map_err(|e| fault(e.to_string()))?;
            println!("persisted index to {}", out.display());
            stats
        }
        other => return Err(usage(format!("unknown backend {other:?} (memory, file)"))),
    };
    println!(
        "files={} chunks={} skipped={}",
        stats.files_indexed, stats.chunks_indexed, stats.files_skipped
    );
    Ok(0)
}

fn cmd_run(args: RunArgs) -> CliResult<i32> {
    if !args.repo.is_dir() {
        return Err(usage(format!("{} is not a directory", args.repo.display())));
    }
    let config = load_config(&args.repo, args.config.as_deref())?;
    let request = load_task(args.task, args.task_file.as_deref())?;
    let provider = build_provider(args.provider.as_deref())?;
    let gate = PromptGate { assume: if args.yes { Some(true) } else if args.no { Some(false) } else { None } };
    let _lock = RunLock::acquire(&args.repo)?;

    let result = match &args.record {
        Some(record_path) => {
            let recorder = RecordingProvider::create(provider.as_ref(), record_path)
                .map_err(|e| fault(e.to_string()))?;
            execute(&request, &args.repo, config, &recorder, &gate)?
        }
        None => execute(&request, &args.repo, config, provider.as_ref(), &gate)?,
    };

    let out_dir = args.out.clone().unwrap_or_else(|| args.repo.join(".troupe"));
    write_outputs(&out_dir, &result)?;
    print_result(&result, &out_dir);
    Ok(result.outcome.exit_code())
}

fn execute(
    request: &str,
    repo: &Path,
    config: RunConfig,
    provider: &dyn Provider,
    gate: &dyn ReviewGate,
) -> CliResult<RunResult> {
    run_task(RunRequest {
        request,
        root: repo,
        config,
        provider,
        gate,
        clock: build_clock(),
    })
    .map_err(|e| usage(e.to_string()))
}

fn write_outputs(out_dir: &Path, result: &RunResult) -> CliResult<()> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| fault(format!("cannot create {}: {e}", out_dir.display())))?;
    let write = |name: &str, content: &str| -> CliResult<()> {
        let path = out_dir.join(name);
        std::fs::write(&path, content)
            .map_err(|e| fault(format!("cannot write {}: {e}", path.display())))
    };
    let (diff, summary) = match &result.change_set {
        Some(change) => (change.unified_diff.as_str(), change.summary.clone()),
        None => {
            let summary = match (&result.failure, result.outcome) {
                (Some(reason), _) => format!("run failed: {reason}\n"),
                (None, RunOutcome::Paused) => "run paused at review; no change set produced\n".into(),
                (None, _) => "no changes\n".into(),
            };
            ("", summary)
        }
    };
    write("diff.patch", diff)?;
    write("transcript.log", &result.transcript)?;
    write("summary.txt", &summary)
}

fn print_result(result: &RunResult, out_dir: &Path) {
    let outcome = match result.outcome {
        RunOutcome::Done => "done",
        RunOutcome::Failed => "failed",
        RunOutcome::Paused => "paused",
    };
    println!("run {}: {outcome}", result.run_id);
    println!("states: {}", result.state_path.join(" -> "));
    println!("test attempts: {}", result.test_attempts);
    if let Some(change) = &result.change_set {
        println!("files changed: {}", change.files_touched.len());
    }
    if !result.auto_applied.is_empty() {
        println!("auto-applied suggestions: {}", result.auto_applied.len());
    }
    if let Some(reason) = &result.failure {
        println!("failure: {reason}");
    }
    println!(
        "wrote {}/diff.patch, transcript.log, summary.txt",
        out_dir.display()
    );
}

fn cmd_plan(args: PlanArgs) -> CliResult<i32> {
    if !args.repo.is_dir() {
        return Err(usage(format!("{} is not a directory", args.repo.display())));
    }
    let config = load_config(&args.repo, args.config.as_deref())?;
    config.validate().map_err(|e| usage(e.to_string()))?;
    let request = load_task(args.task, args.task_file.as_deref())?;
    let provider = build_provider(args.provider.as_deref())?;
    let registry = AgentRegistry::load(&args.repo.join(&config.agents_dir))
        .map_err(|e| usage(e.to_string()))?;

    let spec = translate_intent(&request, provider.as_ref()).map_err(|e| fault(e.to_string()))?;
    let memory = ProjectMemory::load(&args.repo, &config.memory_path)
        .map_err(|e| fault(format!("project memory: {e}")))?;

    // Mirrors the run loop's planning phase: knowledge summary, repo
    // index, retrieval hits, then the planner call — but stops there.
    let knowledge = match &config.corpus_dir {
        None => None,
        Some(dir) => {
            let docs = load_corpus(&args.repo.join(dir)).map_err(|e| fault(e.to_string()))?;
            if docs.is_empty() {
                None
            } else {
                let terms = if spec.search_terms.is_empty() {
                    vec![spec.title.clone()]
                } else {
                    spec.search_terms.clone()
                };
                let ranked = search_corpus(&docs, &TokenEmbedder, &terms, config.k_retrieval)
                    .map_err(|e| fault(e.to_string()))?;
                let chosen: Vec<_> = ranked.into_iter().map(|scored| scored.doc).collect();
                let summary = synthesize(chosen, &spec.acceptance_checks, SummaryMode::Extractive);
                Some(render_summary(&summary))
            }
        }
    };

    let embedder = NgramEmbedder;
    let mut index = MemoryIndex::new(&embedder);
    let stats = index_repository(&args.repo, &mut index, &embedder)
        .map_err(|e| fault(e.to_string()))?;

    let planner = registry.require(&config.planner_role).map_err(|e| usage(e.to_string()))?;
    let mut stack = ContextStack::new(&spec, &memory);
    if let Some(text) = &knowledge {
        stack.add_entry(LayerId::L2, ContextEntry::new("knowledge-summary", text.clone(), 1));
    }
    if stats.chunks_indexed > 0 {
        let plan_query = if spec.search_terms.is_empty() {
            spec.clarified_goal.clone()
        } else {
            spec.search_terms.join(" ")
        };
        let query = RetrievalQuery::new(&plan_query).with_k(config.k_retrieval);
        let hits = query_index(&args.repo, &index, &embedder, &query)
            .map_err(|e| fault(e.to_string()))?;
        for (i, hit) in hits.iter().enumerate() {
            let tag = format!(
                "{}:{}-{}",
                hit.path.to_string_lossy().replace('\\', "/"),
                hit.start_line,
                hit.end_line
            );
            let priority = (hits.len() - i) as u32;
            stack.add_entry(LayerId::L4, ContextEntry::new(tag, hit.snippet.clone(), priority));
        }
    }
    let context = stack
        .assemble_prompt(&planner.system_prompt, config.token_budget_per_agent)
        .map_err(|e| fault(e.to_string()))?;
    let plan = make_plan(&context, &registry, provider.as_ref(), &planner.name, planner.model)
        .map_err(|e| fault(e.to_string()))?;

    println!("task: {}", spec.title);
    println!("goal: {}", spec.clarified_goal);
    println!(
        "indexed files={} chunks={} skipped={}",
        stats.files_indexed, stats.chunks_indexed, stats.files_skipped
    );
    println!();
    println!("plan:\n{}", plan.render());
    Ok(0)
}

fn cmd_report(transcript: &Path, baseline: Option<&Path>) -> CliResult<i32> {
    let read = |path: &Path| -> CliResult<String> {
        std::fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read {}: {e}", path.display())))
    };
    let file = parse_transcript(&read(transcript)?).map_err(|e| fault(e.to_string()))?;
    print!("{}", render_report(&file).map_err(|e| fault(e.to_string()))?);
    if let Some(baseline_path) = baseline {
        let base = parse_transcript(&read(baseline_path)?).map_err(|e| fault(e.to_string()))?;
        print!("{}", render_comparison(&file, &base).map_err(|e| fault(e.to_string()))?);
    }
    Ok(0)
}
