//! Black-box tests of the `troupe` binary: exit codes, output files, and
//! record/replay through the real process boundary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use troupe::orchestrator::RunOutcome;
use troupe::scenario::{build_demo, build_random, fixture_jsonl};

const CLOCK: &str = "2024-05-01T09:00:00Z";

fn troupe_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_troupe"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let output = cmd.output().expect("binary runs");
    assert!(
        output.status.success(),
        "expected success, got {:?}\nstdout: {}\nstderr: {}",
        output.status.code(),
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
    output
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

/// Demo workspace plus fixture and config files written beside it.
struct DemoDirs {
    _keep: tempfile::TempDir,
    repo: PathBuf,
    fixture: PathBuf,
    task: String,
}

fn demo_dirs() -> DemoDirs {
    let keep = tempfile::tempdir().unwrap();
    let repo = keep.path().join("repo");
    std::fs::create_dir_all(&repo).unwrap();
    let setup = build_demo(&repo).unwrap();
    let fixture = keep.path().join("fixture.jsonl");
    std::fs::write(&fixture, fixture_jsonl(&setup.fixture)).unwrap();
    std::fs::write(
        repo.join("troupe.toml"),
        "test_command = \"sh scripts/check.sh\"\ncorpus_dir = \"docs\"\n",
    )
    .unwrap();
    DemoDirs { _keep: keep, repo, fixture, task: setup.request }
}

fn scripted(path: &Path) -> String {
    format!("scripted:{}", path.display())
}

#[test]
fn no_arguments_is_a_usage_error() {
    let output = troupe_bin().output().unwrap();
    assert_eq!(output.status.code(), Some(64));
}

#[test]
fn help_exits_zero() {
    let output = troupe_bin().arg("--help").output().unwrap();
    assert_eq!(output.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&output.stdout).contains("troupe"));
}

#[test]
fn index_reports_stats_and_persists_a_file_backend() {
    let dirs = demo_dirs();
    let output = run_ok(troupe_bin().args(["index", "--repo"]).arg(&dirs.repo));
    let text = stdout(&output);
    assert!(text.contains("files=") && text.contains("chunks=") && text.contains("skipped="), "{text}");

    let out = tempfile::tempdir().unwrap();
    let index_dir = out.path().join("index");
    run_ok(
        troupe_bin()
            .args(["index", "--backend", "file", "--repo"])
            .arg(&dirs.repo)
            .arg("--out")
            .arg(&index_dir),
    );
    assert!(index_dir.join("manifest.json").is_file());
    assert!(index_dir.join("records.tsv").is_file());

    let bad = troupe_bin()
        .args(["index", "--backend", "file", "--repo"])
        .arg(&dirs.repo)
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(64), "file backend without --out must be a usage error");
}

#[test]
fn run_completes_the_demo_and_writes_outputs() {
    let dirs = demo_dirs();
    let out = tempfile::tempdir().unwrap();
    let output = run_ok(
        troupe_bin()
            .args(["run", "--task", &dirs.task, "--provider", &scripted(&dirs.fixture), "--repo"])
            .arg(&dirs.repo)
            .arg("--out")
            .arg(out.path())
            .arg("--yes")
            .env("TROUPE_FIXED_TIME", CLOCK),
    );
    let text = stdout(&output);
    assert!(text.contains(": done"), "{text}");
    assert!(text.contains("states: Plan -> RetrieveContext"), "{text}");
    assert!(text.contains("test attempts: 2"), "{text}");

    let diff = std::fs::read_to_string(out.path().join("diff.patch")).unwrap();
    assert!(diff.contains("src/blocks/QuoteBlock.ts"));
    let transcript = std::fs::read_to_string(out.path().join("transcript.log")).unwrap();
    assert!(transcript.lines().count() > 10);
    let summary = std::fs::read_to_string(out.path().join("summary.txt")).unwrap();
    assert!(summary.contains("Add a custom quote block"), "{summary}");

    // the run lock must be gone afterwards
    assert!(!dirs.repo.join(".troupe-run.lock").exists());
}

#[test]
fn a_stale_lock_blocks_a_second_run() {
    let dirs = demo_dirs();
    std::fs::write(dirs.repo.join(".troupe-run.lock"), "pid 1\n").unwrap();
    let output = troupe_bin()
        .args(["run", "--task", &dirs.task, "--provider", &scripted(&dirs.fixture), "--repo"])
        .arg(&dirs.repo)
        .arg("--yes")
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(64));
    assert!(String::from_utf8_lossy(&output.stderr).contains("another run appears to be active"));
}

#[test]
fn record_then_replay_reproduces_the_transcript() {
    let first = demo_dirs();
    let out_a = tempfile::tempdir().unwrap();
    let record = out_a.path().join("recorded.jsonl");
    run_ok(
        troupe_bin()
            .args(["run", "--task", &first.task, "--provider", &scripted(&first.fixture), "--repo"])
            .arg(&first.repo)
            .arg("--out")
            .arg(out_a.path())
            .arg("--record")
            .arg(&record)
            .arg("--yes")
            .env("TROUPE_FIXED_TIME", CLOCK),
    );

    let second = demo_dirs();
    let out_b = tempfile::tempdir().unwrap();
    run_ok(
        troupe_bin()
            .args(["replay", "--task", &second.task, "--repo"])
            .arg(&second.repo)
            .arg("--fixture")
            .arg(&record)
            .arg("--out")
            .arg(out_b.path())
            .arg("--yes")
            .env("TROUPE_FIXED_TIME", CLOCK),
    );

    let transcript_a = std::fs::read_to_string(out_a.path().join("transcript.log")).unwrap();
    let transcript_b = std::fs::read_to_string(out_b.path().join("transcript.log")).unwrap();
    assert_eq!(transcript_a, transcript_b, "replay drifted from the recording");
}

#[test]
fn plan_is_a_dry_run_that_prints_steps() {
    let dirs = demo_dirs();
    let output = run_ok(
        troupe_bin()
            .args(["plan", "--task", &dirs.task, "--provider", &scripted(&dirs.fixture), "--repo"])
            .arg(&dirs.repo),
    );
    let text = stdout(&output);
    assert!(text.contains("task: Add a custom quote block"), "{text}");
    assert!(text.contains("1. [frontend-specialist]"), "{text}");
    assert!(text.contains("4. [backend-architect]"), "{text}");
    // nothing was executed
    assert!(!dirs.repo.join("src/blocks/QuoteBlock.ts").exists());
}

#[test]
fn report_summarizes_and_compares_transcripts() {
    let dirs = demo_dirs();
    let out = tempfile::tempdir().unwrap();
    run_ok(
        troupe_bin()
            .args(["run", "--task", &dirs.task, "--provider", &scripted(&dirs.fixture), "--repo"])
            .arg(&dirs.repo)
            .arg("--out")
            .arg(out.path())
            .arg("--yes")
            .env("TROUPE_FIXED_TIME", CLOCK),
    );
    let transcript = out.path().join("transcript.log");

    let report = stdout(&run_ok(troupe_bin().arg("report").arg(&transcript)));
    assert!(report.contains("total tokens:"), "{report}");
    assert!(report.contains("overhead ratio:"), "{report}");

    let compared = stdout(&run_ok(troupe_bin().arg("report").arg(&transcript).arg(&transcript)));
    assert!(compared.contains("tokens vs baseline"), "{compared}");
    assert!(compared.contains("1.00x"), "{compared}");
}

#[test]
fn a_declined_gate_exits_with_the_paused_code() {
    // find a seed whose scenario pauses when the gate declines
    let mut chosen = None;
    for seed in 0..400u64 {
        let probe = tempfile::tempdir().unwrap();
        let setup = build_random(probe.path(), seed).unwrap();
        if setup.expected.outcome == RunOutcome::Paused {
            chosen = Some(seed);
            break;
        }
    }
    let seed = chosen.expect("some seed under 400 pauses");

    let keep = tempfile::tempdir().unwrap();
    let repo = keep.path().join("repo");
    std::fs::create_dir_all(&repo).unwrap();
    let setup = build_random(&repo, seed).unwrap();
    let fixture = keep.path().join("fixture.jsonl");
    std::fs::write(&fixture, fixture_jsonl(&setup.fixture)).unwrap();
    std::fs::write(
        repo.join("troupe.toml"),
        format!(
            "test_command = \"sh scripts/check.sh\"\nmax_test_retries = {}\n",
            setup.config.max_test_retries
        ),
    )
    .unwrap();

    let output = troupe_bin()
        .args(["run", "--task", &setup.request, "--provider", &scripted(&fixture), "--repo"])
        .arg(&repo)
        .arg("--no")
        .env("TROUPE_FIXED_TIME", CLOCK)
        .output()
        .unwrap();
    assert_eq!(
        output.status.code(),
        Some(3),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
    assert!(String::from_utf8_lossy(&output.stdout).contains(": paused"));
}
