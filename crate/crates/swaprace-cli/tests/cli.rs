//! End-to-end tests of the binary: exit codes, file round trips, and the
//! determinism contract.

use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_swaprace"))
}

fn run_args(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

#[test]
fn solo_run_writes_four_events_and_exits_zero() {
    let dir = TempDir::new().unwrap();
    let trace = dir.path().join("t.jsonl");
    let out = run_args(&[
        "run", "--n", "2", "--k", "1", "--m", "2", "--inputs", "0,1", "--schedule", "solo:p0",
        "--out", trace.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{out:?}");
    let text = std::fs::read_to_string(&trace).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    // Header + 4 events + footer.
    assert_eq!(lines.len(), 6);
    let last_event: serde_json::Value = serde_json::from_str(lines[4]).unwrap();
    assert_eq!(last_event["decide"], 0);
    assert_eq!(last_event["pid"], 0);
}

#[test]
fn random_runs_with_equal_seeds_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    for path in [&a, &b] {
        let out = run_args(&[
            "run", "--n", "3", "--k", "1", "--m", "2", "--inputs", "0,1,1", "--schedule",
            "random", "--seed", "7", "--out", path.to_str().unwrap(),
        ]);
        assert!(code(&out) == 0 || code(&out) == 2, "{out:?}");
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn seed_env_var_matches_explicit_seed() {
    let dir = TempDir::new().unwrap();
    let via_flag = dir.path().join("flag.jsonl");
    let via_env = dir.path().join("env.jsonl");
    let out = run_args(&[
        "run", "--n", "3", "--k", "1", "--m", "2", "--inputs", "0,1,0", "--schedule", "random",
        "--seed", "99", "--out", via_flag.to_str().unwrap(),
    ]);
    assert!(code(&out) == 0 || code(&out) == 2);
    let out = bin()
        .env("SWAPRACE_SEED", "99")
        .args([
            "run", "--n", "3", "--k", "1", "--m", "2", "--inputs", "0,1,0", "--schedule",
            "random", "--out", via_env.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.code() == Some(0) || out.status.code() == Some(2));
    assert_eq!(
        std::fs::read(&via_flag).unwrap(),
        std::fs::read(&via_env).unwrap()
    );
}

#[test]
fn mismatched_inputs_are_a_usage_error() {
    let out = run_args(&[
        "run", "--n", "2", "--k", "1", "--m", "2", "--inputs", "0,1,2", "--schedule", "solo:p0",
    ]);
    assert_eq!(code(&out), 64);
    let out = run_args(&[
        "run", "--n", "2", "--k", "1", "--m", "2", "--inputs", "0,2", "--schedule", "solo:p0",
    ]);
    assert_eq!(code(&out), 64, "input outside the value domain");
}

fn write_valid_trace(dir: &Path) -> std::path::PathBuf {
    let trace = dir.join("valid.jsonl");
    let out = run_args(&[
        "run", "--n", "3", "--k", "1", "--m", "2", "--inputs", "0,1,1", "--schedule", "random",
        "--seed", "5", "--out", trace.to_str().unwrap(),
    ]);
    assert!(code(&out) == 0 || code(&out) == 2);
    trace
}

#[test]
fn check_passes_on_valid_traces_and_rejects_bad_property_names() {
    let dir = TempDir::new().unwrap();
    let trace = write_valid_trace(dir.path());
    let out = run_args(&[
        "check", "--trace", trace.to_str().unwrap(), "--properties",
        "k-agreement,validity,lap-observations,total-witness,many-processes",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let out = run_args(&[
        "check", "--trace", trace.to_str().unwrap(), "--properties", "nonsense",
    ]);
    assert_eq!(code(&out), 64);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("k-agreement"), "usage error lists valid names");

    let out = run_args(&["check", "--trace", trace.to_str().unwrap(), "--properties", ""]);
    assert_eq!(code(&out), 64, "empty property list is a usage error");
}

#[test]
fn tampered_traces_fail_check_and_replay() {
    let dir = TempDir::new().unwrap();
    let trace = write_valid_trace(dir.path());
    let text = std::fs::read_to_string(&trace).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    // Corrupt one response counter in the middle of the run.
    let idx = lines.len() / 2;
    lines[idx] = lines[idx].replace("\"resp\":{\"counter\":[", "\"resp\":{\"counter\":[9,");
    let tampered = dir.path().join("tampered.jsonl");
    std::fs::write(&tampered, lines.join("\n") + "\n").unwrap();

    let out = run_args(&[
        "check", "--trace", tampered.to_str().unwrap(), "--properties", "lap-observations",
    ]);
    assert_eq!(code(&out), 1, "{}", String::from_utf8_lossy(&out.stdout));
    let report = String::from_utf8_lossy(&out.stdout);
    assert!(report.contains("fail"));
    assert!(report.contains("witness"));

    let out = run_args(&["replay", "--trace", tampered.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
}

#[test]
fn replay_accepts_what_run_writes() {
    let dir = TempDir::new().unwrap();
    let trace = write_valid_trace(dir.path());
    let out = run_args(&["replay", "--trace", trace.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
}

#[test]
fn paired_traces_round_trip_through_check() {
    let dir = TempDir::new().unwrap();
    let trace = dir.path().join("paired.jsonl");
    let out = run_args(&[
        "run", "--n", "4", "--k", "2", "--m", "4", "--algo", "paired", "--inputs", "0,1,2,3",
        "--schedule", "round-robin", "--out", trace.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let out = run_args(&[
        "check", "--trace", trace.to_str().unwrap(), "--properties", "k-agreement,validity",
    ]);
    assert_eq!(code(&out), 0);
    // Lap-specific properties do not apply to paired traces.
    let out = run_args(&[
        "check", "--trace", trace.to_str().unwrap(), "--properties", "lap-observations",
    ]);
    assert_eq!(code(&out), 64);
    let out = run_args(&["replay", "--trace", trace.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
}

#[test]
fn adversary_violation_exits_one_and_its_trace_replays() {
    let dir = TempDir::new().unwrap();
    let summary = dir.path().join("summary.json");
    let trace = dir.path().join("violation.jsonl");
    let out = run_args(&[
        "adversary", "--n", "3", "--k", "1", "--objects", "1",
        "--out", summary.to_str().unwrap(), "--trace-out", trace.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1, "violation is the expected outcome");
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&summary).unwrap()).unwrap();
    assert_eq!(doc["verdict"], "violation");
    assert_eq!(doc["under_provisioned"], true);

    let out = run_args(&["replay", "--trace", trace.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "violation trace is a real execution");
    // And the checker confirms the agreement failure.
    let out = run_args(&[
        "check", "--trace", trace.to_str().unwrap(), "--properties", "k-agreement",
    ]);
    assert_eq!(code(&out), 1);
    // while validity still holds on it.
    let out = run_args(&[
        "check", "--trace", trace.to_str().unwrap(), "--properties", "validity",
    ]);
    assert_eq!(code(&out), 0);
}

#[test]
fn adversary_certificate_exits_zero_with_exact_consumption() {
    let out = run_args(&["adversary", "--n", "4", "--k", "1", "--objects", "3"]);
    assert_eq!(code(&out), 0);
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["verdict"], "certificate");
    assert_eq!(doc["consumed"], 3);
    assert_eq!(doc["q_count"], 3);
}

#[test]
fn adversary_k2_reports_the_branch_it_took() {
    let out = run_args(&[
        "adversary", "--n", "4", "--k", "2", "--objects", "1", "--budget", "300",
    ]);
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    // Either a direct violation or a reduction chain ending in a verdict.
    let verdict = doc["verdict"].as_str().unwrap();
    assert!(verdict == "violation" || verdict == "certificate");
    assert!(doc["reductions"].as_array().is_some_and(|r| !r.is_empty()));
    assert_eq!(doc["base_k"], 1);
    match verdict {
        "violation" => assert_eq!(code(&out), 1),
        _ => assert_eq!(code(&out), 0),
    }
}

#[test]
fn explore_reports_safety_and_honors_the_state_budget() {
    let out = run_args(&[
        "explore", "--n", "2", "--k", "1", "--m", "2", "--inputs", "0,1", "--depth", "14",
    ]);
    assert_eq!(code(&out), 0);
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["max_distinct_decided"], 1);
    assert_eq!(doc["validity_ok"], true);

    let out = run_args(&[
        "explore", "--n", "2", "--k", "1", "--m", "2", "--inputs", "0,1", "--depth", "0",
    ]);
    assert_eq!(code(&out), 0);
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["max_distinct_decided"], 0);

    let out = bin()
        .env("SWAPRACE_STATE_BUDGET", "4")
        .args([
            "explore", "--n", "3", "--k", "1", "--m", "2", "--inputs", "0,1,1", "--depth", "8",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "truncation exits 2");
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["truncated"], true);
}

#[test]
fn valency_classifies_the_mixed_initial_configuration() {
    let out = run_args(&[
        "valency", "--n", "3", "--k", "1", "--m", "2", "--inputs", "0,1,1", "--q", "q0,q1",
        "--depth", "12",
    ]);
    assert_eq!(code(&out), 0);
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["classification"]["class"], "bivalent");
}

#[test]
fn unknown_flags_exit_with_the_usage_code() {
    let out = run_args(&["run", "--bogus"]);
    assert_eq!(code(&out), 64);
    let out = run_args(&["frobnicate"]);
    assert_eq!(code(&out), 64);
}

#[test]
fn a_trace_header_line_doubles_as_a_run_config() {
    let dir = TempDir::new().unwrap();
    let trace = write_valid_trace(dir.path());
    let header = std::fs::read_to_string(&trace)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string();
    let config = dir.path().join("spec.json");
    std::fs::write(&config, header + "\n").unwrap();

    let rerun = dir.path().join("rerun.jsonl");
    let out = run_args(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--out",
        rerun.to_str().unwrap(),
    ]);
    assert!(code(&out) == 0 || code(&out) == 2);
    assert_eq!(
        std::fs::read(&trace).unwrap(),
        std::fs::read(&rerun).unwrap(),
        "config-driven rerun reproduces the original trace"
    );
}

#[test]
fn run_without_config_requires_the_instance_flags() {
    let out = run_args(&["run", "--n", "2", "--k", "1", "--m", "2"]);
    assert_eq!(code(&out), 64);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("--inputs"), "{err}");
}
