//! Command-line front end: run schedules, check traces, probe space
//! lower bounds, and explore state spaces.
//!
//! Exit codes are a stable contract: 0 pass, 1 property violation,
//! 2 resource bound hit, 64 usage error.

use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use swaprace::adversary::{self, AdversaryOptions, AdversaryOutcome};
use swaprace::analysis::{self, AnalysisOptions};
use swaprace::checkers::{self, CheckReport};
use swaprace::harness::{self, format, ProtocolTrace, RunOutcome, Schedule};
use swaprace::{LapRace, PairwiseAgreement, ProcessId, Protocol};

const EXIT_OK: u8 = 0;
const EXIT_VIOLATION: u8 = 1;
const EXIT_RESOURCE: u8 = 2;
const EXIT_USAGE: u8 = 64;

const SEED_ENV: &str = "SWAPRACE_SEED";
const STATE_BUDGET_ENV: &str = "SWAPRACE_STATE_BUDGET";

#[derive(Parser)]
#[command(
    name = "swaprace",
    version,
    about = "Simulate, check, and stress k-set agreement over swap objects"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one schedule and write the trace.
    Run(RunArgs),
    /// Check recorded traces against named properties.
    Check(CheckArgs),
    /// Re-execute a trace and verify it reproduces its final state.
    Replay(ReplayArgs),
    /// Probe an instance with the object-consuming adversary.
    Adversary(AdversaryArgs),
    /// Exhaustively explore all schedules to a depth bound.
    Explore(ExploreArgs),
    /// Classify which values a process set can still decide.
    Valency(ValencyArgs),
}

#[derive(Args)]
struct InstanceArgs {
    #[arg(long)]
    n: u32,
    #[arg(long)]
    k: u32,
    #[arg(long)]
    m: u32,
    /// Object count; defaults to n - k.
    #[arg(long)]
    objects: Option<u32>,
    /// Comma-separated inputs, one per process.
    #[arg(long)]
    inputs: String,
    /// Protocol: lap-race or paired.
    #[arg(long, default_value = "lap-race")]
    algo: String,
}

#[derive(Args)]
struct RunArgs {
    /// Run-parameters file with the same fields as a trace header line;
    /// replaces the individual instance and schedule flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<u32>,
    #[arg(long)]
    k: Option<u32>,
    #[arg(long)]
    m: Option<u32>,
    /// Object count; defaults to n - k.
    #[arg(long)]
    objects: Option<u32>,
    /// Comma-separated inputs, one per process.
    #[arg(long)]
    inputs: Option<String>,
    /// Protocol: lap-race or paired.
    #[arg(long, default_value = "lap-race")]
    algo: String,
    /// solo:p0 | round-robin | random | explicit:p0,p1,...
    #[arg(long)]
    schedule: Option<String>,
    /// Seed for the random schedule; falls back to SWAPRACE_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<u64>,
    /// Trace file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long)]
    trace: PathBuf,
    /// Comma-separated list from: k-agreement, validity,
    /// lap-observations, total-witness, many-processes.
    #[arg(long)]
    properties: String,
    /// Report file; stdout always gets a copy.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    trace: PathBuf,
}

#[derive(Args)]
struct AdversaryArgs {
    #[arg(long)]
    n: u32,
    #[arg(long)]
    k: u32,
    #[arg(long)]
    objects: u32,
    #[arg(long)]
    seed: Option<u64>,
    /// Schedule-search budget for the k > 1 split.
    #[arg(long)]
    budget: Option<u64>,
    /// Summary file; stdout always gets a copy.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Where to write the violation trace, if one is found.
    #[arg(long)]
    trace_out: Option<PathBuf>,
}

#[derive(Args)]
struct ExploreArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    #[arg(long)]
    depth: u32,
    /// Distinct-configuration budget; falls back to SWAPRACE_STATE_BUDGET.
    #[arg(long)]
    state_budget: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValencyArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    /// Subject processes, e.g. q0,q1 or p0,p1.
    #[arg(long)]
    q: String,
    #[arg(long)]
    depth: u32,
    /// Optional explicit prefix to advance the configuration first.
    #[arg(long)]
    prefix: Option<String>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are not usage errors.
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let code = match cli.cmd {
        Cmd::Run(args) => cmd_run(args),
        Cmd::Check(args) => cmd_check(args),
        Cmd::Replay(args) => cmd_replay(args),
        Cmd::Adversary(args) => cmd_adversary(args),
        Cmd::Explore(args) => cmd_explore(args),
        Cmd::Valency(args) => cmd_valency(args),
    };
    match code {
        Ok(code) => ExitCode::from(code),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}

type CmdResult = Result<u8, String>;

fn parse_pid(text: &str) -> Result<ProcessId, String> {
    let digits = text.trim().trim_start_matches(['p', 'q']);
    digits
        .parse::<u32>()
        .map(ProcessId)
        .map_err(|_| format!("bad process id {text:?}"))
}

fn parse_pids(text: &str) -> Result<Vec<ProcessId>, String> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(parse_pid)
        .collect()
}

fn parse_inputs(text: &str) -> Result<Vec<u32>, String> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse::<u32>()
                .map_err(|_| format!("bad input value {s:?}"))
        })
        .collect()
}

fn env_seed() -> Option<u64> {
    std::env::var(SEED_ENV).ok().and_then(|s| s.parse().ok())
}

fn env_state_budget() -> Option<usize> {
    std::env::var(STATE_BUDGET_ENV)
        .ok()
        .and_then(|s| s.parse().ok())
}

fn parse_schedule(text: &str, seed: Option<u64>) -> Result<Schedule, String> {
    let seed = seed.or_else(env_seed).unwrap_or(0);
    if let Some(pid) = text.strip_prefix("solo:") {
        return Ok(Schedule::Solo {
            pid: parse_pid(pid)?,
        });
    }
    if let Some(pids) = text.strip_prefix("explicit:") {
        return Ok(Schedule::Explicit {
            pids: parse_pids(pids)?,
        });
    }
    match text {
        "round-robin" => Ok(Schedule::RoundRobin { order: None }),
        "random" => Ok(Schedule::Random { seed, steps: None }),
        "explicit" => Ok(Schedule::Explicit { pids: vec![] }),
        other => Err(format!(
            "unknown schedule {other:?}; use solo:<pid>, round-robin, random, or explicit:<pids>"
        )),
    }
}

fn write_output(path: Option<&Path>, bytes: &[u8]) -> Result<(), String> {
    match path {
        Some(path) => {
            let mut f = File::create(path).map_err(|e| format!("{}: {e}", path.display()))?;
            f.write_all(bytes)
                .map_err(|e| format!("{}: {e}", path.display()))?;
        }
        None => {
            io::stdout()
                .write_all(bytes)
                .map_err(|e| format!("stdout: {e}"))?;
        }
    }
    Ok(())
}

enum Instance {
    LapRace(LapRace),
    Paired(PairwiseAgreement),
}

fn build_protocol(
    algo: &str,
    n: u32,
    k: u32,
    m: u32,
    objects: Option<u32>,
) -> Result<Instance, String> {
    match algo {
        "lap-race" => {
            let objects = objects.unwrap_or_else(|| n.saturating_sub(k));
            Ok(Instance::LapRace(
                LapRace::with_objects(n, k, m, objects).map_err(|e| e.to_string())?,
            ))
        }
        "paired" => {
            if objects.is_some_and(|o| o != n - k) {
                return Err("paired protocol always uses n - k objects".into());
            }
            Ok(Instance::Paired(
                PairwiseAgreement::new(n, k, m).map_err(|e| e.to_string())?,
            ))
        }
        other => Err(format!("unknown algo {other:?}; use lap-race or paired")),
    }
}

fn build_instance(args: &InstanceArgs) -> Result<(Instance, Vec<u32>), String> {
    let inputs = parse_inputs(&args.inputs)?;
    let instance = build_protocol(&args.algo, args.n, args.k, args.m, args.objects)?;
    Ok((instance, inputs))
}

fn run_one<P: Protocol>(
    p: &P,
    inputs: &[u32],
    schedule: &Schedule,
    steps: Option<u64>,
    out: Option<&Path>,
) -> CmdResult {
    let trace = harness::run(p, inputs, schedule, steps).map_err(|e| e.to_string())?;
    let bytes = format::trace_to_bytes(&trace).map_err(|e| e.to_string())?;
    write_output(out, &bytes)?;
    Ok(match trace.outcome {
        RunOutcome::StepLimit => EXIT_RESOURCE,
        RunOutcome::Completed | RunOutcome::ScheduleExhausted => EXIT_OK,
    })
}

fn cmd_run(args: RunArgs) -> CmdResult {
    let (instance, inputs, schedule) = if let Some(path) = &args.config {
        let text =
            std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let first = text.lines().next().unwrap_or_default();
        let header: harness::TraceHeader =
            serde_json::from_str(first).map_err(|e| format!("{}: {e}", path.display()))?;
        let instance = build_protocol(
            &header.algo,
            header.n,
            header.k,
            header.m,
            Some(header.objects),
        )?;
        (instance, header.inputs, header.schedule)
    } else {
        let missing = |flag: &str| format!("--{flag} is required (or pass --config)");
        let n = args.n.ok_or_else(|| missing("n"))?;
        let k = args.k.ok_or_else(|| missing("k"))?;
        let m = args.m.ok_or_else(|| missing("m"))?;
        let inputs = parse_inputs(args.inputs.as_deref().ok_or_else(|| missing("inputs"))?)?;
        let schedule = parse_schedule(
            args.schedule.as_deref().ok_or_else(|| missing("schedule"))?,
            args.seed,
        )?;
        let instance = build_protocol(&args.algo, n, k, m, args.objects)?;
        (instance, inputs, schedule)
    };
    match instance {
        Instance::LapRace(p) => run_one(&p, &inputs, &schedule, args.steps, args.out.as_deref()),
        Instance::Paired(p) => run_one(&p, &inputs, &schedule, args.steps, args.out.as_deref()),
    }
}

fn open_reader(path: &Path) -> Result<BufReader<File>, String> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| format!("{}: {e}", path.display()))
}

const LAP_PROPERTIES: [&str; 5] = [
    "k-agreement",
    "validity",
    "lap-observations",
    "total-witness",
    "many-processes",
];
const GENERIC_PROPERTIES: [&str; 2] = ["k-agreement", "validity"];

fn cmd_check(args: CheckArgs) -> CmdResult {
    let names: Vec<String> = args
        .properties
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    if names.is_empty() {
        return Err(format!(
            "no properties given; valid names: {}",
            LAP_PROPERTIES.join(", ")
        ));
    }

    let header = format::read_header(open_reader(&args.trace)?).map_err(|e| e.to_string())?;
    let valid: &[&str] = match header.algo.as_str() {
        "lap-race" => &LAP_PROPERTIES,
        _ => &GENERIC_PROPERTIES,
    };
    for name in &names {
        if !valid.contains(&name.as_str()) {
            return Err(format!(
                "unknown property {name:?} for a {} trace; valid names: {}",
                header.algo,
                valid.join(", ")
            ));
        }
    }

    let reports: Vec<CheckReport> = match header.algo.as_str() {
        "lap-race" => {
            let trace: ProtocolTrace<LapRace> =
                format::read_trace(open_reader(&args.trace)?).map_err(|e| e.to_string())?;
            let k = trace.header.k;
            names
                .iter()
                .map(|name| match name.as_str() {
                    "k-agreement" => checkers::check_k_agreement(&[&trace], k),
                    "validity" => checkers::check_validity(&trace),
                    "lap-observations" => checkers::check_lap_observations(&trace),
                    "total-witness" => checkers::check_total_witness(&trace),
                    "many-processes" => checkers::check_manyprocesses(&trace, false),
                    _ => unreachable!("validated above"),
                })
                .collect()
        }
        "paired" => {
            let trace: ProtocolTrace<PairwiseAgreement> =
                format::read_trace(open_reader(&args.trace)?).map_err(|e| e.to_string())?;
            let k = trace.header.k;
            names
                .iter()
                .map(|name| match name.as_str() {
                    "k-agreement" => checkers::check_k_agreement(&[&trace], k),
                    "validity" => checkers::check_validity(&trace),
                    _ => unreachable!("validated above"),
                })
                .collect()
        }
        other => return Err(format!("trace has unknown algo {other:?}")),
    };

    let all_pass = reports.iter().all(|r| r.passed());
    let doc = json!({ "reports": reports });
    let mut bytes = serde_json::to_vec_pretty(&doc).map_err(|e| e.to_string())?;
    bytes.push(b'\n');
    io::stdout().write_all(&bytes).map_err(|e| e.to_string())?;
    if let Some(out) = &args.out {
        write_output(Some(out), &bytes)?;
    }
    Ok(if all_pass { EXIT_OK } else { EXIT_VIOLATION })
}

fn cmd_replay(args: ReplayArgs) -> CmdResult {
    let header = format::read_header(open_reader(&args.trace)?).map_err(|e| e.to_string())?;
    let result = match header.algo.as_str() {
        "lap-race" => {
            let trace: ProtocolTrace<LapRace> =
                format::read_trace(open_reader(&args.trace)?).map_err(|e| e.to_string())?;
            let p = LapRace::with_objects(header.n, header.k, header.m, header.objects)
                .map_err(|e| e.to_string())?;
            harness::replay(&p, &trace)
                .map(|_| ())
                .map_err(|e| e.to_string())
        }
        "paired" => {
            let trace: ProtocolTrace<PairwiseAgreement> =
                format::read_trace(open_reader(&args.trace)?).map_err(|e| e.to_string())?;
            let p = PairwiseAgreement::new(header.n, header.k, header.m)
                .map_err(|e| e.to_string())?;
            harness::replay(&p, &trace)
                .map(|_| ())
                .map_err(|e| e.to_string())
        }
        other => return Err(format!("trace has unknown algo {other:?}")),
    };
    match result {
        Ok(()) => {
            println!("replay ok: final configuration reproduced");
            Ok(EXIT_OK)
        }
        Err(e) => {
            eprintln!("replay failed: {e}");
            Ok(EXIT_VIOLATION)
        }
    }
}

fn cmd_adversary(args: AdversaryArgs) -> CmdResult {
    let opts = AdversaryOptions {
        seed: args.seed.or_else(env_seed).unwrap_or(0),
        search_budget: args.budget.unwrap_or(10_000),
        parallel: true,
        ..AdversaryOptions::default()
    };
    if args.k >= args.n || args.k < 1 {
        return Err(format!("need n > k >= 1, got n={} k={}", args.n, args.k));
    }
    let floor = args.n.div_ceil(args.k) - 1;
    let run = adversary::probe_lap_race(args.n, args.k, args.objects, &opts)
        .map_err(|e| e.to_string())?;

    let (verdict, consumed, q_count, values) = match &run.outcome {
        AdversaryOutcome::Certificate(cert) => {
            ("certificate", cert.consumed.len(), cert.q_count, Vec::new())
        }
        AdversaryOutcome::Violation(v) => ("violation", 0, 0, v.values.clone()),
    };
    let summary = json!({
        "verdict": verdict,
        "consumed": consumed,
        "q_count": q_count,
        "object_count": args.objects,
        "expected_floor": floor,
        "under_provisioned": args.objects < floor,
        "note": if verdict == "violation" {
            "violation is the expected outcome below the object floor"
        } else {
            "quiet set consumed one fresh object each"
        },
        "decided_values": values,
        "base_n": run.base_n,
        "base_k": run.base_k,
        "reductions": run.reductions,
    });
    let mut bytes = serde_json::to_vec_pretty(&summary).map_err(|e| e.to_string())?;
    bytes.push(b'\n');
    io::stdout().write_all(&bytes).map_err(|e| e.to_string())?;
    if let Some(out) = &args.out {
        write_output(Some(out), &bytes)?;
    }
    if let AdversaryOutcome::Violation(v) = &run.outcome {
        if let Some(path) = &args.trace_out {
            let bytes = format::trace_to_bytes(&v.trace).map_err(|e| e.to_string())?;
            write_output(Some(path), &bytes)?;
        }
        return Ok(EXIT_VIOLATION);
    }
    Ok(EXIT_OK)
}

fn cmd_explore(args: ExploreArgs) -> CmdResult {
    let (instance, inputs) = build_instance(&args.instance)?;
    let opts = AnalysisOptions {
        state_budget: args
            .state_budget
            .or_else(env_state_budget)
            .unwrap_or(1 << 22),
        parallel: true,
        solo_cap: None,
    };
    let summary = match &instance {
        Instance::LapRace(p) => analysis::explore(p, &inputs, args.depth, &opts),
        Instance::Paired(p) => analysis::explore(p, &inputs, args.depth, &opts),
    }
    .map_err(|e| e.to_string())?;

    let mut bytes = serde_json::to_vec_pretty(&summary).map_err(|e| e.to_string())?;
    bytes.push(b'\n');
    io::stdout().write_all(&bytes).map_err(|e| e.to_string())?;
    if let Some(out) = &args.out {
        write_output(Some(out), &bytes)?;
    }

    let k = args.instance.k;
    let safe = summary.max_distinct_decided <= k && summary.validity_ok;
    Ok(if !safe {
        EXIT_VIOLATION
    } else if summary.truncated {
        EXIT_RESOURCE
    } else {
        EXIT_OK
    })
}

fn cmd_valency(args: ValencyArgs) -> CmdResult {
    let subject = parse_pids(&args.q)?;
    let prefix = match &args.prefix {
        Some(p) => parse_pids(p)?,
        None => vec![],
    };
    for pid in subject.iter().chain(&prefix) {
        if pid.index() >= args.instance.n as usize {
            return Err(format!("process {pid} out of range for n={}", args.instance.n));
        }
    }
    let (instance, inputs) = build_instance(&args.instance)?;
    let opts = AnalysisOptions {
        parallel: true,
        ..AnalysisOptions::default()
    };
    let report = match &instance {
        Instance::LapRace(p) => {
            let mut config = harness::initial_config(p, &inputs).map_err(|e| e.to_string())?;
            for pid in &prefix {
                harness::step(p, &mut config, *pid).map_err(|e| e.to_string())?;
            }
            analysis::valency(p, &config, &subject, args.depth, &opts)
        }
        Instance::Paired(p) => {
            let mut config = harness::initial_config(p, &inputs).map_err(|e| e.to_string())?;
            for pid in &prefix {
                harness::step(p, &mut config, *pid).map_err(|e| e.to_string())?;
            }
            analysis::valency(p, &config, &subject, args.depth, &opts)
        }
    }
    .map_err(|e| e.to_string())?;

    let mut bytes = serde_json::to_vec_pretty(&report).map_err(|e| e.to_string())?;
    bytes.push(b'\n');
    io::stdout().write_all(&bytes).map_err(|e| e.to_string())?;
    Ok(EXIT_OK)
}
