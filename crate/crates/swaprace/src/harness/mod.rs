//! Execution driver: configurations, schedulers, traces, replay, and
//! indistinguishability.
//!
//! A configuration is a value — object store, one local state per process,
//! and the decisions made so far. Steps mutate a configuration in place;
//! branching exploration clones it. Everything here is deterministic:
//! the same protocol, inputs, and schedule produce the same trace, byte
//! for byte.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec;
use crate::memory::{MemoryError, ObjectId, ObjectStore, ProcessId};
use crate::protocol::{Decision, PendingOp, Protocol, ProtocolError};

pub mod format;

/// Object values plus per-process states and decisions; the complete
/// instantaneous state of a run.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Configuration<S, V> {
    pub store: ObjectStore<V>,
    pub processes: Vec<S>,
    pub decisions: Vec<Decision>,
    pub step_count: u64,
}

/// Configuration type of a given protocol.
pub type Config<P> = Configuration<<P as Protocol>::State, <P as Protocol>::Value>;

impl<S, V> Configuration<S, V> {
    /// Distinct values decided so far, ascending.
    pub fn decided_values(&self) -> Vec<u32> {
        let mut vs: Vec<u32> = self.decisions.iter().map(|d| d.value).collect();
        vs.sort_unstable();
        vs.dedup();
        vs
    }

    /// Value of one object in this configuration.
    pub fn value_of(&self, id: ObjectId) -> Result<&V, MemoryError>
    where
        V: Clone + PartialEq,
    {
        self.store.value(id)
    }
}

/// How the scheduler picks the next process.
///
/// The random scheduler draws from ChaCha8 keyed by the 64-bit seed; at
/// each step the next process is `undecided[rng.next_u64() % undecided.len()]`.
/// That recipe is part of the trace format: equal seeds give equal traces.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Schedule {
    Solo {
        pid: ProcessId,
    },
    /// Cycles through `order` (ascending ids when omitted), silently
    /// skipping decided processes.
    RoundRobin {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        order: Option<Vec<ProcessId>>,
    },
    Random {
        seed: u64,
        /// Budget of the schedule itself, on top of the run's step limit.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        steps: Option<u64>,
    },
    /// Exact process sequence. Naming a decided or unknown process is an
    /// error: explicit schedules encode constructions and must be exact.
    Explicit {
        pids: Vec<ProcessId>,
    },
}

impl Schedule {
    pub fn seed(&self) -> Option<u64> {
        match self {
            Schedule::Random { seed, .. } => Some(*seed),
            _ => None,
        }
    }
}

/// Why a run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunOutcome {
    /// Every process the schedule was waiting on has decided.
    Completed,
    /// The step limit cut the run short.
    StepLimit,
    /// The schedule ran out of entries (or its own budget) first.
    ScheduleExhausted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    Swap,
    Read,
}

/// One recorded step. `step` is the 0-based position in the run; `arg` is
/// absent for reads; `decide` carries the value if this step decided.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event<V> {
    pub step: u64,
    pub pid: ProcessId,
    pub op: OpKind,
    pub obj: ObjectId,
    pub arg: Option<V>,
    pub resp: V,
    pub decide: Option<u32>,
}

/// First line of a trace file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub algo: String,
    pub n: u32,
    pub k: u32,
    pub m: u32,
    pub objects: u32,
    pub inputs: Vec<u32>,
    pub schedule: Schedule,
    pub seed: Option<u64>,
}

/// Complete record of one run; replaying `events` from the initial
/// configuration reproduces `final_config` exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace<S, V> {
    pub header: TraceHeader,
    pub events: Vec<Event<V>>,
    pub outcome: RunOutcome,
    pub final_config: Configuration<S, V>,
}

/// Trace type of a given protocol.
pub type ProtocolTrace<P> = Trace<<P as Protocol>::State, <P as Protocol>::Value>;

impl<S, V> Trace<S, V> {
    pub fn decisions(&self) -> &[Decision] {
        &self.final_config.decisions
    }

    pub fn decided_values(&self) -> Vec<u32> {
        self.final_config.decided_values()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HarnessError {
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error("expected {expected} inputs, got {got}")]
    InputsLength { expected: u32, got: usize },
    #[error("schedule entry {index} names {reason} process p{pid}")]
    ScheduleError {
        index: usize,
        pid: u32,
        reason: &'static str,
    },
    #[error("process p{0} has decided and cannot step")]
    StepDecided(u32),
    #[error("process p{pid} out of range for {n} processes")]
    UnknownProcess { pid: u32, n: u32 },
    #[error("solo run by p{pid} exceeded the {cap}-step cap: not obstruction-free")]
    SoloCapExceeded { pid: u32, cap: u64 },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReplayError {
    #[error("trace header does not match protocol parameters: {0}")]
    HeaderMismatch(String),
    #[error("replay diverged at event {index}: {detail}")]
    Divergence { index: usize, detail: String },
    #[error("replayed final configuration differs from the recorded one")]
    FinalMismatch,
    #[error(transparent)]
    Harness(#[from] HarnessError),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MirrorError {
    #[error("configurations are distinguishable to the group")]
    NotIndistinguishable,
    #[error("event {index} is by p{pid}, outside the group")]
    NotGroupOnly { index: usize, pid: u32 },
    #[error("response mismatch at event {index} on object {object}: an accessed object differed")]
    ResponseMismatch { index: usize, object: u32 },
    #[error(transparent)]
    Harness(#[from] HarnessError),
}

/// Default run budget: a generous multiple of the solo bound, so livelock
/// under contention is observable but runs terminate.
pub fn default_step_limit(n: u32, object_count: u32) -> u64 {
    16 * n as u64 * object_count as u64
}

/// Builds the configuration before any steps. Processes that decide
/// during initialization (without shared-memory steps) are recorded with
/// `step_index` 0.
pub fn initial_config<P: Protocol>(p: &P, inputs: &[u32]) -> Result<Config<P>, HarnessError> {
    let params = p.params();
    if inputs.len() != params.n as usize {
        return Err(HarnessError::InputsLength {
            expected: params.n,
            got: inputs.len(),
        });
    }
    let mut processes = Vec::with_capacity(inputs.len());
    let mut decisions = Vec::new();
    for (i, &input) in inputs.iter().enumerate() {
        let pid = ProcessId(i as u32);
        let state = p.init_process(pid, input)?;
        if let Some(value) = p.decided_value(&state) {
            decisions.push(Decision {
                process: pid,
                value,
                step_index: 0,
            });
        }
        processes.push(state);
    }
    Ok(Configuration {
        store: ObjectStore::new(params.object_count, p.initial_value()),
        processes,
        decisions,
        step_count: 0,
    })
}

/// Applies one step by `pid`: its poised operation, the response, and the
/// trailing local computation.
pub fn step<P: Protocol>(
    p: &P,
    config: &mut Config<P>,
    pid: ProcessId,
) -> Result<Event<P::Value>, HarnessError> {
    let idx = pid.index();
    if idx >= config.processes.len() {
        return Err(HarnessError::UnknownProcess {
            pid: pid.0,
            n: config.processes.len() as u32,
        });
    }
    if p.decided_value(&config.processes[idx]).is_some() {
        return Err(HarnessError::StepDecided(pid.0));
    }
    let op = p
        .poised(&config.processes[idx], pid)
        .expect("undecided process must be poised");
    let (kind, obj, arg, resp) = match op {
        PendingOp::Swap { object, argument } => {
            let resp = config.store.swap(object, argument.clone())?;
            (OpKind::Swap, object, Some(argument), resp)
        }
        PendingOp::Read { object } => {
            let resp = config.store.read(object)?.clone();
            (OpKind::Read, object, None, resp)
        }
    };
    let out = p.apply_response(&config.processes[idx], pid, &resp)?;
    config.processes[idx] = out.state;
    let step_index = config.step_count;
    config.step_count += 1;
    if let Some(value) = out.decision {
        config.decisions.push(Decision {
            process: pid,
            value,
            step_index: config.step_count,
        });
    }
    Ok(Event {
        step: step_index,
        pid,
        op: kind,
        obj,
        arg,
        resp,
        decide: out.decision,
    })
}

fn undecided<P: Protocol>(p: &P, config: &Config<P>) -> Vec<ProcessId> {
    config
        .processes
        .iter()
        .enumerate()
        .filter(|(_, s)| p.decided_value(s).is_none())
        .map(|(i, _)| ProcessId(i as u32))
        .collect()
}

/// Runs `schedule` from the initial configuration for `inputs`, recording
/// every step. `step_limit` defaults to [`default_step_limit`].
pub fn run<P: Protocol>(
    p: &P,
    inputs: &[u32],
    schedule: &Schedule,
    step_limit: Option<u64>,
) -> Result<ProtocolTrace<P>, HarnessError> {
    let params = p.params();
    let limit = step_limit.unwrap_or_else(|| default_step_limit(params.n, params.object_count));
    let mut config = initial_config(p, inputs)?;
    let mut events = Vec::new();

    let outcome = match schedule {
        Schedule::Solo { pid } => {
            if pid.index() >= params.n as usize {
                return Err(HarnessError::UnknownProcess {
                    pid: pid.0,
                    n: params.n,
                });
            }
            loop {
                if p.decided_value(&config.processes[pid.index()]).is_some() {
                    break RunOutcome::Completed;
                }
                if events.len() as u64 >= limit {
                    break RunOutcome::StepLimit;
                }
                events.push(step(p, &mut config, *pid)?);
            }
        }
        Schedule::RoundRobin { order } => {
            let order: Vec<ProcessId> = match order {
                Some(o) => o.clone(),
                None => (0..params.n).map(ProcessId).collect(),
            };
            let mut cursor = 0usize;
            loop {
                if undecided(p, &config).is_empty() {
                    break RunOutcome::Completed;
                }
                if events.len() as u64 >= limit {
                    break RunOutcome::StepLimit;
                }
                // Advance to the next undecided entry in cyclic order.
                let mut took = false;
                for _ in 0..order.len() {
                    let pid = order[cursor % order.len()];
                    cursor += 1;
                    if pid.index() >= params.n as usize {
                        return Err(HarnessError::UnknownProcess {
                            pid: pid.0,
                            n: params.n,
                        });
                    }
                    if p.decided_value(&config.processes[pid.index()]).is_none() {
                        events.push(step(p, &mut config, pid)?);
                        took = true;
                        break;
                    }
                }
                if !took {
                    // Order covers no undecided process.
                    break RunOutcome::ScheduleExhausted;
                }
            }
        }
        Schedule::Random { seed, steps } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let budget = steps.unwrap_or(u64::MAX);
            loop {
                let live = undecided(p, &config);
                if live.is_empty() {
                    break RunOutcome::Completed;
                }
                if (events.len() as u64) >= budget {
                    break RunOutcome::ScheduleExhausted;
                }
                if events.len() as u64 >= limit {
                    break RunOutcome::StepLimit;
                }
                let pick = (rng.next_u64() % live.len() as u64) as usize;
                events.push(step(p, &mut config, live[pick])?);
            }
        }
        Schedule::Explicit { pids } => {
            let mut outcome = RunOutcome::ScheduleExhausted;
            for (index, pid) in pids.iter().enumerate() {
                if pid.index() >= params.n as usize {
                    return Err(HarnessError::ScheduleError {
                        index,
                        pid: pid.0,
                        reason: "out-of-range",
                    });
                }
                if p.decided_value(&config.processes[pid.index()]).is_some() {
                    return Err(HarnessError::ScheduleError {
                        index,
                        pid: pid.0,
                        reason: "decided",
                    });
                }
                if events.len() as u64 >= limit {
                    outcome = RunOutcome::StepLimit;
                    break;
                }
                events.push(step(p, &mut config, *pid)?);
            }
            if outcome == RunOutcome::ScheduleExhausted && undecided(p, &config).is_empty() {
                outcome = RunOutcome::Completed;
            }
            outcome
        }
    };

    Ok(Trace {
        header: TraceHeader {
            algo: p.name().to_string(),
            n: params.n,
            k: params.k,
            m: params.m,
            objects: params.object_count,
            inputs: inputs.to_vec(),
            schedule: schedule.clone(),
            seed: schedule.seed(),
        },
        events,
        outcome,
        final_config: config,
    })
}

/// Inputs and schedule for one run in a batch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSpec {
    pub inputs: Vec<u32>,
    pub schedule: Schedule,
    pub step_limit: Option<u64>,
}

/// Executes independent runs, in parallel when asked for.
pub fn run_many<P: Protocol>(
    p: &P,
    specs: &[RunSpec],
    parallel: bool,
) -> Vec<Result<ProtocolTrace<P>, HarnessError>> {
    exec::map_vec(specs, parallel, |spec| {
        run(p, &spec.inputs, &spec.schedule, spec.step_limit)
    })
}

/// Result of running one process alone until it decides.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SoloRun<S, V> {
    pub events: Vec<Event<V>>,
    pub final_config: Configuration<S, V>,
    pub decided: u32,
}

/// Runs `pid` alone from `from` until it decides. Exceeding `cap` steps is
/// reported as an obstruction-freedom violation.
pub fn solo_run<P: Protocol>(
    p: &P,
    from: &Config<P>,
    pid: ProcessId,
    cap: u64,
) -> Result<SoloRun<P::State, P::Value>, HarnessError> {
    let mut config = from.clone();
    let mut events = Vec::new();
    loop {
        if let Some(decided) = p.decided_value(&config.processes[pid.index()]) {
            return Ok(SoloRun {
                events,
                final_config: config,
                decided,
            });
        }
        if events.len() as u64 >= cap {
            return Err(HarnessError::SoloCapExceeded { pid: pid.0, cap });
        }
        events.push(step(p, &mut config, pid)?);
    }
}

/// Re-executes a trace from its initial configuration, checking every
/// recorded operation, response, and decision, and finally the recorded
/// final configuration.
pub fn replay<P: Protocol>(p: &P, trace: &ProtocolTrace<P>) -> Result<Config<P>, ReplayError> {
    let params = p.params();
    if trace.header.n != params.n
        || trace.header.k != params.k
        || trace.header.m != params.m
        || trace.header.objects != params.object_count
        || trace.header.algo != p.name()
    {
        return Err(ReplayError::HeaderMismatch(format!(
            "trace is {} n={} k={} m={} objects={}",
            trace.header.algo, trace.header.n, trace.header.k, trace.header.m, trace.header.objects
        )));
    }
    let mut config = initial_config(p, &trace.header.inputs)?;
    for (index, ev) in trace.events.iter().enumerate() {
        let divergence = |detail: String| ReplayError::Divergence { index, detail };
        if ev.step != index as u64 {
            return Err(divergence(format!("event numbered {}", ev.step)));
        }
        let state = config
            .processes
            .get(ev.pid.index())
            .ok_or_else(|| divergence(format!("unknown process {}", ev.pid)))?;
        let poised = p
            .poised(state, ev.pid)
            .ok_or_else(|| divergence(format!("{} already decided", ev.pid)))?;
        let (kind, obj, arg) = match &poised {
            PendingOp::Swap { object, argument } => (OpKind::Swap, *object, Some(argument.clone())),
            PendingOp::Read { object } => (OpKind::Read, *object, None),
        };
        if kind != ev.op || obj != ev.obj || arg != ev.arg {
            return Err(divergence(format!(
                "poised {:?} on {} with {:?}, recorded {:?} on {} with {:?}",
                kind, obj, arg, ev.op, ev.obj, ev.arg
            )));
        }
        let replayed = step(p, &mut config, ev.pid).map_err(ReplayError::Harness)?;
        if replayed.resp != ev.resp {
            return Err(divergence(format!(
                "response {:?}, recorded {:?}",
                replayed.resp, ev.resp
            )));
        }
        if replayed.decide != ev.decide {
            return Err(divergence(format!(
                "decision {:?}, recorded {:?}",
                replayed.decide, ev.decide
            )));
        }
    }
    if config != trace.final_config {
        return Err(ReplayError::FinalMismatch);
    }
    Ok(config)
}

/// True iff every process in `group` has the same local state in both
/// configurations. Object values are deliberately not compared: they are
/// not part of any process's state.
pub fn indistinguishable<S: PartialEq, V>(
    a: &Configuration<S, V>,
    b: &Configuration<S, V>,
    group: &[ProcessId],
) -> bool {
    group
        .iter()
        .all(|pid| a.processes.get(pid.index()) == b.processes.get(pid.index()))
}

/// A group-only execution re-run from an indistinguishable configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mirrored<S, V> {
    pub events: Vec<Event<V>>,
    pub config: Configuration<S, V>,
}

/// Re-executes `events` (a group-only execution from `c`) from `c_prime`,
/// asserting step-by-step equality of operations and responses. Succeeds
/// exactly when every object the group touches has equal values in `c`
/// and `c_prime` at the moment of access.
pub fn extend_indistinguishably<P: Protocol>(
    p: &P,
    c: &Config<P>,
    c_prime: &Config<P>,
    group: &[ProcessId],
    events: &[Event<P::Value>],
) -> Result<Mirrored<P::State, P::Value>, MirrorError> {
    if !indistinguishable(c, c_prime, group) {
        return Err(MirrorError::NotIndistinguishable);
    }
    let mut config = c_prime.clone();
    let mut mirrored = Vec::with_capacity(events.len());
    for (index, ev) in events.iter().enumerate() {
        if !group.contains(&ev.pid) {
            return Err(MirrorError::NotGroupOnly {
                index,
                pid: ev.pid.0,
            });
        }
        let out = step(p, &mut config, ev.pid)?;
        if out.op != ev.op || out.obj != ev.obj || out.arg != ev.arg {
            return Err(MirrorError::ResponseMismatch {
                index,
                object: ev.obj.0,
            });
        }
        if out.resp != ev.resp {
            return Err(MirrorError::ResponseMismatch {
                index,
                object: ev.obj.0,
            });
        }
        mirrored.push(out);
    }
    Ok(Mirrored {
        events: mirrored,
        config,
    })
}
