//! Lower-bound driver: forces under-provisioned instances into concrete
//! agreement violations, or certifies how many objects a run consumes.
//!
//! The construction pits a set of quiet same-input processes against an
//! execution that already decided other values. Each quiet process runs
//! solo from an all-quiet-input world; because a swap overwrites what it
//! returns, the first time the process touches an object carrying
//! information about the foreign execution it also destroys that
//! information for the rest of the quiet set. Either some quiet process
//! decides without ever telling the two worlds apart — a violation — or
//! every quiet process burns one fresh object, so there must be at least
//! as many objects as quiet processes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::exec;
use crate::harness::{
    self, extend_indistinguishably, initial_config, solo_run, HarnessError, MirrorError,
    ProtocolTrace, Schedule,
};
use crate::memory::{ObjectId, ProcessId};
use crate::protocol::{LapRace, Protocol, ProtocolError};

#[derive(Debug, Clone, Copy)]
pub struct AdversaryOptions {
    /// Solo cap for candidate algorithms, in swaps per object. Exceeding
    /// it is reported as a non-obstruction-free candidate, never as a
    /// space bound.
    pub solo_cap_factor: u64,
    /// Random schedules tried per multi-value execution search.
    pub search_budget: u64,
    /// Length bound for each searched schedule; defaults to the harness
    /// default step limit.
    pub search_step_limit: Option<u64>,
    pub seed: u64,
    pub parallel: bool,
}

impl Default for AdversaryOptions {
    fn default() -> Self {
        AdversaryOptions {
            solo_cap_factor: 64,
            search_budget: 10_000,
            search_step_limit: None,
            seed: 0,
            parallel: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum AdversaryError {
    #[error("invalid adversary setup: {0}")]
    BadParams(String),
    #[error("candidate is not obstruction-free: p{pid} ran {cap} solo steps without deciding")]
    NotObstructionFree { pid: u32, cap: u64 },
    #[error("induction invariant broken: {0}")]
    InductionBroken(String),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

/// One induction step of the consume run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsumeWitness {
    pub process: ProcessId,
    /// Fresh object this process overwrote.
    pub object: ObjectId,
    /// Steps mirrored before the fresh swap.
    pub mirrored_steps: u64,
    /// Whether the fresh swap returned different values in the two
    /// worlds. The values installed afterwards are equal either way.
    pub responses_diverged: bool,
}

/// Evidence that the quiet set consumed one fresh object each.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Certificate {
    pub consumed: Vec<ObjectId>,
    pub q_count: usize,
    pub witnesses: Vec<ConsumeWitness>,
}

/// A single replayable execution deciding more than `k` distinct values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation<P: Protocol> {
    pub trace: ProtocolTrace<P>,
    pub values: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AdversaryOutcome<P: Protocol> {
    Violation(Violation<P>),
    Certificate(Certificate),
}

impl<P: Protocol> AdversaryOutcome<P> {
    pub fn is_violation(&self) -> bool {
        matches!(self, AdversaryOutcome::Violation(_))
    }
}

fn explicit_trace<P: Protocol>(
    p: &P,
    inputs: &[u32],
    pids: Vec<ProcessId>,
) -> Result<ProtocolTrace<P>, HarnessError> {
    let steps = pids.len() as u64;
    harness::run(p, inputs, &Schedule::Explicit { pids }, Some(steps))
}

/// Greedy event deletion: drop schedule entries whose removal keeps the
/// run deciding at least `distinct` values, re-validating by re-execution.
fn minimize_violation<P: Protocol>(
    p: &P,
    inputs: &[u32],
    mut pids: Vec<ProcessId>,
    distinct: usize,
) -> Vec<ProcessId> {
    let mut idx = pids.len();
    while idx > 0 {
        idx -= 1;
        let mut candidate = pids.clone();
        candidate.remove(idx);
        let ok = explicit_trace(p, inputs, candidate.clone())
            .map(|t| t.decided_values().len() >= distinct)
            .unwrap_or(false);
        if ok {
            pids = candidate;
        }
    }
    pids
}

/// Runs the overwrite-and-hide induction.
///
/// `alpha` must be an execution from its own header's initial
/// configuration containing no steps by `quiet`, in which `k` distinct
/// values different from `fresh_value` are decided; every quiet process
/// must have input `fresh_value`.
pub fn consume<P: Protocol>(
    p: &P,
    alpha: &ProtocolTrace<P>,
    quiet: &[ProcessId],
    fresh_value: u32,
    opts: &AdversaryOptions,
) -> Result<AdversaryOutcome<P>, AdversaryError> {
    let params = p.params();
    let inputs = &alpha.header.inputs;
    if quiet.is_empty() {
        return Err(AdversaryError::BadParams("empty quiet set".into()));
    }
    for q in quiet {
        match inputs.get(q.index()) {
            Some(&v) if v == fresh_value => {}
            _ => {
                return Err(AdversaryError::BadParams(format!(
                    "quiet process {q} does not have input {fresh_value}"
                )))
            }
        }
    }
    if alpha.events.iter().any(|ev| quiet.contains(&ev.pid)) {
        return Err(AdversaryError::BadParams(
            "alpha contains steps by the quiet set".into(),
        ));
    }
    let decided = alpha.decided_values();
    if decided.contains(&fresh_value) {
        return Err(AdversaryError::BadParams(format!(
            "alpha already decides the quiet input {fresh_value}"
        )));
    }
    if (decided.len() as u32) < params.k {
        return Err(AdversaryError::BadParams(format!(
            "alpha decides {} distinct values, need {}",
            decided.len(),
            params.k
        )));
    }

    let mut q_order = quiet.to_vec();
    q_order.sort_unstable();

    // The two worlds: the foreign execution's final configuration, and an
    // untouched one where everyone proposed the quiet value.
    let mut c_side =
        harness::replay(p, alpha).map_err(|e| AdversaryError::BadParams(format!("alpha: {e}")))?;
    let mut d_side = initial_config(p, &vec![fresh_value; params.n as usize])?;

    let mut consumed: Vec<ObjectId> = Vec::new();
    let mut witnesses: Vec<ConsumeWitness> = Vec::new();
    // Process sequence taken on the foreign side so far, for rebuilding
    // the violation as one explicit run.
    let mut gamma_pids: Vec<ProcessId> = alpha.events.iter().map(|ev| ev.pid).collect();
    let cap = opts.solo_cap_factor * params.object_count as u64;

    for &q in &q_order {
        if !harness::indistinguishable(&c_side, &d_side, &[q]) {
            return Err(AdversaryError::InductionBroken(format!(
                "{q} can already tell the two worlds apart"
            )));
        }
        let solo = match solo_run(p, &d_side, q, cap) {
            Ok(s) => s,
            Err(HarnessError::SoloCapExceeded { pid, cap }) => {
                return Err(AdversaryError::NotObstructionFree { pid, cap })
            }
            Err(e) => return Err(e.into()),
        };
        if solo.decided != fresh_value {
            return Err(AdversaryError::InductionBroken(format!(
                "{q} decided {} alone among {fresh_value}-inputs, violating validity",
                solo.decided
            )));
        }

        // Longest prefix touching only consumed objects.
        let split = solo
            .events
            .iter()
            .position(|ev| !consumed.contains(&ev.obj))
            .unwrap_or(solo.events.len());
        let (tau, rest) = solo.events.split_at(split);

        // Mirror the prefix into the foreign world; equal values on the
        // consumed set guarantee equal responses.
        let mirrored = extend_indistinguishably(p, &d_side, &c_side, &[q], tau).map_err(
            |e| match e {
                MirrorError::ResponseMismatch { index, object } => AdversaryError::InductionBroken(
                    format!("mirrored step {index} diverged on object {object}"),
                ),
                other => AdversaryError::InductionBroken(other.to_string()),
            },
        )?;
        c_side = mirrored.config;
        // The quiet world advances along the same prefix; re-execution is
        // deterministic, so it must reproduce the solo run exactly.
        for ev in tau {
            let out = harness::step(p, &mut d_side, q)?;
            if &out != ev {
                return Err(AdversaryError::InductionBroken(
                    "quiet world diverged from its own solo run".into(),
                ));
            }
        }
        gamma_pids.extend(tau.iter().map(|ev| ev.pid));

        if rest.is_empty() {
            // The whole solo run stayed inside the consumed set, so it ran
            // identically in the foreign world and decided the fresh value
            // there: one execution now decides k + 1 distinct values.
            let distinct = decided.len() + 1;
            let pids = minimize_violation(p, inputs, gamma_pids, distinct);
            let trace = explicit_trace(p, inputs, pids)?;
            let values = trace.decided_values();
            if values.len() < distinct {
                return Err(AdversaryError::InductionBroken(
                    "violation trace lost decisions after minimization".into(),
                ));
            }
            return Ok(AdversaryOutcome::Violation(Violation { trace, values }));
        }

        // Apply the first fresh-object swap in both worlds. Same state,
        // same pending operation; the responses may differ but the value
        // written is the same, which is exactly what consumes the object.
        let fresh = &rest[0];
        let d_ev = harness::step(p, &mut d_side, q)?;
        if &d_ev != fresh {
            return Err(AdversaryError::InductionBroken(
                "quiet-world fresh step diverged from its solo run".into(),
            ));
        }
        let c_ev = harness::step(p, &mut c_side, q)?;
        if c_ev.obj != fresh.obj || c_ev.arg != fresh.arg {
            return Err(AdversaryError::InductionBroken(
                "foreign-world fresh step applied a different operation".into(),
            ));
        }
        let diverged = c_ev.resp != fresh.resp;
        gamma_pids.push(q);

        consumed.push(fresh.obj);
        witnesses.push(ConsumeWitness {
            process: q,
            object: fresh.obj,
            mirrored_steps: tau.len() as u64,
            responses_diverged: diverged,
        });

        // Induction invariant: consumed objects agree across the worlds.
        for obj in &consumed {
            let cv = c_side.store.value(*obj).map_err(HarnessError::from)?;
            let dv = d_side.store.value(*obj).map_err(HarnessError::from)?;
            if cv != dv {
                return Err(AdversaryError::InductionBroken(format!(
                    "object {obj} differs across worlds after consuming it"
                )));
            }
        }
    }

    Ok(AdversaryOutcome::Certificate(Certificate {
        q_count: q_order.len(),
        consumed,
        witnesses,
    }))
}

/// Outcome of searching for an execution by `participants` only that
/// decides all of `targets`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AlphaSearch<P: Protocol> {
    Found { trace: Box<ProtocolTrace<P>> },
    Exhausted,
}

/// Builds the foreign execution for [`consume`].
///
/// With one target this is deterministic: the participant runs solo and
/// validity pins its decision. With several targets the search draws
/// seeded random participant-only schedules (and, unless `fixed_inputs`
/// pins them, random target assignments) until one decides every target
/// or the budget runs out. Exhaustion is evidence for the restriction
/// branch, not a refutation.
pub fn build_alpha<P: Protocol>(
    p: &P,
    participants: &[ProcessId],
    quiet_input: u32,
    targets: &[u32],
    fixed_inputs: Option<&[u32]>,
    opts: &AdversaryOptions,
) -> Result<AlphaSearch<P>, AdversaryError> {
    let params = p.params();
    if participants.is_empty() || targets.is_empty() {
        return Err(AdversaryError::BadParams(
            "need participants and targets".into(),
        ));
    }
    if targets.contains(&quiet_input) {
        return Err(AdversaryError::BadParams(
            "quiet input must differ from every target".into(),
        ));
    }

    if targets.len() == 1 {
        let mut inputs = vec![quiet_input; params.n as usize];
        match fixed_inputs {
            Some(fixed) => inputs = fixed.to_vec(),
            None => inputs[participants[0].index()] = targets[0],
        }
        let solo = harness::run(
            p,
            &inputs,
            &Schedule::Solo {
                pid: participants[0],
            },
            Some(opts.solo_cap_factor * params.object_count as u64),
        )?;
        let decided = solo.decided_values();
        if decided == targets {
            return Ok(AlphaSearch::Found {
                trace: Box::new(solo),
            });
        }
        return Ok(AlphaSearch::Exhausted);
    }

    let step_limit = opts
        .search_step_limit
        .unwrap_or_else(|| harness::default_step_limit(params.n, params.object_count));
    let trials: Vec<u64> = (0..opts.search_budget).collect();
    let found = exec::find_first_map(&trials, opts.parallel, |&trial| {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(trial));
        let mut inputs = vec![quiet_input; params.n as usize];
        match fixed_inputs {
            Some(fixed) => inputs.copy_from_slice(fixed),
            None => {
                // Every target proposed at least once, remainder random.
                for (i, &pid) in participants.iter().enumerate() {
                    inputs[pid.index()] = if i < targets.len() {
                        targets[i]
                    } else {
                        targets[(rng.next_u64() % targets.len() as u64) as usize]
                    };
                }
            }
        }
        let mut config = initial_config(p, &inputs).ok()?;
        let mut pids = Vec::new();
        for _ in 0..step_limit {
            let live: Vec<ProcessId> = participants
                .iter()
                .copied()
                .filter(|pid| p.decided_value(&config.processes[pid.index()]).is_none())
                .collect();
            if live.is_empty() {
                break;
            }
            let pid = live[(rng.next_u64() % live.len() as u64) as usize];
            harness::step(p, &mut config, pid).ok()?;
            pids.push(pid);
            let decided = config.decided_values();
            if targets.iter().all(|t| decided.contains(t)) {
                return Some((inputs, pids));
            }
        }
        None
    });

    match found {
        Some((inputs, pids)) => {
            let trace = explicit_trace(p, &inputs, pids)?;
            Ok(AlphaSearch::Found {
                trace: Box::new(trace),
            })
        }
        None => Ok(AlphaSearch::Exhausted),
    }
}

/// Which way the restriction argument went at one level.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReductionBranch {
    /// A restricted execution deciding all lower values was found; the
    /// consume run applies directly.
    Consume,
    /// No such execution within budget: the restricted processes are
    /// treated as a smaller instance with one fewer agreement slot.
    Recurse { sub_n: u32, sub_k: u32 },
}

/// Restriction of an instance to its first `ceil(n(k-1)/k)` processes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReductionScenario {
    pub n: u32,
    pub k: u32,
    pub restricted: Vec<ProcessId>,
    pub quiet: Vec<ProcessId>,
    pub fresh_value: u32,
    /// Objects the instance must have at this level: `ceil(n/k) - 1`.
    pub object_floor: u32,
    pub branch: ReductionBranch,
}

/// Splits the instance for `k > 1` and reports which branch the evidence
/// supports. The found execution, when the consume branch is taken, is
/// returned alongside.
pub fn reduce_k<P: Protocol>(
    p: &P,
    opts: &AdversaryOptions,
) -> Result<(ReductionScenario, Option<ProtocolTrace<P>>), AdversaryError> {
    let params = p.params();
    let (n, k) = (params.n, params.k);
    if k < 2 {
        return Err(AdversaryError::BadParams(
            "reduction applies to k > 1 only; k = 1 is the direct case".into(),
        ));
    }
    if params.m <= k {
        return Err(AdversaryError::BadParams(format!(
            "need m > k for a fresh quiet value, got m={} k={k}",
            params.m
        )));
    }
    let restricted_len = (n * (k - 1)).div_ceil(k);
    let restricted: Vec<ProcessId> = (0..restricted_len).map(ProcessId).collect();
    let quiet: Vec<ProcessId> = (restricted_len..n).map(ProcessId).collect();
    let fresh_value = k;
    let targets: Vec<u32> = (0..k).collect();
    let object_floor = n.div_ceil(k) - 1;

    let search = build_alpha(p, &restricted, fresh_value, &targets, None, opts)?;
    let (branch, trace) = match search {
        AlphaSearch::Found { trace } => (ReductionBranch::Consume, Some(*trace)),
        AlphaSearch::Exhausted => (
            ReductionBranch::Recurse {
                sub_n: restricted_len,
                sub_k: k - 1,
            },
            None,
        ),
    };
    Ok((
        ReductionScenario {
            n,
            k,
            restricted,
            quiet,
            fresh_value,
            object_floor,
            branch,
        },
        trace,
    ))
}

/// Full lower-bound probe of a lap-race instance: reduces until a direct
/// consume run applies, then runs it.
pub struct LowerBoundRun {
    pub outcome: AdversaryOutcome<LapRace>,
    pub reductions: Vec<ReductionScenario>,
    /// Instance the final consume ran against.
    pub base_n: u32,
    pub base_k: u32,
}

pub fn probe_lap_race(
    n: u32,
    k: u32,
    object_count: u32,
    opts: &AdversaryOptions,
) -> Result<LowerBoundRun, AdversaryError> {
    if k < 1 || n <= k {
        return Err(AdversaryError::BadParams(format!(
            "need n > k >= 1, got n={n} k={k}"
        )));
    }
    let m = k + 1;
    let mut reductions = Vec::new();
    let mut cur_n = n;
    let mut cur_k = k;

    loop {
        let race = LapRace::with_objects(cur_n, cur_k, m, object_count)?;
        if cur_k == 1 {
            // Direct case: one participant with input 0, everyone else
            // quiet with input 1.
            let quiet: Vec<ProcessId> = (1..cur_n).map(ProcessId).collect();
            let search = build_alpha(&race, &[ProcessId(0)], 1, &[0], None, opts)?;
            let AlphaSearch::Found { trace } = search else {
                return Err(AdversaryError::InductionBroken(
                    "solo participant failed to decide its own input".into(),
                ));
            };
            let outcome = consume(&race, &trace, &quiet, 1, opts)?;
            return Ok(LowerBoundRun {
                outcome,
                reductions,
                base_n: cur_n,
                base_k: cur_k,
            });
        }

        let (scenario, trace) = reduce_k(&race, opts)?;
        let branch = scenario.branch.clone();
        let quiet = scenario.quiet.clone();
        let fresh = scenario.fresh_value;
        reductions.push(scenario);
        match branch {
            ReductionBranch::Consume => {
                let trace = trace.expect("consume branch carries its execution");
                let outcome = consume(&race, &trace, &quiet, fresh, opts)?;
                return Ok(LowerBoundRun {
                    outcome,
                    reductions,
                    base_n: cur_n,
                    base_k: cur_k,
                });
            }
            ReductionBranch::Recurse { sub_n, sub_k } => {
                cur_n = sub_n;
                cur_k = sub_k;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkers::check_k_agreement;

    fn opts() -> AdversaryOptions {
        AdversaryOptions {
            search_budget: 200,
            ..AdversaryOptions::default()
        }
    }

    fn base_alpha(race: &LapRace) -> ProtocolTrace<LapRace> {
        let n = race.params().n;
        let mut inputs = vec![1u32; n as usize];
        inputs[0] = 0;
        harness::run(race, &inputs, &Schedule::Solo { pid: ProcessId(0) }, None).unwrap()
    }

    #[test]
    fn one_object_short_forces_a_violation() {
        let race = LapRace::with_objects(3, 1, 2, 1).unwrap();
        let alpha = base_alpha(&race);
        let quiet = vec![ProcessId(1), ProcessId(2)];
        let outcome = consume(&race, &alpha, &quiet, 1, &opts()).unwrap();
        let AdversaryOutcome::Violation(v) = outcome else {
            panic!("expected a violation on an under-provisioned instance");
        };
        assert_eq!(v.values, vec![0, 1]);
        assert!(!check_k_agreement(&[&v.trace], 1).passed());
        // The emitted trace is a real execution: it replays.
        harness::replay(&race, &v.trace).unwrap();
    }

    #[test]
    fn full_provisioning_yields_a_certificate() {
        let race = LapRace::with_objects(3, 1, 2, 2).unwrap();
        let alpha = base_alpha(&race);
        let quiet = vec![ProcessId(1), ProcessId(2)];
        let outcome = consume(&race, &alpha, &quiet, 1, &opts()).unwrap();
        let AdversaryOutcome::Certificate(cert) = outcome else {
            panic!("expected a certificate at the space bound");
        };
        assert_eq!(cert.q_count, 2);
        assert_eq!(cert.consumed.len(), 2);
        let mut objects = cert.consumed.clone();
        objects.sort_unstable();
        objects.dedup();
        assert_eq!(objects.len(), 2, "consumed objects are distinct");
    }

    #[test]
    fn a_single_quiet_process_consumes_one_object() {
        let race = LapRace::with_objects(3, 1, 2, 2).unwrap();
        let mut inputs = vec![1u32; 3];
        inputs[0] = 0;
        // p1 participates alongside p0 here, so only p2 is quiet.
        let alpha =
            harness::run(&race, &inputs, &Schedule::Solo { pid: ProcessId(0) }, None).unwrap();
        let outcome = consume(&race, &alpha, &[ProcessId(2)], 1, &opts()).unwrap();
        let AdversaryOutcome::Certificate(cert) = outcome else {
            panic!("one quiet process cannot exhaust two objects");
        };
        assert_eq!(cert.q_count, 1);
        assert_eq!(cert.consumed.len(), 1);
    }

    #[test]
    fn consume_validates_its_preconditions() {
        let race = LapRace::with_objects(3, 1, 2, 2).unwrap();
        let alpha = base_alpha(&race);
        // Quiet process with the wrong input.
        let err = consume(&race, &alpha, &[ProcessId(1)], 0, &opts()).unwrap_err();
        assert!(matches!(err, AdversaryError::BadParams(_)));
        // Alpha containing quiet steps.
        let err = consume(&race, &alpha, &[ProcessId(0), ProcessId(1)], 1, &opts());
        assert!(matches!(err, Err(AdversaryError::BadParams(_))));
    }

    #[test]
    fn impossible_targets_exhaust_the_search() {
        let race = LapRace::with_objects(4, 2, 3, 2).unwrap();
        // Nobody proposes 2, so validity forbids deciding it under any
        // schedule; the search must give up rather than fabricate one.
        let fixed = [0u32, 1, 0, 0];
        let search = build_alpha(
            &race,
            &[ProcessId(0), ProcessId(1)],
            1,
            &[0, 2],
            Some(&fixed),
            &AdversaryOptions {
                search_budget: 50,
                ..AdversaryOptions::default()
            },
        );
        assert!(matches!(search, Ok(AlphaSearch::Exhausted)));
    }

    #[test]
    fn reduction_arithmetic_matches_the_floor_formula() {
        let race = LapRace::with_objects(6, 2, 3, 2).unwrap();
        let (scenario, _) = reduce_k(&race, &opts()).unwrap();
        assert_eq!(scenario.restricted.len(), 3);
        assert_eq!(scenario.quiet.len(), 3);
        assert_eq!(scenario.object_floor, 2);

        let race = LapRace::with_objects(4, 3, 4, 1).unwrap();
        let (scenario, _) = reduce_k(&race, &opts()).unwrap();
        assert_eq!(scenario.restricted.len(), 3);

        let race = LapRace::with_objects(3, 1, 2, 2).unwrap();
        assert!(matches!(
            reduce_k(&race, &opts()),
            Err(AdversaryError::BadParams(_))
        ));
    }

    #[test]
    fn probe_reports_some_outcome_for_k2() {
        let run = probe_lap_race(4, 2, 1, &opts()).unwrap();
        assert_eq!(run.base_k, 1, "search exhaustion recurses to the base case");
        assert!(!run.reductions.is_empty());
    }
}
