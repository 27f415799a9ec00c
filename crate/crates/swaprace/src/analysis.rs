//! Desk-scale state-space analysis: exhaustive bounded exploration,
//! valency classification, covering detection, and block swaps.
//!
//! Configurations are memoized on their full value — store contents,
//! every local state, and the decisions — so two equal keys really are
//! the same configuration and no collision is possible. Lap counters make
//! the full state space infinite; the depth bound caps both schedule
//! length and counter growth, which is the fundamental limit of this
//! kind of search.

use std::collections::{HashSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec;
use crate::harness::{self, Config, Event, HarnessError};
use crate::memory::{ObjectId, ProcessId};
use crate::protocol::{PendingOp, Protocol};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AnalysisError {
    #[error("subject process set is empty")]
    EmptySubject,
    #[error("cover member p{pid} is no longer poised as recorded")]
    StaleCover { pid: u32 },
    #[error("cover members and subject set overlap on p{pid}")]
    CoverOverlapsSubject { pid: u32 },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Harness(#[from] HarnessError),
}

/// Knobs shared by the bounded searches.
#[derive(Debug, Clone, Copy)]
pub struct AnalysisOptions {
    /// Stop and flag truncation once this many distinct configurations
    /// have been memoized.
    pub state_budget: usize,
    /// Fan frontier expansion out on the rayon pool.
    pub parallel: bool,
    /// Step cap for the solo probes that close a univalent
    /// classification; defaults to 8 swaps per object.
    pub solo_cap: Option<u64>,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            state_budget: 1 << 22,
            parallel: false,
            solo_cap: None,
        }
    }
}

impl AnalysisOptions {
    fn cap(&self, object_count: u32) -> u64 {
        self.solo_cap.unwrap_or(8 * object_count as u64)
    }
}

/// What a full exploration to a depth bound found.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplorationSummary {
    pub states: u64,
    pub depth: u32,
    /// Largest number of distinct values decided in any single execution.
    pub max_distinct_decided: u32,
    pub validity_ok: bool,
    /// True when the state budget cut the search short.
    pub truncated: bool,
}

/// Explores every schedule of length at most `depth`, deduplicating
/// configurations, and reports the worst execution seen.
pub fn explore<P: Protocol>(
    p: &P,
    inputs: &[u32],
    depth: u32,
    opts: &AnalysisOptions,
) -> Result<ExplorationSummary, AnalysisError> {
    let (summary, _) = explore_impl(p, inputs, depth, opts, false)?;
    Ok(summary)
}

/// Like [`explore`], also returning one schedule (process sequence) per
/// discovered configuration, for spot-checking reachability.
pub fn explore_paths<P: Protocol>(
    p: &P,
    inputs: &[u32],
    depth: u32,
    opts: &AnalysisOptions,
) -> Result<(ExplorationSummary, Vec<Vec<ProcessId>>), AnalysisError> {
    explore_impl(p, inputs, depth, opts, true)
}

fn explore_impl<P: Protocol>(
    p: &P,
    inputs: &[u32],
    depth: u32,
    opts: &AnalysisOptions,
    record_paths: bool,
) -> Result<(ExplorationSummary, Vec<Vec<ProcessId>>), AnalysisError> {
    let initial = harness::initial_config(p, inputs)?;
    let mut seen: HashSet<Config<P>> = HashSet::new();
    let mut paths: Vec<Vec<ProcessId>> = Vec::new();
    let mut frontier: Vec<(Config<P>, Vec<ProcessId>)> = Vec::new();

    let mut max_distinct = initial.decided_values().len() as u32;
    let mut validity_ok = initial
        .decisions
        .iter()
        .all(|d| inputs.contains(&d.value));
    let mut truncated = false;

    seen.insert(initial.clone());
    if record_paths {
        paths.push(Vec::new());
    }
    frontier.push((initial, Vec::new()));

    for _layer in 0..depth {
        if frontier.is_empty() || truncated {
            break;
        }
        let expanded: Vec<Vec<(Config<P>, ProcessId)>> =
            exec::map_vec(&frontier, opts.parallel, |(config, _)| {
                let mut out = Vec::new();
                for (i, state) in config.processes.iter().enumerate() {
                    if p.decided_value(state).is_none() {
                        let pid = ProcessId(i as u32);
                        let mut next = config.clone();
                        harness::step(p, &mut next, pid).expect("undecided process steps");
                        out.push((next, pid));
                    }
                }
                out
            });
        let mut next_frontier = Vec::new();
        for (parent_idx, batch) in expanded.into_iter().enumerate() {
            for (config, pid) in batch {
                if seen.len() >= opts.state_budget {
                    truncated = true;
                    break;
                }
                if !seen.contains(&config) {
                    max_distinct = max_distinct.max(config.decided_values().len() as u32);
                    validity_ok &= config.decisions.iter().all(|d| inputs.contains(&d.value));
                    let path = if record_paths {
                        let mut path = frontier[parent_idx].1.clone();
                        path.push(pid);
                        paths.push(path.clone());
                        path
                    } else {
                        Vec::new()
                    };
                    seen.insert(config.clone());
                    next_frontier.push((config, path));
                }
            }
            if truncated {
                break;
            }
        }
        frontier = next_frontier;
    }

    Ok((
        ExplorationSummary {
            states: seen.len() as u64,
            depth,
            max_distinct_decided: max_distinct,
            validity_ok,
            truncated,
        },
        paths,
    ))
}

/// Classification of a process set's reachable decisions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "class", content = "value")]
pub enum ValencyClass {
    Bivalent,
    Univalent(u32),
    UnknownAtDepth,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValencyReport {
    pub subject: Vec<ProcessId>,
    /// Values decided by the subject in the explored executions; the
    /// search stops collecting once two are known, since that already
    /// settles bivalence.
    pub decided_values: Vec<u32>,
    pub classification: ValencyClass,
}

/// Explores subject-only executions to `depth` and classifies.
///
/// `Univalent(v)` additionally requires the exploration to close: every
/// configuration still live at the depth bound must have a solo extension
/// by some subject member that decides, and it must decide `v`. Anything
/// short of that is reported as unknown rather than classified.
pub fn valency<P: Protocol>(
    p: &P,
    config: &Config<P>,
    subject: &[ProcessId],
    depth: u32,
    opts: &AnalysisOptions,
) -> Result<ValencyReport, AnalysisError> {
    if subject.is_empty() {
        return Err(AnalysisError::EmptySubject);
    }
    let mut decided: Vec<u32> = config
        .decisions
        .iter()
        .filter(|d| subject.contains(&d.process))
        .map(|d| d.value)
        .collect();
    decided.sort_unstable();
    decided.dedup();

    let mut seen: HashSet<Config<P>> = HashSet::new();
    let mut frontier: Vec<Config<P>> = Vec::new();
    seen.insert(config.clone());
    frontier.push(config.clone());
    let mut live_at_depth: Vec<Config<P>> = Vec::new();

    'search: for layer in 0..=depth {
        if frontier.is_empty() {
            break;
        }
        if decided.len() >= 2 {
            break;
        }
        if layer == depth {
            live_at_depth = frontier;
            break;
        }
        let expanded: Vec<Vec<(Config<P>, Option<u32>)>> =
            exec::map_vec(&frontier, opts.parallel, |config| {
                let mut out = Vec::new();
                for pid in subject {
                    let state = match config.processes.get(pid.index()) {
                        Some(s) => s,
                        None => continue,
                    };
                    if p.decided_value(state).is_none() {
                        let mut next = config.clone();
                        let ev = harness::step(p, &mut next, *pid).expect("undecided subject steps");
                        out.push((next, ev.decide));
                    }
                }
                out
            });
        let mut next_frontier = Vec::new();
        for batch in expanded {
            for (next, decide) in batch {
                if let Some(v) = decide {
                    if !decided.contains(&v) {
                        decided.push(v);
                        decided.sort_unstable();
                        if decided.len() >= 2 {
                            break 'search;
                        }
                    }
                }
                if !seen.contains(&next) {
                    seen.insert(next.clone());
                    let still_live = next
                        .processes
                        .iter()
                        .enumerate()
                        .any(|(i, s)| {
                            subject.contains(&ProcessId(i as u32))
                                && p.decided_value(s).is_none()
                        });
                    if still_live {
                        next_frontier.push(next);
                    }
                }
            }
        }
        frontier = next_frontier;
    }

    let classification = if decided.len() >= 2 {
        ValencyClass::Bivalent
    } else if live_at_depth.is_empty() {
        match decided.as_slice() {
            [v] => ValencyClass::Univalent(*v),
            _ => ValencyClass::UnknownAtDepth,
        }
    } else if decided.len() == 1 {
        // Try to close the frontier with solo probes.
        let v = decided[0];
        let cap = opts.cap(p.params().object_count);
        let closes = exec::map_vec(&live_at_depth, opts.parallel, |config| {
            subject.iter().find_map(|pid| {
                let state = config.processes.get(pid.index())?;
                if p.decided_value(state).is_some() {
                    return None;
                }
                harness::solo_run(p, config, *pid, cap).ok().map(|s| s.decided)
            })
        });
        if closes.iter().all(|c| *c == Some(v)) {
            ValencyClass::Univalent(v)
        } else {
            ValencyClass::UnknownAtDepth
        }
    } else {
        ValencyClass::UnknownAtDepth
    };

    Ok(ValencyReport {
        subject: subject.to_vec(),
        decided_values: decided,
        classification,
    })
}

/// One process poised to swap a specific object, with the exact pending
/// operation it will apply.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoverMember<V> {
    pub process: ProcessId,
    pub object: ObjectId,
    pub op: PendingOp<V>,
}

/// An assignment of poised swappers to distinct objects.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoverSet<V> {
    pub members: Vec<CoverMember<V>>,
}

impl<V> CoverSet<V> {
    pub fn empty() -> Self {
        CoverSet {
            members: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn objects(&self) -> Vec<ObjectId> {
        self.members.iter().map(|m| m.object).collect()
    }
}

/// Maximum assignment of poised-to-swap processes to distinct objects,
/// greedy by ascending process id. Each process has exactly one pending
/// object, so the greedy pick is maximum.
pub fn detect_cover<P: Protocol>(p: &P, config: &Config<P>) -> CoverSet<P::Value> {
    let all: Vec<ProcessId> = (0..config.processes.len() as u32).map(ProcessId).collect();
    detect_cover_among(p, config, &all)
}

/// [`detect_cover`] restricted to the given candidate processes.
pub fn detect_cover_among<P: Protocol>(
    p: &P,
    config: &Config<P>,
    candidates: &[ProcessId],
) -> CoverSet<P::Value> {
    let mut candidates = candidates.to_vec();
    candidates.sort_unstable();
    let mut taken: HashSet<ObjectId> = HashSet::new();
    let mut members = Vec::new();
    for pid in candidates {
        let state = match config.processes.get(pid.index()) {
            Some(s) => s,
            None => continue,
        };
        let Some(op) = p.poised(state, pid) else {
            continue;
        };
        let PendingOp::Swap { object, .. } = &op else {
            continue; // reads are trivial and cover nothing
        };
        let object = *object;
        if taken.insert(object) {
            members.push(CoverMember {
                process: pid,
                object,
                op,
            });
        }
    }
    CoverSet { members }
}

/// Applies every cover member's pending swap, consecutively in ascending
/// process id order. Covered objects end up holding exactly the pending
/// arguments, whatever they held before.
pub fn block_swap<P: Protocol>(
    p: &P,
    config: &Config<P>,
    cover: &CoverSet<P::Value>,
) -> Result<Config<P>, AnalysisError> {
    let mut next = config.clone();
    let mut members = cover.members.clone();
    members.sort_by_key(|m| m.process);
    for member in &members {
        let state = next
            .processes
            .get(member.process.index())
            .ok_or(AnalysisError::StaleCover {
                pid: member.process.0,
            })?;
        if p.poised(state, member.process).as_ref() != Some(&member.op) {
            return Err(AnalysisError::StaleCover {
                pid: member.process.0,
            });
        }
        harness::step(p, &mut next, member.process)?;
    }
    Ok(next)
}

/// Result of searching for a bivalence-preserving extension.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExtensionSearch<V> {
    /// Subject-only execution after which the block swap leaves the
    /// subject bivalent.
    Found { gamma: Vec<Event<V>> },
    UnknownAtDepth,
}

/// Searches subject-only executions `γ` (shortest first, starting with
/// the empty one) until the block swap applied after `γ` leaves the
/// subject bivalent at the given depth.
pub fn find_extension<P: Protocol>(
    p: &P,
    config: &Config<P>,
    cover: &CoverSet<P::Value>,
    subject: &[ProcessId],
    depth: u32,
    opts: &AnalysisOptions,
) -> Result<ExtensionSearch<P::Value>, AnalysisError> {
    for member in &cover.members {
        if subject.contains(&member.process) {
            return Err(AnalysisError::CoverOverlapsSubject {
                pid: member.process.0,
            });
        }
    }
    let start = valency(p, config, subject, depth, opts)?;
    if start.classification != ValencyClass::Bivalent {
        return Err(AnalysisError::Precondition(format!(
            "subject is not bivalent in the starting configuration: {:?}",
            start.classification
        )));
    }

    let mut seen: HashSet<Config<P>> = HashSet::new();
    type QueueEntry<P> = (Config<P>, Vec<Event<<P as Protocol>::Value>>);
    let mut queue: VecDeque<QueueEntry<P>> = VecDeque::new();
    seen.insert(config.clone());
    queue.push_back((config.clone(), Vec::new()));

    while let Some((current, gamma)) = queue.pop_front() {
        let blocked = block_swap(p, &current, cover)?;
        let report = valency(p, &blocked, subject, depth, opts)?;
        if report.classification == ValencyClass::Bivalent {
            return Ok(ExtensionSearch::Found { gamma });
        }
        if gamma.len() as u32 >= depth {
            continue;
        }
        for pid in subject {
            let state = match current.processes.get(pid.index()) {
                Some(s) => s,
                None => continue,
            };
            if p.decided_value(state).is_none() {
                let mut next = current.clone();
                let ev = harness::step(p, &mut next, *pid)?;
                if !seen.contains(&next) {
                    seen.insert(next.clone());
                    let mut path = gamma.clone();
                    path.push(ev);
                    queue.push_back((next, path));
                }
            }
        }
    }
    Ok(ExtensionSearch::UnknownAtDepth)
}
