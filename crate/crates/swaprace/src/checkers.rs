//! Pure trace oracles: agreement, validity, the solo step bound, and the
//! lap-race structural properties.
//!
//! The lap checkers work from the event stream alone. Each swap event
//! carries the swapping process's counter as its argument, so local
//! counter evolution, object contents, and lap completions can all be
//! rebuilt without consulting the store — a tampered trace fails here
//! even if it was never replayed.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::harness::{solo_run, Config, Event, HarnessError, OpKind, ProtocolTrace, Trace};
use crate::memory::{LapCounter, ProcessId, SwapCellValue};
use crate::protocol::{LapRace, Protocol};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

/// Where and why a property failed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Witness {
    pub step: Option<u64>,
    pub process: Option<ProcessId>,
    pub detail: String,
}

/// Outcome of one property check; failures always carry a witness.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckReport {
    pub property: String,
    pub verdict: Verdict,
    pub witness: Option<Witness>,
}

impl CheckReport {
    pub fn pass(property: &str) -> Self {
        CheckReport {
            property: property.to_string(),
            verdict: Verdict::Pass,
            witness: None,
        }
    }

    pub fn fail(property: &str, witness: Witness) -> Self {
        CheckReport {
            property: property.to_string(),
            verdict: Verdict::Fail,
            witness: Some(witness),
        }
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

/// At most `k` distinct values decided across the given traces. Pool
/// traces only when they extend a common prefix; decisions from unrelated
/// runs say nothing together.
pub fn check_k_agreement<S, V>(traces: &[&Trace<S, V>], k: u32) -> CheckReport {
    let mut seen: Vec<(u32, ProcessId, u64)> = Vec::new();
    for trace in traces {
        for d in trace.decisions() {
            if !seen.iter().any(|(v, ..)| *v == d.value) {
                seen.push((d.value, d.process, d.step_index));
            }
        }
    }
    if seen.len() <= k as usize {
        return CheckReport::pass("k-agreement");
    }
    let listing: Vec<String> = seen
        .iter()
        .map(|(v, p, s)| format!("{p} decided {v} at step {s}"))
        .collect();
    CheckReport::fail(
        "k-agreement",
        Witness {
            step: None,
            process: None,
            detail: format!("{} distinct values: {}", seen.len(), listing.join("; ")),
        },
    )
}

/// Every decided value appears among the inputs.
pub fn check_validity<S, V>(trace: &Trace<S, V>) -> CheckReport {
    for d in trace.decisions() {
        if !trace.header.inputs.contains(&d.value) {
            return CheckReport::fail(
                "validity",
                Witness {
                    step: Some(d.step_index),
                    process: Some(d.process),
                    detail: format!("decided {} which no process proposed", d.value),
                },
            );
        }
    }
    CheckReport::pass("validity")
}

/// From each given configuration, every undecided process decides alone
/// within `8 * object_count` swaps.
pub fn check_solo_bound(race: &LapRace, configs: &[Config<LapRace>], margin: u64) -> CheckReport {
    let bound = race.solo_step_bound();
    for (ci, config) in configs.iter().enumerate() {
        for (i, state) in config.processes.iter().enumerate() {
            if race.decided_value(state).is_some() {
                continue;
            }
            let pid = ProcessId(i as u32);
            match solo_run(race, config, pid, bound + margin) {
                Ok(solo) if (solo.events.len() as u64) <= bound => {}
                Ok(solo) => {
                    return CheckReport::fail(
                        "solo-bound",
                        Witness {
                            step: None,
                            process: Some(pid),
                            detail: format!(
                                "solo run from configuration {ci} took {} steps, bound {bound}",
                                solo.events.len()
                            ),
                        },
                    )
                }
                Err(HarnessError::SoloCapExceeded { cap, .. }) => {
                    return CheckReport::fail(
                        "solo-bound",
                        Witness {
                            step: None,
                            process: Some(pid),
                            detail: format!(
                                "solo run from configuration {ci} exceeded the {cap}-step cap"
                            ),
                        },
                    )
                }
                Err(e) => {
                    return CheckReport::fail(
                        "solo-bound",
                        Witness {
                            step: None,
                            process: Some(pid),
                            detail: format!("solo run failed: {e}"),
                        },
                    )
                }
            }
        }
    }
    CheckReport::pass("solo-bound")
}

/// A trace point at which every object holds `⟨counter, pid⟩` and that
/// process's local counter equals `counter`. `step` counts the events
/// already applied (0 is the initial configuration).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TotalConfiguration {
    pub step: u64,
    pub process: ProcessId,
    pub counter: LapCounter,
}

/// Replays a lap-race process's local algorithm from its recorded
/// responses alone.
#[derive(Debug, Clone)]
struct LocalSim {
    counter: LapCounter,
    slot: u32,
    conflict: bool,
    decided: Option<u32>,
}

/// Event-stream reconstruction of local states, object contents, and lap
/// completions for one lap-race trace.
struct LapReplay<'a> {
    trace: &'a ProtocolTrace<LapRace>,
    object_count: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PassEnd {
    /// Clean pass ended by bumping `component` to `level`.
    Increment { component: u32, level: u64 },
    Decided { value: u32 },
}

impl<'a> LapReplay<'a> {
    fn new(trace: &'a ProtocolTrace<LapRace>) -> Self {
        LapReplay {
            trace,
            object_count: trace.header.objects,
        }
    }

    fn initial_sims(&self) -> Vec<LocalSim> {
        self.trace
            .header
            .inputs
            .iter()
            .map(|&input| LocalSim {
                counter: LapCounter::for_input(self.trace.header.m, input),
                slot: 1,
                conflict: false,
                decided: None,
            })
            .collect()
    }

    /// Advances one event, returning what ended a pass (if anything) or a
    /// witness describing the first inconsistency.
    fn advance(
        &self,
        sims: &mut [LocalSim],
        ev: &Event<SwapCellValue>,
    ) -> Result<Option<PassEnd>, Witness> {
        let witness = |detail: String| Witness {
            step: Some(ev.step),
            process: Some(ev.pid),
            detail,
        };
        if ev.op == OpKind::Read {
            return Err(witness("read issued on a swap-only store".into()));
        }
        let sim = sims
            .get_mut(ev.pid.index())
            .ok_or_else(|| witness("unknown process".into()))?;
        if sim.decided.is_some() {
            return Err(witness("step by a decided process".into()));
        }
        let arg = ev
            .arg
            .as_ref()
            .ok_or_else(|| witness("swap event without argument".into()))?;
        let m = self.trace.header.m as usize;
        if arg.counter.len() != m || ev.resp.counter.len() != m {
            return Err(witness(format!(
                "counter length {} or {} differs from m = {m}",
                arg.counter.len(),
                ev.resp.counter.len()
            )));
        }
        if arg.owner != Some(ev.pid) {
            return Err(witness(format!("swapped owner {:?}, not its own id", arg.owner)));
        }
        if arg.counter != sim.counter {
            return Err(witness(format!(
                "swapped counter {} but local counter is {}",
                arg.counter, sim.counter
            )));
        }

        let own = SwapCellValue::owned(sim.counter.clone(), ev.pid);
        if ev.resp != own {
            sim.conflict = true;
            if ev.resp.counter != sim.counter {
                sim.counter.merge_max(&ev.resp.counter);
            }
        }

        if sim.slot < self.object_count {
            sim.slot += 1;
            if ev.decide.is_some() {
                return Err(witness("decision recorded mid-pass".into()));
            }
            return Ok(None);
        }

        // Pass completed.
        sim.slot = 1;
        if sim.conflict {
            sim.conflict = false;
            if ev.decide.is_some() {
                return Err(witness("decision recorded on a conflicted pass".into()));
            }
            return Ok(None);
        }
        let leader = sim.counter.leader();
        if sim.counter.has_decisive_lead(leader) {
            sim.decided = Some(leader);
            if ev.decide != Some(leader) {
                return Err(witness(format!(
                    "clean pass with decisive lead must decide {leader}, event says {:?}",
                    ev.decide
                )));
            }
            Ok(Some(PassEnd::Decided { value: leader }))
        } else {
            if ev.decide.is_some() {
                return Err(witness(format!(
                    "decision {:?} without the two-lap lead: counter {}",
                    ev.decide, sim.counter
                )));
            }
            sim.counter.increment(leader);
            Ok(Some(PassEnd::Increment {
                component: leader,
                level: sim.counter.get(leader),
            }))
        }
    }
}

/// Structural observations over a lap-race trace: counters never move
/// backwards, only a maximal component is ever incremented, every
/// decision has the two-lap lead, and lap levels above one appear only
/// through the one-by-one ladder of increments.
pub fn check_lap_observations(trace: &ProtocolTrace<LapRace>) -> CheckReport {
    let property = "lap-observations";
    let replay = LapReplay::new(trace);
    let mut sims = replay.initial_sims();
    // (component, level) -> step whose increment first reached it.
    let mut ladder: HashMap<(u32, u64), u64> = HashMap::new();
    let mut last_arg: Vec<Option<LapCounter>> = vec![None; sims.len()];

    for ev in &trace.events {
        if let Some(arg) = &ev.arg {
            if let Some(prev) = last_arg.get(ev.pid.index()).and_then(|a| a.as_ref()) {
                if !prev.dominated_by(&arg.counter) {
                    return CheckReport::fail(
                        property,
                        Witness {
                            step: Some(ev.step),
                            process: Some(ev.pid),
                            detail: format!("counter moved backwards: {prev} then {}", arg.counter),
                        },
                    );
                }
            }
        }

        let before = sims
            .get(ev.pid.index())
            .map(|s| s.counter.clone())
            .unwrap_or_else(|| LapCounter::zeroed(trace.header.m));
        let pass_end = match replay.advance(&mut sims, ev) {
            Ok(p) => p,
            Err(w) => return CheckReport::fail(property, w),
        };

        if let Some(PassEnd::Increment { component, level }) = pass_end {
            // Only a maximal component may be bumped.
            if before.get(component) < before.max_value() {
                return CheckReport::fail(
                    property,
                    Witness {
                        step: Some(ev.step),
                        process: Some(ev.pid),
                        detail: format!(
                            "incremented component {component} of {before}, not a maximum"
                        ),
                    },
                );
            }
            ladder.entry((component, level)).or_insert(ev.step);
        }

        // Every level >= 2 a counter reaches must have been built one
        // increment at a time.
        let sim = &sims[ev.pid.index()];
        for (j, &now) in sim.counter.laps().iter().enumerate() {
            let was = before.get(j as u32);
            if now > was {
                for level in was.max(1) + 1..=now {
                    if level < 2 {
                        continue;
                    }
                    match ladder.get(&(j as u32, level)) {
                        Some(&at) if at <= ev.step => {}
                        _ => {
                            return CheckReport::fail(
                                property,
                                Witness {
                                    step: Some(ev.step),
                                    process: Some(ev.pid),
                                    detail: format!(
                                        "component {j} reached {now} but no increment took it to {level}"
                                    ),
                                },
                            )
                        }
                    }
                }
            }
        }

        if let Some(arg) = &ev.arg {
            last_arg[ev.pid.index()] = Some(arg.counter.clone());
        }
    }
    CheckReport::pass(property)
}

/// All trace points where the store is `⟨V, p⟩` everywhere and `p`'s
/// reconstructed counter is `V`.
pub fn find_total_configurations(trace: &ProtocolTrace<LapRace>) -> Vec<TotalConfiguration> {
    let replay = LapReplay::new(trace);
    let mut sims = replay.initial_sims();
    let mut cells: Vec<SwapCellValue> =
        vec![SwapCellValue::initial(trace.header.m); trace.header.objects as usize];
    let mut totals = Vec::new();

    let mut record = |step: u64, sims: &[LocalSim], cells: &[SwapCellValue]| {
        let first = &cells[0];
        let owner = match first.owner {
            Some(p) => p,
            None => return,
        };
        if !cells.iter().all(|c| c == first) {
            return;
        }
        if let Some(sim) = sims.get(owner.index()) {
            if sim.counter == first.counter {
                totals.push(TotalConfiguration {
                    step,
                    process: owner,
                    counter: first.counter.clone(),
                });
            }
        }
    };

    record(0, &sims, &cells);
    for ev in &trace.events {
        if replay.advance(&mut sims, ev).is_err() {
            break;
        }
        if let Some(arg) = &ev.arg {
            cells[ev.obj.index()] = arg.clone();
        }
        record(ev.step + 1, &sims, &cells);
    }
    totals
}

/// Every lap completion is preceded by a matching total configuration: a
/// clean pass proves all objects already held the completing process's
/// pair when the pass began.
pub fn check_total_witness(trace: &ProtocolTrace<LapRace>) -> CheckReport {
    let property = "total-witness";
    let totals = find_total_configurations(trace);
    let replay = LapReplay::new(trace);
    let mut sims = replay.initial_sims();
    let oc = trace.header.objects as usize;
    let mut own_steps: Vec<Vec<u64>> = vec![Vec::new(); sims.len()];

    for ev in &trace.events {
        own_steps[ev.pid.index()].push(ev.step);
        let arg_counter = ev.arg.as_ref().map(|a| a.counter.clone());
        let pass_end = match replay.advance(&mut sims, ev) {
            Ok(p) => p,
            Err(w) => return CheckReport::fail(property, w),
        };
        if pass_end.is_none() {
            continue;
        }
        // Clean pass: its swaps are this process's last `oc` events, and
        // the boundary before the first of them must already be total for
        // this process with the swapped counter.
        let counter = arg_counter.expect("clean pass event is a swap");
        let own = &own_steps[ev.pid.index()];
        let boundary = own[own.len() - oc];
        let found = totals
            .iter()
            .any(|t| t.step == boundary && t.process == ev.pid && t.counter == counter);
        if !found {
            return CheckReport::fail(
                property,
                Witness {
                    step: Some(ev.step),
                    process: Some(ev.pid),
                    detail: format!(
                        "lap completed at step {} without a total configuration at boundary {boundary}",
                        ev.step
                    ),
                },
            );
        }
    }
    CheckReport::pass(property)
}

/// Between consecutive total configurations whose counters are not
/// ordered, all objects must have been re-swapped by distinct processes
/// other than the two owners, and those processes' counters at the later
/// point must dominate the earlier counter.
pub fn check_manyprocesses(trace: &ProtocolTrace<LapRace>, all_pairs: bool) -> CheckReport {
    let property = "many-processes";
    let totals = find_total_configurations(trace);
    let oc = trace.header.objects as usize;

    // Reconstructed per-process counters at each boundary, computed lazily
    // per queried boundary would re-run the stream; one forward pass
    // snapshotting at total boundaries is cheaper.
    let boundaries: Vec<u64> = totals.iter().map(|t| t.step).collect();
    let replay = LapReplay::new(trace);
    let mut sims = replay.initial_sims();
    let mut snapshots: HashMap<u64, Vec<LapCounter>> = HashMap::new();
    let snapshot = |sims: &[LocalSim]| sims.iter().map(|s| s.counter.clone()).collect::<Vec<_>>();
    if boundaries.contains(&0) {
        snapshots.insert(0, snapshot(&sims));
    }
    for ev in &trace.events {
        if replay.advance(&mut sims, ev).is_err() {
            return CheckReport::fail(
                property,
                Witness {
                    step: Some(ev.step),
                    process: Some(ev.pid),
                    detail: "trace fails local reconstruction".into(),
                },
            );
        }
        if boundaries.contains(&(ev.step + 1)) {
            snapshots.insert(ev.step + 1, snapshot(&sims));
        }
    }

    let pairs: Vec<(usize, usize)> = if all_pairs {
        (0..totals.len())
            .flat_map(|i| (i + 1..totals.len()).map(move |j| (i, j)))
            .collect()
    } else {
        (1..totals.len()).map(|j| (j - 1, j)).collect()
    };

    for (i, j) in pairs {
        let earlier = &totals[i];
        let later = &totals[j];
        if earlier.counter.dominated_by(&later.counter) {
            continue;
        }
        let counters_at_later = &snapshots[&later.step];
        let mut swappers: Vec<ProcessId> = Vec::with_capacity(oc);
        for obj in 0..oc {
            // First swap into this object, between the two boundaries,
            // whose argument does not dominate the earlier counter.
            let found = trace.events.iter().find(|ev| {
                ev.step >= earlier.step
                    && ev.step < later.step
                    && ev.obj.index() == obj
                    && ev.arg.as_ref().is_some_and(|a| {
                        !earlier.counter.dominated_by(&a.counter)
                    })
            });
            let Some(ev) = found else {
                return CheckReport::fail(
                    property,
                    Witness {
                        step: Some(later.step),
                        process: None,
                        detail: format!(
                            "no fresh swap on object {obj} between boundaries {} and {}",
                            earlier.step, later.step
                        ),
                    },
                );
            };
            swappers.push(ev.pid);
        }
        for (obj, q) in swappers.iter().enumerate() {
            if *q == earlier.process || *q == later.process {
                return CheckReport::fail(
                    property,
                    Witness {
                        step: Some(later.step),
                        process: Some(*q),
                        detail: format!("object {obj} re-swapped by a total-configuration owner"),
                    },
                );
            }
            if !earlier.counter.dominated_by(&counters_at_later[q.index()]) {
                return CheckReport::fail(
                    property,
                    Witness {
                        step: Some(later.step),
                        process: Some(*q),
                        detail: format!(
                            "swapper of object {obj} does not dominate {} at the later boundary",
                            earlier.counter
                        ),
                    },
                );
            }
        }
        let mut dedup = swappers.clone();
        dedup.sort_unstable();
        dedup.dedup();
        if dedup.len() != swappers.len() {
            return CheckReport::fail(
                property,
                Witness {
                    step: Some(later.step),
                    process: None,
                    detail: "object re-swappers are not distinct".into(),
                },
            );
        }
    }
    CheckReport::pass(property)
}
