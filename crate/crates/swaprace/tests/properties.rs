//! Cross-module properties over randomized instances and schedules.

use proptest::prelude::*;

use swaprace::analysis::{self, AnalysisOptions};
use swaprace::checkers;
use swaprace::harness::{self, format, Schedule};
use swaprace::{LapRace, ProcessId, Protocol};

/// Instance parameters small enough for fast runs.
fn small_instance() -> impl Strategy<Value = (u32, u32, u32)> {
    (2u32..=5).prop_flat_map(|n| (Just(n), 1u32..n, 2u32..=3))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Replaying any produced trace reproduces its final configuration,
    /// and serialization round-trips.
    #[test]
    fn replay_and_format_fidelity(
        (n, k, m) in small_instance(),
        seed in any::<u64>(),
    ) {
        let race = LapRace::new(n, k, m).unwrap();
        let inputs: Vec<u32> = (0..n).map(|i| i % m).collect();
        let trace = harness::run(
            &race,
            &inputs,
            &Schedule::Random { seed, steps: None },
            None,
        ).unwrap();
        let replayed = harness::replay(&race, &trace).unwrap();
        prop_assert_eq!(&replayed, &trace.final_config);

        let bytes = format::trace_to_bytes(&trace).unwrap();
        let back = format::read_trace(std::io::Cursor::new(&bytes)).unwrap();
        prop_assert_eq!(trace, back);
    }

    /// Safety holds under arbitrary schedules: at most k distinct values
    /// decided per run, all of them inputs, and the structural trace
    /// observations pass.
    #[test]
    fn random_schedules_are_safe(
        (n, k, m) in small_instance(),
        inputs_seed in any::<u64>(),
        seed in any::<u64>(),
    ) {
        let race = LapRace::new(n, k, m).unwrap();
        let inputs: Vec<u32> = (0..n).map(|i| ((i as u64 ^ inputs_seed) % m as u64) as u32).collect();
        let trace = harness::run(
            &race,
            &inputs,
            &Schedule::Random { seed, steps: None },
            None,
        ).unwrap();
        prop_assert!(checkers::check_k_agreement(&[&trace], k).passed());
        prop_assert!(checkers::check_validity(&trace).passed());
        prop_assert!(checkers::check_lap_observations(&trace).passed());
        prop_assert!(checkers::check_total_witness(&trace).passed());
        prop_assert!(checkers::check_manyprocesses(&trace, false).passed());
    }

    /// A random trace's process sequence re-run as an explicit schedule
    /// reproduces the same events: schedules, not wall time, determine
    /// everything.
    #[test]
    fn explicit_reruns_match_random_runs(
        (n, k, m) in small_instance(),
        seed in any::<u64>(),
    ) {
        let race = LapRace::new(n, k, m).unwrap();
        let inputs: Vec<u32> = (0..n).map(|i| i % m).collect();
        let random = harness::run(
            &race,
            &inputs,
            &Schedule::Random { seed, steps: None },
            None,
        ).unwrap();
        let pids: Vec<ProcessId> = random.events.iter().map(|ev| ev.pid).collect();
        let steps = pids.len() as u64;
        let explicit = harness::run(
            &race,
            &inputs,
            &Schedule::Explicit { pids },
            Some(steps),
        ).unwrap();
        prop_assert_eq!(&random.events, &explicit.events);
        prop_assert_eq!(&random.final_config, &explicit.final_config);
    }

    /// Group-only runs mirror exactly onto configurations that differ
    /// only in the inputs of processes outside the group.
    #[test]
    fn mirroring_is_exact_for_untouched_differences(
        (n, k, m) in small_instance(),
        other_input in 0u32..3,
    ) {
        prop_assume!(n >= 3);
        let race = LapRace::new(n, k, m).unwrap();
        let mut inputs: Vec<u32> = (0..n).map(|i| i % m).collect();
        let c = harness::initial_config(&race, &inputs).unwrap();
        inputs[(n - 1) as usize] = other_input % m;
        let c_prime = harness::initial_config(&race, &inputs).unwrap();
        let solo = harness::solo_run(&race, &c, ProcessId(0), race.solo_step_bound()).unwrap();
        let mirrored = harness::extend_indistinguishably(
            &race,
            &c,
            &c_prime,
            &[ProcessId(0)],
            &solo.events,
        ).unwrap();
        prop_assert_eq!(&mirrored.events, &solo.events);
    }

    /// Decided values reachable at a smaller depth are a subset of those
    /// reachable at a larger one.
    #[test]
    fn valency_decisions_grow_with_depth(
        prefix_seed in any::<u64>(),
        d1 in 2u32..7,
        extra in 0u32..5,
    ) {
        use rand_chacha::rand_core::{RngCore, SeedableRng};
        let race = LapRace::new(3, 1, 2).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(prefix_seed);
        let mut config = harness::initial_config(&race, &[0, 1, 1]).unwrap();
        for _ in 0..rng.next_u64() % 6 {
            let live: Vec<ProcessId> = (0..3)
                .map(ProcessId)
                .filter(|pid| race.decided_value(&config.processes[pid.index()]).is_none())
                .collect();
            if live.is_empty() { break; }
            let pid = live[(rng.next_u64() % live.len() as u64) as usize];
            harness::step(&race, &mut config, pid).unwrap();
        }
        let subject = [ProcessId(0), ProcessId(1)];
        let opts = AnalysisOptions::default();
        let shallow = analysis::valency(&race, &config, &subject, d1, &opts).unwrap();
        let deep = analysis::valency(&race, &config, &subject, d1 + extra, &opts).unwrap();
        for v in &shallow.decided_values {
            prop_assert!(deep.decided_values.contains(v));
        }
    }

    /// Covered objects end up holding exactly the pending arguments no
    /// matter which subject-only execution (touching only covered
    /// objects) ran before the block swap.
    #[test]
    fn block_swap_hides_prior_covered_writes(
        roles in proptest::collection::vec(0usize..2, 0..4),
    ) {
        let race = LapRace::new(3, 1, 2).unwrap();
        // p1 and p2 cover both objects: advance p2 one step first.
        let mut base = harness::initial_config(&race, &[0, 1, 1]).unwrap();
        harness::step(&race, &mut base, ProcessId(2)).unwrap();
        let cover = analysis::detect_cover_among(&race, &base, &[ProcessId(1), ProcessId(2)]);
        prop_assert_eq!(cover.len(), 2);

        // Subject p0 takes `roles.len()` steps; with every object covered
        // any p0-only execution touches covered objects only.
        let mut run = base.clone();
        for _ in &roles {
            if race.decided_value(&run.processes[0]).is_none() {
                harness::step(&race, &mut run, ProcessId(0)).unwrap();
            }
        }
        let blocked = analysis::block_swap(&race, &run, &cover).unwrap();
        for member in &cover.members {
            let swaprace::protocol::PendingOp::Swap { argument, .. } = &member.op else {
                panic!("covers hold swaps");
            };
            prop_assert_eq!(blocked.store.value(member.object).unwrap(), argument);
        }
    }
}

/// Exploration soundness: sampled recorded paths re-execute through the
/// harness without divergence.
#[test]
fn explored_paths_are_schedulable() {
    let race = LapRace::new(3, 1, 2).unwrap();
    let inputs = [0u32, 1, 1];
    let opts = AnalysisOptions::default();
    let (summary, paths) = analysis::explore_paths(&race, &inputs, 8, &opts).unwrap();
    assert_eq!(summary.states, paths.len() as u64);
    // Every 37th path plus the longest ones: a hundred-ish spot checks.
    let mut checked = 0;
    for (i, path) in paths.iter().enumerate() {
        if i % 37 != 0 && path.len() < 8 {
            continue;
        }
        let pids = path.clone();
        let steps = pids.len() as u64;
        let trace = harness::run(&race, &inputs, &Schedule::Explicit { pids }, Some(steps))
            .expect("recorded path must be schedulable");
        assert!(checkers::check_validity(&trace).passed());
        checked += 1;
        if checked >= 150 {
            break;
        }
    }
    assert!(checked >= 100, "spot-checked {checked} paths");
}

/// Pooled agreement across pieces of one assembled execution: decisions
/// of a prefix and its extension count together.
#[test]
fn pooled_agreement_over_prefix_extensions() {
    let race = LapRace::new(3, 1, 2).unwrap();
    let inputs = [0u32, 1, 1];
    let prefix = harness::run(
        &race,
        &inputs,
        &Schedule::Solo { pid: ProcessId(0) },
        None,
    )
    .unwrap();
    // Extend the finished prefix by letting the remaining processes run
    // to completion one after the other, then re-run the whole schedule
    // as a single execution.
    let mut config = harness::replay(&race, &prefix).unwrap();
    let mut pids: Vec<ProcessId> = prefix.events.iter().map(|ev| ev.pid).collect();
    for pid in [ProcessId(1), ProcessId(2)] {
        let solo = harness::solo_run(&race, &config, pid, race.solo_step_bound()).unwrap();
        pids.extend(solo.events.iter().map(|ev| ev.pid));
        config = solo.final_config;
    }
    let steps = pids.len() as u64;
    let trace = harness::run(&race, &inputs, &Schedule::Explicit { pids }, Some(steps)).unwrap();
    assert_eq!(trace.final_config.decisions.len(), 3);
    assert!(checkers::check_k_agreement(&[&prefix, &trace], 1).passed());
}
