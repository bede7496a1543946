use std::collections::BTreeSet;

use proptest::prelude::*;

use protoforge::action::Action;
use protoforge::model::{validate_spec, GoalKind, LivenessMode, RequirementLabel, Topology};
use protoforge::sim::{self, PowerModel};
use protoforge::smt;
use protoforge::trace::{self, step_knowledge, validate_all, KnowledgeRow};
use protoforge::{
    encode, parse_spec, render_spec, solve, unsat_core_minimize, validate, write_trace,
    NetworkSpec, ProtocolTrace, SearchConfig, SolveResult,
};

fn arb_topology(processes: usize) -> BoxedStrategy<Topology> {
    let pairs: Vec<(usize, usize)> = (0..processes)
        .flat_map(|l| (0..processes).filter(move |&s| s != l).map(move |s| (l, s)))
        .collect();
    prop_oneof![
        Just(Topology::all(processes)),
        Just(Topology::line(processes)),
        proptest::sample::subsequence(pairs.clone(), 0..=pairs.len())
            .prop_map(Topology::from_pairs),
    ]
    .boxed()
}

/// Small valid specs the solver handles quickly.
fn arb_spec(max_p: usize, max_m: usize, max_t: usize) -> impl Strategy<Value = NetworkSpec> {
    (1..=max_p, 0..=max_m, 0..=max_t)
        .prop_flat_map(|(p, m, t)| {
            (
                Just((p, m, t)),
                0..p,
                arb_topology(p),
                any::<bool>(),
                prop::bool::weighted(0.7),
            )
        })
        .prop_map(|((p, m, t), source, topology, live, goal)| {
            NetworkSpec::new(p, m, t, source, topology)
                .with_liveness(if live {
                    LivenessMode::EachActionAtLeastOnce
                } else {
                    LivenessMode::Off
                })
                .with_goal(if goal {
                    GoalKind::AllKnowAll
                } else {
                    GoalKind::None
                })
        })
}

/// A spec plus an arbitrary assignment of every cell.
fn arb_assignment() -> impl Strategy<Value = (NetworkSpec, Vec<Vec<Action>>)> {
    arb_spec(4, 3, 4).prop_flat_map(|spec| {
        let domain = Action::domain(spec.packets);
        let row = proptest::collection::vec(proptest::sample::select(domain), spec.processes);
        let rows = proptest::collection::vec(row, spec.horizon);
        (Just(spec), rows)
    })
}

fn arb_knowledge(processes: usize, packets: usize) -> impl Strategy<Value = KnowledgeRow> {
    proptest::collection::vec(proptest::collection::vec(any::<bool>(), packets), processes)
}

fn known_count(row: &KnowledgeRow) -> usize {
    row.iter().flatten().filter(|&&k| k).count()
}

fn sat_trace(spec: &NetworkSpec) -> Option<ProtocolTrace> {
    match solve(&encode(spec).unwrap(), &SearchConfig::default()) {
        SolveResult::Sat(trace) => Some(trace),
        _ => None,
    }
}

fn int(v: i64) -> String {
    if v < 0 {
        format!("(- {})", -v)
    } else {
        v.to_string()
    }
}

/// `get-value` text a solver would print for `trace`.
fn value_response(trace: &ProtocolTrace) -> String {
    let mut out = String::from("(");
    for (t, row) in trace.actions.iter().enumerate() {
        for (p, a) in row.iter().enumerate() {
            out += &format!(
                "((sleep {t} {p}) {}) ((listen {t} {p}) {}) ((transmit {t} {p}) {}) ",
                *a == Action::Sleep,
                *a == Action::Listen,
                int(a.transmit_code())
            );
        }
    }
    out.push(')');
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn parse_accepts_exactly_valid_specs(
        p in 0usize..5,
        m in prop_oneof![0usize..4, 60usize..70],
        t in 0usize..4,
        source in 0usize..6,
        pairs in proptest::collection::vec((0usize..6, 0usize..6), 0..5),
        explicit in any::<bool>(),
    ) {
        let topology = if explicit { Topology::from_pairs(pairs) } else { Topology::all(p) };
        let spec = NetworkSpec::new(p, m, t, source, topology);
        let parsed = parse_spec(&render_spec(&spec));
        prop_assert_eq!(parsed.is_ok(), validate_spec(&spec).is_ok());
        if let Ok(back) = parsed {
            prop_assert_eq!(back, spec);
        }
    }

    #[test]
    fn structural_labels_hold_for_any_assignment((spec, actions) in arb_assignment()) {
        let trace = ProtocolTrace::derive(spec, actions);
        let structural: BTreeSet<_> =
            [RequirementLabel::ExactlyOneAction, RequirementLabel::ContentDomain].into();
        prop_assert!(validate(&trace, &structural).unwrap().is_empty());
    }

    #[test]
    fn encoding_is_deterministic_and_disable_keeps_the_grid(spec in arb_spec(4, 3, 4)) {
        let cs = encode(&spec).unwrap();
        prop_assert_eq!(cs.describe().to_string(), encode(&spec).unwrap().describe().to_string());
        for label in cs.enabled.iter().filter(|l| !l.is_structural()) {
            let relaxed = cs.disable(*label).unwrap();
            prop_assert_eq!(&relaxed.cells, &cs.cells);
        }
    }

    #[test]
    fn knowledge_never_shrinks_across_a_step((spec, actions) in arb_assignment()) {
        let trace = ProtocolTrace::derive(spec, actions);
        for pair in trace.knowledge.windows(2) {
            prop_assert!(known_count(&pair[1]) >= known_count(&pair[0]));
            for (before, after) in pair[0].iter().flatten().zip(pair[1].iter().flatten()) {
                prop_assert!(!before || *after);
            }
        }
    }

    #[test]
    fn step_is_monotone_in_knowledge(
        (acts, topology, small, extra) in (1usize..4, 0usize..3).prop_flat_map(|(p, m)| (
            proptest::collection::vec(proptest::sample::select(Action::domain(m)), p),
            arb_topology(p),
            arb_knowledge(p, m),
            arb_knowledge(p, m),
        )),
    ) {
        let large: KnowledgeRow = small
            .iter()
            .zip(&extra)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| *x || *y).collect())
            .collect();
        let after_small = step_knowledge(&small, &acts, &topology);
        let after_large = step_knowledge(&large, &acts, &topology);
        for (a, b) in after_small.iter().flatten().zip(after_large.iter().flatten()) {
            prop_assert!(!a || *b);
        }
    }

    #[test]
    fn sat_traces_validate_and_are_reproducible(spec in arb_spec(3, 2, 3)) {
        let cs = encode(&spec).unwrap();
        let first = solve(&cs, &SearchConfig::default());
        let second = solve(&cs, &SearchConfig::default());
        prop_assert_eq!(&first, &second);
        if let SolveResult::Sat(trace) = first {
            prop_assert!(validate_all(&trace).unwrap().is_empty());
            prop_assert_eq!(write_trace(&trace), write_trace(second.trace().unwrap()));
        }
    }

    #[test]
    fn feasibility_is_monotone_in_the_horizon(spec in arb_spec(3, 2, 3), extra in 1usize..3) {
        if let Some(trace) = sat_trace(&spec) {
            let longer = spec.with_horizon(spec.horizon + extra);
            let mut actions = trace.actions.clone();
            actions.extend(vec![vec![Action::Sleep; spec.processes]; extra]);
            let padded = ProtocolTrace::derive(longer.clone(), actions);
            prop_assert!(validate_all(&padded).unwrap().is_empty());
            prop_assert!(sat_trace(&longer).is_some());
        }
    }

    #[test]
    fn minimized_cores_are_minimal(spec in arb_spec(2, 2, 2)) {
        let cs = encode(&spec).unwrap();
        let config = SearchConfig::default();
        if let Ok(core) = unsat_core_minimize(&cs, &config) {
            prop_assert!(solve(&cs.restricted_to(&core.labels), &config).is_unsat());
            for label in &core.labels {
                let mut smaller = core.labels.clone();
                smaller.remove(label);
                prop_assert!(solve(&cs.restricted_to(&smaller), &config).is_sat());
            }
        }
    }

    #[test]
    fn power_is_the_sum_of_cell_costs(
        spec in arb_spec(3, 2, 3).prop_map(|s| s.with_goal(GoalKind::None)),
        active in 0u64..5,
        idle in 0u64..3,
    ) {
        // Liveness alone can be infeasible on short horizons.
        let Some(trace) = sat_trace(&spec) else { return Ok(()) };
        let power = PowerModel { active_cost: active, idle_cost: idle };
        let report = sim::simulate_trace(&trace, power).unwrap();
        let sleeping = trace.actions.iter().flatten().filter(|a| **a == Action::Sleep).count() as u64;
        let cells = (spec.horizon * spec.processes) as u64;
        prop_assert_eq!(report.total_power, active * (cells - sleeping) + idle * sleeping);
    }

    #[test]
    fn goal_traces_complete_by_the_deadline(spec in arb_spec(3, 2, 3)) {
        if let Some(trace) = sat_trace(&spec).filter(|_| spec.goal == GoalKind::AllKnowAll) {
            let report = sim::simulate_trace(&trace, PowerModel::default()).unwrap();
            prop_assert!(report.completed);
            prop_assert!(report.completion_slot.unwrap() <= spec.horizon);
        }
    }

    #[test]
    fn baseline_keeps_everyone_awake(spec in arb_spec(4, 3, 0), active in 1u64..4, max in 0usize..12) {
        let (trace, report) = sim::run_baseline(&spec, PowerModel::with_active_cost(active), max);
        prop_assert!(trace.actions.iter().flatten().all(|a| *a != Action::Sleep));
        prop_assert_eq!(report.total_power, report.slots_run as u64 * spec.processes as u64 * active);
    }

    #[test]
    fn smt_documents_are_stable_and_well_formed(spec in arb_spec(3, 2, 3)) {
        let doc = smt::emit_smtlib(&spec).unwrap();
        prop_assert_eq!(&doc, &smt::emit_smtlib(&spec).unwrap());
        let exprs = smt::parse_sexps(&doc).unwrap();
        let printed: Vec<String> = exprs.iter().map(ToString::to_string).collect();
        prop_assert_eq!(smt::parse_sexps(&printed.join("\n")).unwrap(), exprs);
    }

    #[test]
    fn value_responses_rebuild_the_trace((spec, actions) in arb_assignment()) {
        let trace = ProtocolTrace::derive(spec.clone(), actions);
        let back = smt::parse_value_response(&value_response(&trace), &spec).unwrap();
        prop_assert_eq!(back, trace);
    }
}

/// Single-slot cases over every action combination for up to three processes.
fn single_slots(processes: usize, packets: usize) -> impl Iterator<Item = Vec<Action>> {
    let domain = Action::domain(packets);
    let total = domain.len().pow(processes as u32);
    (0..total).map(move |mut code| {
        (0..processes)
            .map(|_| {
                let a = domain[code % domain.len()];
                code /= domain.len();
                a
            })
            .collect()
    })
}

#[test]
fn line_delivers_each_packet_to_at_most_one_process_per_slot() {
    for processes in 1..=3 {
        let spec = NetworkSpec::new(processes, 2, 1, 0, Topology::line(processes));
        let now = trace::initial_knowledge(&spec);
        for acts in single_slots(processes, 2) {
            let next = step_knowledge(&now, &acts, &spec.topology);
            for k in 0..2 {
                let gainers = (0..processes).filter(|&p| !now[p][k] && next[p][k]).count();
                assert!(gainers <= 1, "{acts:?}");
            }
        }
    }
}

#[test]
fn all_topology_delivers_to_every_listener_at_once() {
    for processes in 1..=3 {
        let spec = NetworkSpec::new(processes, 2, 1, 0, Topology::all(processes));
        let now = trace::initial_knowledge(&spec);
        for acts in single_slots(processes, 2) {
            let next = step_knowledge(&now, &acts, &spec.topology);
            let senders: Vec<usize> = (0..processes).filter(|&p| acts[p].is_transmit()).collect();
            for (p, a) in acts.iter().enumerate() {
                let expected = match (senders.as_slice(), a) {
                    ([s], Action::Listen) => acts[*s].packet().map(|k| k - 1),
                    _ => None,
                };
                for k in 0..2 {
                    assert_eq!(next[p][k], now[p][k] || expected == Some(k), "{acts:?}");
                }
            }
        }
    }
}
