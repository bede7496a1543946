//! Depth-first search over the action grid with slot-wise knowledge
//! propagation, plus the brute-force enumeration oracle, minimum-horizon
//! search and deletion-based core minimization.
//!
//! Disabling a knowledge requirement relaxes the derived knowledge to its
//! largest consistent value: without initial knowledge every process starts
//! out knowing everything, without the learning rule every process knows
//! everything after the first slot, and without the hears relation every
//! speaker is audible. The only consumers of knowledge (transmit-only-known
//! and the deadline) prefer more knowledge, so the largest grid is the one
//! to test. Never-forget is implied by the learning rule and never prunes.

use std::collections::BTreeSet;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::action::{Action, Content};
use crate::encoder::{encode, Atom, ConstraintSystem, EncodeError};
use crate::model::{GoalKind, NetworkSpec, RequirementLabel};
use crate::trace::{self, ProtocolTrace};

/// A group of values in the per-cell value order. `Packets` expands to every
/// packet, ascending.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ValueClass {
    Sleep,
    Listen,
    Garbage,
    Packets,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchConfig {
    value_order: [ValueClass; 4],
    node_limit: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("value order must be a permutation of sleep, listen, garbage, packets")]
    NotPermutation,
    #[error("node limit must be at least 1")]
    ZeroNodeLimit,
}

impl Default for SearchConfig {
    /// Low-activity first: sleep, listen, packets ascending, garbage.
    fn default() -> Self {
        Self {
            value_order: [
                ValueClass::Sleep,
                ValueClass::Listen,
                ValueClass::Packets,
                ValueClass::Garbage,
            ],
            node_limit: None,
        }
    }
}

impl SearchConfig {
    pub fn new(value_order: [ValueClass; 4], node_limit: Option<u64>) -> Result<Self, ConfigError> {
        let distinct: BTreeSet<_> = value_order.iter().map(|v| *v as u8).collect();
        if distinct.len() != 4 {
            return Err(ConfigError::NotPermutation);
        }
        if node_limit == Some(0) {
            return Err(ConfigError::ZeroNodeLimit);
        }
        Ok(Self {
            value_order,
            node_limit,
        })
    }

    pub fn with_node_limit(self, node_limit: u64) -> Result<Self, ConfigError> {
        Self::new(self.value_order, Some(node_limit))
    }

    pub fn value_order(&self) -> [ValueClass; 4] {
        self.value_order
    }

    pub fn node_limit(&self) -> Option<u64> {
        self.node_limit
    }

    /// The values tried for every cell, in order.
    pub fn values(&self, packets: usize) -> Vec<Action> {
        let mut out = Vec::with_capacity(packets + 3);
        for class in self.value_order {
            match class {
                ValueClass::Sleep => out.push(Action::Sleep),
                ValueClass::Listen => out.push(Action::Listen),
                ValueClass::Garbage => out.push(Action::Transmit(Content::Garbage)),
                ValueClass::Packets => {
                    out.extend((1..=packets).map(|k| Action::Transmit(Content::Packet(k))))
                }
            }
        }
        out
    }
}

/// Requirement families that cannot hold together.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct UnsatCore {
    pub labels: BTreeSet<RequirementLabel>,
}

impl fmt::Display for UnsatCore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.labels.iter().map(|l| l.name()).collect();
        f.write_str(&names.join(" "))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SolveResult {
    Sat(ProtocolTrace),
    /// No assignment satisfies the enabled requirements; the core is the
    /// whole enabled set.
    Unsat(UnsatCore),
    BudgetExhausted,
}

impl SolveResult {
    pub fn is_sat(&self) -> bool {
        matches!(self, SolveResult::Sat(_))
    }

    pub fn is_unsat(&self) -> bool {
        matches!(self, SolveResult::Unsat(_))
    }

    pub fn trace(&self) -> Option<&ProtocolTrace> {
        match self {
            SolveResult::Sat(t) => Some(t),
            _ => None,
        }
    }
}

/// What the search needs from a constraint system, read off its enabled atoms.
#[derive(Debug)]
struct Plan {
    procs: usize,
    horizon: usize,
    full: u64,
    init: Vec<u64>,
    /// `audible[listener][speaker]`; `None` when learning is unconstrained.
    audible: Option<Vec<Vec<bool>>>,
    transmit_known: bool,
    goal: bool,
    liveness: bool,
}

fn packet_bit(k: usize) -> u64 {
    1u64 << (k - 1)
}

impl Plan {
    fn compile(cs: &ConstraintSystem) -> Plan {
        use RequirementLabel as L;

        let spec = &cs.spec;
        let procs = spec.processes;
        let full = match spec.packets {
            64 => u64::MAX,
            m => (1u64 << m) - 1,
        };
        let mut init = vec![
            if cs.is_enabled(L::InitialKnowledge) {
                0
            } else {
                full
            };
            procs
        ];
        let mut heard = vec![vec![false; procs]; procs];
        let mut liveness = false;
        for c in cs.active_constraints() {
            match &c.atom {
                Atom::InitialKnowledge { p, k, known: true } => init[*p] |= packet_bit(*k),
                Atom::Audible { p, speakers } => {
                    for &s in speakers {
                        heard[*p][s] = true;
                    }
                }
                Atom::PerformsAtLeastOnce { .. } => liveness = true,
                _ => {}
            }
        }
        let audible = cs.is_enabled(L::CollisionFreeLearning).then(|| {
            if cs.is_enabled(L::HearsRelation) {
                heard
            } else {
                (0..procs)
                    .map(|l| (0..procs).map(|s| s != l).collect())
                    .collect()
            }
        });
        Plan {
            procs,
            horizon: spec.horizon,
            full,
            init,
            audible,
            transmit_known: cs.is_enabled(L::TransmitOnlyKnown),
            goal: cs.is_enabled(L::GoalDeadline) && spec.goal == GoalKind::AllKnowAll,
            liveness,
        }
    }

    fn step(&self, now: &[u64], acts: &[Action]) -> Vec<u64> {
        let Some(audible) = &self.audible else {
            return vec![self.full; self.procs];
        };
        let mut next = now.to_vec();
        let mut transmitters = acts.iter().enumerate().filter(|(_, a)| a.is_transmit());
        if let (Some((speaker, action)), None) = (transmitters.next(), transmitters.next()) {
            if let Some(k) = action.packet() {
                for (p, a) in acts.iter().enumerate() {
                    if *a == Action::Listen && audible[p][speaker] {
                        next[p] |= packet_bit(k);
                    }
                }
            }
        }
        next
    }
}

enum Outcome {
    Found,
    Exhausted,
    Budget,
}

struct Search<'a> {
    plan: &'a Plan,
    values: Vec<Action>,
    actions: Vec<Action>,
    knowledge: Vec<Vec<u64>>,
    nodes: u64,
    node_limit: Option<u64>,
}

impl Search<'_> {
    fn kinds_seen(&self, p: usize, slots: usize) -> u8 {
        (0..slots).fold(0u8, |acc, t| {
            acc | 1 << self.actions[t * self.plan.procs + p].kind() as u8
        })
    }

    /// Whether the partial assignment up to the start of slot `t` can still
    /// be completed. Each slot delivers at most one packet to a process and
    /// covers at most one action kind, so both bounds are admissible.
    fn feasible_from(&self, t: usize) -> bool {
        let plan = self.plan;
        let remaining = (plan.horizon - t) as u32;
        if plan.goal && plan.audible.is_some() {
            let behind = self.knowledge[t]
                .iter()
                .map(|k| (plan.full & !k).count_ones())
                .max()
                .unwrap_or(0);
            if behind > remaining {
                return false;
            }
        }
        if plan.liveness {
            for p in 0..plan.procs {
                if 3 - self.kinds_seen(p, t).count_ones() > remaining {
                    return false;
                }
            }
        }
        true
    }

    fn dfs(&mut self, i: usize) -> Outcome {
        let plan = self.plan;
        let (t, p) = (i / plan.procs, i % plan.procs);
        if p == 0 && !self.feasible_from(t) {
            return Outcome::Exhausted;
        }
        if t == plan.horizon {
            // Bounds are exact with zero slots left.
            return Outcome::Found;
        }
        for vi in 0..self.values.len() {
            let v = self.values[vi];
            if plan.transmit_known {
                if let Some(k) = v.packet() {
                    if self.knowledge[t][p] & packet_bit(k) == 0 {
                        continue;
                    }
                }
            }
            self.nodes += 1;
            if self.node_limit.is_some_and(|limit| self.nodes > limit) {
                return Outcome::Budget;
            }
            self.actions[i] = v;
            if p + 1 == plan.procs {
                let slot = &self.actions[t * plan.procs..(t + 1) * plan.procs];
                self.knowledge[t + 1] = plan.step(&self.knowledge[t], slot);
            }
            match self.dfs(i + 1) {
                Outcome::Exhausted => {}
                done => return done,
            }
        }
        Outcome::Exhausted
    }
}

/// Finds the first satisfying action grid in (slot, process) order under the
/// configured value order, or proves there is none.
pub fn solve(cs: &ConstraintSystem, config: &SearchConfig) -> SolveResult {
    let plan = Plan::compile(cs);
    let spec = &cs.spec;
    let mut search = Search {
        plan: &plan,
        values: config.values(spec.packets),
        actions: vec![Action::Sleep; spec.horizon * spec.processes],
        knowledge: {
            let mut rows = vec![vec![0u64; spec.processes]; spec.horizon + 1];
            rows[0] = plan.init.clone();
            rows
        },
        nodes: 0,
        node_limit: config.node_limit,
    };
    match search.dfs(0) {
        Outcome::Found => {
            let actions: Vec<Vec<Action>> = search
                .actions
                .chunks(spec.processes)
                .map(<[Action]>::to_vec)
                .collect();
            let knowledge = search
                .knowledge
                .iter()
                .map(|row| {
                    row.iter()
                        .map(|bits| {
                            (1..=spec.packets)
                                .map(|k| bits & packet_bit(k) != 0)
                                .collect()
                        })
                        .collect()
                })
                .collect();
            SolveResult::Sat(ProtocolTrace::from_parts(spec.clone(), actions, knowledge))
        }
        Outcome::Exhausted => SolveResult::Unsat(UnsatCore {
            labels: cs.enabled.clone(),
        }),
        Outcome::Budget => SolveResult::BudgetExhausted,
    }
}

/// Default cap on the number of assignments [`enumerate_all`] will visit.
pub const ENUMERATION_CEILING: u128 = 10_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EnumerateError {
    #[error("{size} assignments exceed the enumeration ceiling of {ceiling}")]
    CeilingExceeded { size: u128, ceiling: u128 },
}

/// Number of complete assignments of the cell grid, `(M + 3)^(T * P)`.
pub fn assignment_count(spec: &NetworkSpec) -> u128 {
    let base = spec.packets as u128 + 3;
    let cells = (spec.horizon * spec.processes) as u32;
    base.checked_pow(cells).unwrap_or(u128::MAX)
}

/// Brute-force oracle: every satisfying trace in lexicographic cell order,
/// truncated at `limit`. Each candidate is checked by the trace validator
/// against the largest knowledge grid the enabled rules allow.
pub fn enumerate_all(
    cs: &ConstraintSystem,
    config: &SearchConfig,
    limit: usize,
) -> Result<Vec<ProtocolTrace>, EnumerateError> {
    enumerate_all_within(cs, config, limit, ENUMERATION_CEILING)
}

pub fn enumerate_all_within(
    cs: &ConstraintSystem,
    config: &SearchConfig,
    limit: usize,
    ceiling: u128,
) -> Result<Vec<ProtocolTrace>, EnumerateError> {
    use RequirementLabel as L;

    let spec = &cs.spec;
    let size = assignment_count(spec);
    if size > ceiling {
        return Err(EnumerateError::CeilingExceeded { size, ceiling });
    }
    let values = config.values(spec.packets);
    let cells = spec.horizon * spec.processes;
    let topology = if cs.is_enabled(L::HearsRelation) {
        spec.topology.clone()
    } else {
        crate::model::Topology::all(spec.processes)
    };
    let everything = vec![vec![true; spec.packets]; spec.processes];

    let mut digits = vec![0usize; cells];
    let mut found = Vec::new();
    loop {
        if found.len() >= limit {
            break;
        }
        let actions: Vec<Vec<Action>> = if spec.processes == 0 {
            Vec::new()
        } else {
            digits
                .chunks(spec.processes)
                .map(|row| row.iter().map(|&d| values[d]).collect())
                .collect()
        };
        let mut knowledge = vec![if cs.is_enabled(L::InitialKnowledge) {
            trace::initial_knowledge(spec)
        } else {
            everything.clone()
        }];
        for acts in &actions {
            let next = if cs.is_enabled(L::CollisionFreeLearning) {
                trace::step_knowledge(knowledge.last().unwrap(), acts, &topology)
            } else {
                everything.clone()
            };
            knowledge.push(next);
        }
        let candidate = ProtocolTrace::from_parts(spec.clone(), actions, knowledge);
        if trace::validate(&candidate, &cs.enabled)
            .expect("candidate dimensions match spec")
            .is_empty()
        {
            found.push(candidate);
        }

        // Odometer: the last cell varies fastest.
        let mut i = cells;
        loop {
            if i == 0 {
                return Ok(found);
            }
            i -= 1;
            digits[i] += 1;
            if digits[i] < values.len() {
                break;
            }
            digits[i] = 0;
        }
    }
    Ok(found)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HorizonSearch {
    Found {
        horizon: usize,
        trace: ProtocolTrace,
    },
    NotFoundWithin(usize),
    /// The node budget ran out at this horizon; smaller horizons were unsat.
    Inconclusive(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HorizonError {
    #[error("minimum-horizon search needs goal = all-know-all")]
    NoGoal,
    #[error(transparent)]
    Encode(#[from] EncodeError),
}

/// Smallest horizon in `0..=t_max` at which `spec` (with its horizon
/// replaced) is satisfiable.
pub fn min_horizon(
    spec: &NetworkSpec,
    t_max: usize,
    config: &SearchConfig,
) -> Result<HorizonSearch, HorizonError> {
    if spec.goal != GoalKind::AllKnowAll {
        return Err(HorizonError::NoGoal);
    }
    for horizon in 0..=t_max {
        let cs = encode(&spec.with_horizon(horizon))?;
        match solve(&cs, config) {
            SolveResult::Sat(trace) => return Ok(HorizonSearch::Found { horizon, trace }),
            SolveResult::Unsat(_) => {}
            SolveResult::BudgetExhausted => return Ok(HorizonSearch::Inconclusive(horizon)),
        }
    }
    Ok(HorizonSearch::NotFoundWithin(t_max))
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CoreError {
    #[error("the constraint system is satisfiable")]
    Satisfiable,
    #[error("node budget exhausted while checking {0:?}")]
    BudgetExhausted(BTreeSet<RequirementLabel>),
}

/// Shrinks the enabled non-structural labels of an unsatisfiable system to a
/// 1-minimal unsatisfiable subset, trying deletions in taxonomy order.
pub fn unsat_core_minimize(
    cs: &ConstraintSystem,
    config: &SearchConfig,
) -> Result<UnsatCore, CoreError> {
    let mut core: BTreeSet<RequirementLabel> = cs
        .enabled
        .iter()
        .copied()
        .filter(|l| !l.is_structural())
        .collect();
    match solve(&cs.restricted_to(&core), config) {
        SolveResult::Sat(_) => return Err(CoreError::Satisfiable),
        SolveResult::BudgetExhausted => return Err(CoreError::BudgetExhausted(core)),
        SolveResult::Unsat(_) => {}
    }
    for label in RequirementLabel::ALL {
        if !core.contains(&label) {
            continue;
        }
        let mut trial = core.clone();
        trial.remove(&label);
        match solve(&cs.restricted_to(&trial), config) {
            SolveResult::Unsat(_) => core = trial,
            SolveResult::Sat(_) => {}
            SolveResult::BudgetExhausted => return Err(CoreError::BudgetExhausted(trial)),
        }
    }
    Ok(UnsatCore { labels: core })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::Action::{Listen, Sleep, Transmit};
    use crate::action::ActionKind;
    use crate::action::Content::{Garbage, Packet};
    use crate::model::{LivenessMode, Topology};

    fn cfg() -> SearchConfig {
        SearchConfig::default()
    }

    fn line3() -> NetworkSpec {
        NetworkSpec::new(3, 1, 2, 0, Topology::line(3))
    }

    #[test]
    fn config_validation() {
        use ValueClass::*;
        assert!(SearchConfig::new([Sleep, Sleep, Garbage, Packets], None).is_err());
        assert_eq!(
            SearchConfig::new([Listen, Sleep, Garbage, Packets], Some(0)),
            Err(ConfigError::ZeroNodeLimit)
        );
        assert_eq!(
            cfg().values(2),
            vec![
                Action::Sleep,
                Action::Listen,
                Transmit(Packet(1)),
                Transmit(Packet(2)),
                Transmit(Content::Garbage)
            ]
        );
    }

    #[test]
    fn line_relay_schedule() {
        let res = solve(&encode(&line3()).unwrap(), &cfg());
        let trace = res.trace().expect("sat");
        assert_eq!(
            trace.actions,
            vec![
                vec![Transmit(Packet(1)), Listen, Sleep],
                vec![Sleep, Transmit(Packet(1)), Listen],
            ]
        );
        assert!(trace::validate_all(trace).unwrap().is_empty());
        assert_eq!(
            trace.knowledge,
            trace::derive_knowledge(&trace.spec, &trace.actions)
        );
    }

    #[test]
    fn two_packets_in_one_slot_is_unsat() {
        let cs = encode(&NetworkSpec::new(2, 2, 1, 0, Topology::all(2))).unwrap();
        match solve(&cs, &cfg()) {
            SolveResult::Unsat(core) => assert_eq!(core.labels, cs.enabled),
            other => panic!("expected unsat, got {other:?}"),
        }
        assert!(enumerate_all(&cs, &cfg(), usize::MAX).unwrap().is_empty());
    }

    #[test]
    fn empty_problem_is_vacuously_sat() {
        let spec = NetworkSpec::new(1, 0, 0, 0, Topology::all(1)).with_goal(GoalKind::None);
        let trace = solve(&encode(&spec).unwrap(), &cfg())
            .trace()
            .cloned()
            .unwrap();
        assert!(trace.actions.is_empty());
        assert_eq!(trace.knowledge, vec![vec![Vec::<bool>::new()]]);
    }

    #[test]
    fn single_unconstrained_cell_has_three_solutions() {
        let spec = NetworkSpec::new(1, 0, 1, 0, Topology::all(1)).with_goal(GoalKind::None);
        let all = enumerate_all(&encode(&spec).unwrap(), &cfg(), usize::MAX).unwrap();
        let firsts: Vec<Action> = all.iter().map(|t| t.actions[0][0]).collect();
        assert_eq!(firsts, vec![Sleep, Listen, Transmit(Garbage)]);
    }

    #[test]
    fn enumeration_agrees_on_line() {
        let cs = encode(&line3()).unwrap();
        let all = enumerate_all(&cs, &cfg(), usize::MAX).unwrap();
        assert!(!all.is_empty());
        assert_eq!(Some(&all[0]), solve(&cs, &cfg()).trace());
    }

    #[test]
    fn ceiling_is_enforced() {
        let cs = encode(&NetworkSpec::new(4, 3, 3, 0, Topology::all(4))).unwrap();
        assert!(matches!(
            enumerate_all(&cs, &cfg(), 1),
            Err(EnumerateError::CeilingExceeded { .. })
        ));
    }

    #[test]
    fn min_horizons() {
        let find = |spec: NetworkSpec| match min_horizon(&spec, 6, &cfg()).unwrap() {
            HorizonSearch::Found { horizon, trace } => {
                assert!(trace::validate_all(&trace).unwrap().is_empty());
                horizon
            }
            other => panic!("{other:?}"),
        };
        assert_eq!(find(NetworkSpec::new(3, 2, 0, 0, Topology::all(3))), 2);
        assert_eq!(find(NetworkSpec::new(2, 1, 0, 0, Topology::all(2))), 1);
        assert_eq!(find(NetworkSpec::new(3, 1, 0, 0, Topology::line(3))), 2);

        let deaf = NetworkSpec::new(2, 1, 0, 0, Topology::default());
        assert_eq!(
            min_horizon(&deaf, 3, &cfg()).unwrap(),
            HorizonSearch::NotFoundWithin(3)
        );
        let none = deaf.with_goal(GoalKind::None);
        assert_eq!(min_horizon(&none, 3, &cfg()), Err(HorizonError::NoGoal));
    }

    #[test]
    fn budget_is_reported() {
        let cs = encode(&NetworkSpec::new(3, 2, 3, 0, Topology::line(3))).unwrap();
        let tight = cfg().with_node_limit(5).unwrap();
        assert_eq!(solve(&cs, &tight), SolveResult::BudgetExhausted);
        let spec = NetworkSpec::new(4, 3, 0, 0, Topology::line(4));
        assert!(matches!(
            min_horizon(&spec, 10, &tight).unwrap(),
            HorizonSearch::Inconclusive(_)
        ));
    }

    #[test]
    fn disabling_the_deadline_makes_tight_instance_sat() {
        let cs = encode(&NetworkSpec::new(2, 2, 1, 0, Topology::all(2))).unwrap();
        assert!(solve(&cs, &cfg()).is_unsat());
        let relaxed = cs.disable(RequirementLabel::GoalDeadline).unwrap();
        assert!(solve(&relaxed, &cfg()).is_sat());
    }

    #[test]
    fn tight_instance_core() {
        use RequirementLabel as L;
        let cs = encode(&NetworkSpec::new(2, 2, 1, 0, Topology::all(2))).unwrap();
        let core = unsat_core_minimize(&cs, &cfg()).unwrap();
        assert_eq!(
            core.labels,
            BTreeSet::from([
                L::InitialKnowledge,
                L::CollisionFreeLearning,
                L::GoalDeadline
            ])
        );
        assert_core_is_minimal(&cs, &core);
    }

    #[test]
    fn deaf_pair_core_is_minimal() {
        let spec = NetworkSpec::new(2, 1, 1, 0, Topology::default());
        let cs = encode(&spec).unwrap();
        let core = unsat_core_minimize(&cs, &cfg()).unwrap();
        assert!(
            core.labels.contains(&RequirementLabel::HearsRelation)
                || core.labels.contains(&RequirementLabel::GoalDeadline)
        );
        assert_core_is_minimal(&cs, &core);
    }

    #[test]
    fn core_of_sat_system_is_an_error() {
        let cs = encode(&line3()).unwrap();
        assert_eq!(
            unsat_core_minimize(&cs, &cfg()),
            Err(CoreError::Satisfiable)
        );
    }

    fn assert_core_is_minimal(cs: &ConstraintSystem, core: &UnsatCore) {
        assert!(solve(&cs.restricted_to(&core.labels), &cfg()).is_unsat());
        for l in &core.labels {
            let mut less = core.labels.clone();
            less.remove(l);
            assert!(
                solve(&cs.restricted_to(&less), &cfg()).is_sat(),
                "dropping {l} stays unsat"
            );
        }
    }

    #[test]
    fn liveness_mode_forces_every_action() {
        let spec = NetworkSpec::new(2, 1, 3, 0, Topology::all(2))
            .with_liveness(LivenessMode::EachActionAtLeastOnce);
        let trace = solve(&encode(&spec).unwrap(), &cfg())
            .trace()
            .cloned()
            .unwrap();
        for p in 0..2 {
            let kinds: BTreeSet<ActionKind> =
                trace.actions.iter().map(|row| row[p].kind()).collect();
            assert_eq!(kinds.len(), 3);
        }
        assert!(trace::validate_all(&trace).unwrap().is_empty());
        // Two slots cannot host three distinct actions.
        assert!(solve(&encode(&spec.with_horizon(2)).unwrap(), &cfg()).is_unsat());
    }
}
