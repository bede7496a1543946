//! Slotted shared-channel simulation with per-slot power accounting.
//!
//! Synthesized traces are replayed under the network-wide learning rule.
//! The eager baseline models a carrier-sensing network instead: a listener is
//! only jammed by speakers it can actually hear.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{Action, Content};
use crate::model::{NetworkSpec, RequirementLabel};
use crate::trace::{self, KnowledgeRow, ProtocolTrace, TraceError, Violation};

/// Power units charged per slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PowerModel {
    /// Cost of a transmit or listen slot.
    pub active_cost: u64,
    /// Cost of a sleep slot.
    pub idle_cost: u64,
}

impl Default for PowerModel {
    fn default() -> Self {
        Self {
            active_cost: 1,
            idle_cost: 0,
        }
    }
}

impl PowerModel {
    pub fn with_active_cost(active_cost: u64) -> Self {
        Self {
            active_cost,
            ..Self::default()
        }
    }

    pub fn cost(&self, action: Action) -> u64 {
        if action.is_active() {
            self.active_cost
        } else {
            self.idle_cost
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimReport {
    pub spec: NetworkSpec,
    pub power: PowerModel,
    pub slots_run: usize,
    /// `delivered[p][k - 1]` at the end of the run.
    pub delivered: Vec<Vec<bool>>,
    pub per_process_power: Vec<u64>,
    pub total_power: u64,
    /// Slots with two or more transmitters.
    pub concurrent_tx_slots: usize,
    pub completed: bool,
    /// Earliest time index at which every process knows every packet.
    pub completion_slot: Option<usize>,
}

impl SimReport {
    fn tally(
        spec: &NetworkSpec,
        power: PowerModel,
        actions: &[Vec<Action>],
        knowledge: &[KnowledgeRow],
    ) -> Self {
        let mut per_process_power = vec![0u64; spec.processes];
        let mut concurrent_tx_slots = 0;
        for row in actions {
            for (p, &a) in row.iter().enumerate() {
                per_process_power[p] += power.cost(a);
            }
            if row.iter().filter(|a| a.is_transmit()).count() >= 2 {
                concurrent_tx_slots += 1;
            }
        }
        let completion_slot = knowledge
            .iter()
            .position(|row| row.iter().flatten().all(|&known| known));
        SimReport {
            spec: spec.clone(),
            power,
            slots_run: actions.len(),
            delivered: knowledge.last().cloned().unwrap_or_default(),
            total_power: per_process_power.iter().sum(),
            per_process_power,
            concurrent_tx_slots,
            completed: completion_slot.is_some(),
            completion_slot,
        }
    }

    /// Whether the run relied on the channel sorting out simultaneous senders.
    pub fn needs_collision_detection(&self) -> bool {
        self.concurrent_tx_slots > 0
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let yes_no = |b: bool| if b { "yes" } else { "no" };
        let _ = writeln!(out, "slots run            {}", self.slots_run);
        let _ = writeln!(out, "total power          {} pw", self.total_power);
        let per: Vec<String> = self.per_process_power.iter().map(u64::to_string).collect();
        let _ = writeln!(out, "per-process power    [{}]", per.join(", "));
        let _ = writeln!(out, "concurrent tx slots  {}", self.concurrent_tx_slots);
        let _ = writeln!(out, "completed            {}", yes_no(self.completed));
        if let Some(t) = self.completion_slot {
            let _ = writeln!(out, "completion slot      {t}");
        }
        out
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("trace violates its requirements: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    InvalidTrace(Vec<Violation>),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("reports describe different instances or power models")]
    SpecMismatch,
}

/// Replays `trace` slot by slot and charges power per cell.
///
/// The trace must satisfy every applicable requirement except the deadline;
/// whether the run completes is part of the report.
pub fn simulate_trace(trace: &ProtocolTrace, power: PowerModel) -> Result<SimReport, SimError> {
    let mut guard = RequirementLabel::applicable(&trace.spec);
    guard.remove(&RequirementLabel::GoalDeadline);
    let violations = trace::validate(trace, &guard)?;
    if !violations.is_empty() {
        return Err(SimError::InvalidTrace(violations));
    }
    let knowledge = trace.actions.iter().fold(
        vec![trace::initial_knowledge(&trace.spec)],
        |mut rows, acts| {
            let next = trace::step_knowledge(rows.last().unwrap(), acts, &trace.spec.topology);
            rows.push(next);
            rows
        },
    );
    Ok(SimReport::tally(
        &trace.spec,
        power,
        &trace.actions,
        &knowledge,
    ))
}

/// The eager policy's choice for every process in one slot.
///
/// The source cycles through all packets without feedback. Any other process
/// forwards the lowest packet it knows that some process hearing it still
/// lacks, and listens otherwise. Nobody sleeps.
fn baseline_slot(spec: &NetworkSpec, t: usize, now: &KnowledgeRow) -> Vec<Action> {
    (0..spec.processes)
        .map(|p| {
            if p == spec.source {
                return Action::Transmit(Content::Packet(t % spec.packets + 1));
            }
            let listeners: Vec<usize> = (0..spec.processes)
                .filter(|&q| spec.topology.hears(q, p))
                .collect();
            (1..=spec.packets)
                .find(|&k| now[p][k - 1] && listeners.iter().any(|&q| !now[q][k - 1]))
                .map_or(Action::Listen, |k| Action::Transmit(Content::Packet(k)))
        })
        .collect()
}

/// Carrier-sense learning: a listener gains a packet when exactly one of the
/// speakers it can hear transmits, and that transmission carries a packet.
fn baseline_step(spec: &NetworkSpec, now: &KnowledgeRow, acts: &[Action]) -> KnowledgeRow {
    let mut next = now.clone();
    for (p, row) in next.iter_mut().enumerate() {
        if acts[p] != Action::Listen {
            continue;
        }
        let mut heard = spec
            .topology
            .speakers_of(p)
            .filter(|&s| acts[s].is_transmit());
        if let (Some(s), None) = (heard.next(), heard.next()) {
            if let Some(k) = acts[s].packet() {
                row[k - 1] = true;
            }
        }
    }
    next
}

/// Runs the eager always-on policy until every process knows every packet
/// or `max_slots` slots have elapsed.
pub fn run_baseline(
    spec: &NetworkSpec,
    power: PowerModel,
    max_slots: usize,
) -> (ProtocolTrace, SimReport) {
    let complete = |row: &KnowledgeRow| row.iter().flatten().all(|&k| k);
    let mut knowledge = vec![trace::initial_knowledge(spec)];
    let mut actions = Vec::new();
    while actions.len() < max_slots && !complete(knowledge.last().unwrap()) {
        let now = knowledge.last().unwrap();
        let acts = baseline_slot(spec, actions.len(), now);
        let next = baseline_step(spec, now, &acts);
        actions.push(acts);
        knowledge.push(next);
    }
    let run_spec = spec.with_horizon(actions.len());
    let report = SimReport::tally(&run_spec, power, &actions, &knowledge);
    (
        ProtocolTrace::from_parts(run_spec, actions, knowledge),
        report,
    )
}

/// Side-by-side view of a synthesized run and a baseline run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ComparisonReport {
    pub synthesized: SimReport,
    pub baseline: SimReport,
    /// `synthesized`, `baseline` or `tie`.
    pub lower_power: &'static str,
    pub verdict: String,
}

pub fn compare(synth: &SimReport, base: &SimReport) -> Result<ComparisonReport, SimError> {
    if !synth.spec.same_instance(&base.spec) || synth.power != base.power {
        return Err(SimError::SpecMismatch);
    }
    let required = |r: &SimReport| {
        if r.needs_collision_detection() {
            "required"
        } else {
            "not required"
        }
    };
    let lower_power = match synth.total_power.cmp(&base.total_power) {
        std::cmp::Ordering::Less => "synthesized",
        std::cmp::Ordering::Greater => "baseline",
        std::cmp::Ordering::Equal => "tie",
    };
    let verdict = if synth == base {
        "tie".to_string()
    } else {
        format!(
            "synthesized: {} pw, baseline: {} pw, lower power: {lower_power}; collision detection: baseline {}, synthesized {}",
            synth.total_power,
            base.total_power,
            required(base),
            required(synth),
        )
    };
    Ok(ComparisonReport {
        synthesized: synth.clone(),
        baseline: base.clone(),
        lower_power,
        verdict,
    })
}

impl ComparisonReport {
    /// Fixed-width table followed by the verdict line.
    pub fn render(&self) -> String {
        let (s, b) = (&self.synthesized, &self.baseline);
        let yes_no = |x: bool| if x { "yes" } else { "no" };
        let slot = |r: &SimReport| r.completion_slot.map_or("-".to_string(), |t| t.to_string());
        let rows = [
            (
                "slots run",
                s.slots_run.to_string(),
                b.slots_run.to_string(),
            ),
            (
                "total power (pw)",
                s.total_power.to_string(),
                b.total_power.to_string(),
            ),
            (
                "concurrent tx slots",
                s.concurrent_tx_slots.to_string(),
                b.concurrent_tx_slots.to_string(),
            ),
            (
                "collision detection needed",
                yes_no(s.needs_collision_detection()).to_string(),
                yes_no(b.needs_collision_detection()).to_string(),
            ),
            (
                "completed",
                yes_no(s.completed).to_string(),
                yes_no(b.completed).to_string(),
            ),
            ("completion slot", slot(s), slot(b)),
        ];
        let mut out = format!("{:<28}{:>12}{:>12}\n", "metric", "synthesized", "baseline");
        for (name, a, c) in rows {
            let _ = writeln!(out, "{name:<28}{a:>12}{c:>12}");
        }
        let _ = writeln!(out, "verdict: {}", self.verdict);
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::Action::{Listen, Sleep, Transmit};
    use crate::action::Content::Packet;
    use crate::model::{GoalKind, Topology};

    fn line3() -> NetworkSpec {
        NetworkSpec::new(3, 1, 2, 0, Topology::line(3))
    }

    fn pw1() -> PowerModel {
        PowerModel::default()
    }

    #[test]
    fn solver_schedule_costs_four() {
        let trace = ProtocolTrace::derive(
            line3(),
            vec![
                vec![Transmit(Packet(1)), Listen, Sleep],
                vec![Sleep, Transmit(Packet(1)), Listen],
            ],
        );
        let r = simulate_trace(&trace, pw1()).unwrap();
        assert_eq!(r.total_power, 4);
        assert_eq!(r.per_process_power, vec![1, 2, 1]);
        assert!(r.completed);
        assert_eq!(r.completion_slot, Some(2));
        assert_eq!(r.concurrent_tx_slots, 0);
    }

    #[test]
    fn hand_schedule_costs_five() {
        let trace = ProtocolTrace::derive(
            line3(),
            vec![
                vec![Transmit(Packet(1)), Listen, Listen],
                vec![Sleep, Transmit(Packet(1)), Listen],
            ],
        );
        let r = simulate_trace(&trace, pw1()).unwrap();
        assert_eq!(r.total_power, 5);
        assert!(r.completed);
    }

    #[test]
    fn sleeping_costs_nothing_and_never_completes() {
        let spec = line3().with_goal(GoalKind::None);
        let trace = ProtocolTrace::derive(spec, vec![vec![Sleep; 3]; 2]);
        let r = simulate_trace(&trace, pw1()).unwrap();
        assert_eq!(r.total_power, 0);
        assert!(!r.completed);
        assert_eq!(r.completion_slot, None);

        let costly = simulate_trace(
            &trace,
            PowerModel {
                active_cost: 1,
                idle_cost: 2,
            },
        )
        .unwrap();
        assert_eq!(costly.total_power, 12);
    }

    #[test]
    fn invalid_trace_is_refused() {
        let trace = ProtocolTrace::derive(
            line3().with_horizon(1),
            vec![vec![Listen, Transmit(Packet(1)), Sleep]],
        );
        assert!(matches!(
            simulate_trace(&trace, pw1()),
            Err(SimError::InvalidTrace(_))
        ));
    }

    #[test]
    fn baseline_on_line() {
        let (trace, r) = run_baseline(&line3(), pw1(), 16);
        assert_eq!(r.completion_slot, Some(2));
        assert_eq!(r.slots_run, 2);
        assert_eq!(r.total_power, 6);
        assert_eq!(r.concurrent_tx_slots, 1);
        assert_eq!(
            trace.actions[1],
            vec![Transmit(Packet(1)), Transmit(Packet(1)), Listen]
        );
    }

    #[test]
    fn baseline_broadcasts_back_to_back() {
        let spec = NetworkSpec::new(3, 2, 0, 0, Topology::all(3));
        let (trace, r) = run_baseline(&spec, pw1(), 16);
        assert_eq!(r.completion_slot, Some(2));
        assert_eq!(r.total_power, 6);
        assert_eq!(r.concurrent_tx_slots, 0);
        assert_eq!(trace.actions[1], vec![Transmit(Packet(2)), Listen, Listen]);
    }

    #[test]
    fn baseline_without_packets_is_done_immediately() {
        let spec = NetworkSpec::new(3, 0, 0, 0, Topology::line(3));
        let (_, r) = run_baseline(&spec, pw1(), 16);
        assert_eq!(r.completion_slot, Some(0));
        assert_eq!(r.total_power, 0);
    }

    #[test]
    fn baseline_stops_at_max_slots() {
        let spec = NetworkSpec::new(2, 1, 0, 0, Topology::default());
        let (trace, r) = run_baseline(&spec, pw1(), 5);
        assert_eq!(trace.horizon(), 5);
        assert!(!r.completed);
        assert_eq!(r.total_power, 10);
    }

    #[test]
    fn baseline_line_takes_p_minus_one_slots() {
        for p in 2..=5 {
            let spec = NetworkSpec::new(p, 1, 0, 0, Topology::line(p));
            let (_, r) = run_baseline(&spec, pw1(), 64);
            assert_eq!(r.completion_slot, Some(p - 1), "P={p}");
            assert_eq!(r.total_power, (p * (p - 1)) as u64);
        }
    }

    #[test]
    fn comparison_verdicts() {
        let synth = simulate_trace(
            &ProtocolTrace::derive(
                line3(),
                vec![
                    vec![Transmit(Packet(1)), Listen, Sleep],
                    vec![Sleep, Transmit(Packet(1)), Listen],
                ],
            ),
            pw1(),
        )
        .unwrap();
        let (_, base) = run_baseline(&line3(), pw1(), 16);
        let cmp = compare(&synth, &base).unwrap();
        assert_eq!(cmp.lower_power, "synthesized");
        assert_eq!(
            cmp.verdict,
            "synthesized: 4 pw, baseline: 6 pw, lower power: synthesized; collision detection: baseline required, synthesized not required"
        );
        assert!(cmp
            .render()
            .contains("total power (pw)                       4           6"));
        let json: serde_json::Value = serde_json::from_str(&cmp.to_json()).unwrap();
        assert_eq!(json["baseline"]["total_power"], 6);

        assert_eq!(compare(&synth, &synth).unwrap().verdict, "tie");

        let other = run_baseline(&NetworkSpec::new(4, 1, 0, 0, Topology::line(4)), pw1(), 16).1;
        assert!(matches!(
            compare(&synth, &other),
            Err(SimError::SpecMismatch)
        ));
    }
}
