//! Knowledge propagation, the requirement validator and the trace file format.
//!
//! The validator is the oracle for both the built-in search and the SMT
//! bridge, so nothing in this module depends on the solver.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{Action, ActionKind, Content};
use crate::model::{GoalKind, LivenessMode, NetworkSpec, ProcessId, RequirementLabel, Topology};

/// `row[p][k - 1]`: process `p` knows packet `k`.
pub type KnowledgeRow = Vec<Vec<bool>>;

/// A synthesized protocol: one action per (slot, process) plus the knowledge
/// each process holds at every time index `0..=T`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtocolTrace {
    pub spec: NetworkSpec,
    /// `actions[t][p]`, `T` rows of `P` actions.
    pub actions: Vec<Vec<Action>>,
    /// `knowledge[t][p][k - 1]`, `T + 1` rows.
    pub knowledge: Vec<KnowledgeRow>,
}

impl ProtocolTrace {
    /// Builds a trace whose knowledge grid follows the learning rule.
    pub fn derive(spec: NetworkSpec, actions: Vec<Vec<Action>>) -> Self {
        let knowledge = derive_knowledge(&spec, &actions);
        Self {
            spec,
            actions,
            knowledge,
        }
    }

    /// Builds a trace with an arbitrary knowledge grid. Use [`validate`] to
    /// check it.
    pub fn from_parts(
        spec: NetworkSpec,
        actions: Vec<Vec<Action>>,
        knowledge: Vec<KnowledgeRow>,
    ) -> Self {
        Self {
            spec,
            actions,
            knowledge,
        }
    }

    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    /// Number of non-sleep cells.
    pub fn active_cells(&self) -> usize {
        self.actions
            .iter()
            .flatten()
            .filter(|a| a.is_active())
            .count()
    }
}

impl fmt::Display for ProtocolTrace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "slot")?;
        for p in 0..self.spec.processes {
            write!(f, " {:>8}", format!("p{p}"))?;
        }
        writeln!(f)?;
        for (t, row) in self.actions.iter().enumerate() {
            write!(f, "{t:>4}")?;
            for a in row {
                write!(f, " {:>8}", a.to_string())?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Knowledge at time 0: the source knows every packet, nobody else knows any.
pub fn initial_knowledge(spec: &NetworkSpec) -> KnowledgeRow {
    (0..spec.processes)
        .map(|p| vec![p == spec.source; spec.packets])
        .collect()
}

/// The packet `listener` learns in a slot with actions `acts`, if any.
///
/// Learning needs the listener to be listening, exactly one transmitter on
/// the whole channel, that transmitter to be audible, and its content to be a
/// packet. Garbage occupies the channel without conveying anything.
fn learned_packet<F>(acts: &[Action], listener: ProcessId, audible: F) -> Option<usize>
where
    F: Fn(ProcessId, ProcessId) -> bool,
{
    if acts[listener] != Action::Listen {
        return None;
    }
    let mut transmitters = acts.iter().enumerate().filter(|(_, a)| a.is_transmit());
    let (speaker, action) = transmitters.next()?;
    if transmitters.next().is_some() || !audible(listener, speaker) {
        return None;
    }
    action.packet()
}

/// One slot of the learning rule: knowledge is kept, and a listener gains
/// packet `k` when the only transmitter in the network sends `k` and is
/// audible to it.
pub fn step_knowledge(now: &KnowledgeRow, acts: &[Action], topo: &Topology) -> KnowledgeRow {
    let mut next = now.clone();
    for (p, row) in next.iter_mut().enumerate() {
        if let Some(k) = learned_packet(acts, p, |l, s| topo.hears(l, s)) {
            if let Some(slot) = row.get_mut(k - 1) {
                *slot = true;
            }
        }
    }
    next
}

pub fn derive_knowledge(spec: &NetworkSpec, actions: &[Vec<Action>]) -> Vec<KnowledgeRow> {
    let mut rows = Vec::with_capacity(actions.len() + 1);
    rows.push(initial_knowledge(spec));
    for acts in actions {
        let next = step_knowledge(rows.last().unwrap(), acts, &spec.topology);
        rows.push(next);
    }
    rows
}

/// One failed requirement at one place in the trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub label: RequirementLabel,
    pub time: usize,
    pub process: Option<ProcessId>,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} t={}", self.label, self.time)?;
        if let Some(p) = self.process {
            write!(f, " p={p}")?;
        }
        write!(f, ": {}", self.detail)
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("slot {t}, process {p}: unknown action '{text}'")]
    UnknownAction { t: usize, p: usize, text: String },
    #[error("slot {t}, process {p}: unknown content code {code}")]
    UnknownContentCode { t: usize, p: usize, code: usize },
    #[error("knowledge at t={t}, p={p} disagrees with the learning rule")]
    KnowledgeMismatch { t: usize, p: usize },
}

fn check_dimensions(trace: &ProtocolTrace) -> Result<(), TraceError> {
    let spec = &trace.spec;
    let (t_len, p_len, m_len) = (spec.horizon, spec.processes, spec.packets);
    if trace.actions.len() != t_len {
        return Err(TraceError::Dimension(format!(
            "{} action rows for horizon {t_len}",
            trace.actions.len()
        )));
    }
    if let Some((t, row)) = trace
        .actions
        .iter()
        .enumerate()
        .find(|(_, r)| r.len() != p_len)
    {
        return Err(TraceError::Dimension(format!(
            "action row {t} has {} entries, expected {p_len}",
            row.len()
        )));
    }
    if trace.knowledge.len() != t_len + 1 {
        return Err(TraceError::Dimension(format!(
            "{} knowledge rows, expected {}",
            trace.knowledge.len(),
            t_len + 1
        )));
    }
    for (t, row) in trace.knowledge.iter().enumerate() {
        if row.len() != p_len || row.iter().any(|k| k.len() != m_len) {
            return Err(TraceError::Dimension(format!(
                "knowledge row {t} is not {p_len}x{m_len}"
            )));
        }
    }
    Ok(())
}

fn packets_listed(row: &[bool], pred: impl Fn(usize) -> bool) -> Vec<usize> {
    (1..=row.len()).filter(|&k| pred(k)).collect()
}

/// Checks every enabled requirement against `trace`, reporting one violation
/// per offending (label, time, process).
pub fn validate(
    trace: &ProtocolTrace,
    enabled: &BTreeSet<RequirementLabel>,
) -> Result<Vec<Violation>, TraceError> {
    use RequirementLabel as L;

    check_dimensions(trace)?;
    let spec = &trace.spec;
    let (horizon, m) = (spec.horizon, spec.packets);
    let on = |l: L| enabled.contains(&l);
    let mut out = Vec::new();
    let mut push = |label, time, process, detail: String| {
        out.push(Violation {
            label,
            time,
            process: Some(process),
            detail,
        })
    };

    for (t, acts) in trace.actions.iter().enumerate() {
        for (p, &a) in acts.iter().enumerate() {
            if on(L::ExactlyOneAction) {
                let sleep = a == Action::Sleep;
                let listen = a == Action::Listen;
                let tx = a.transmit_code();
                let exclusive = (!sleep || (!listen && tx == -1))
                    && (tx < 0 || (!sleep && !listen))
                    && (!listen || (!sleep && tx == -1));
                if !exclusive || !(sleep || listen || tx >= 0) {
                    push(L::ExactlyOneAction, t, p, format!("cell holds {a}"));
                }
            }
            if on(L::ContentDomain) {
                if let Action::Transmit(Content::Packet(k)) = a {
                    if k == 0 || k > m {
                        push(
                            L::ContentDomain,
                            t,
                            p,
                            format!("content code {k} outside [-1, {m}]"),
                        );
                    }
                }
            }
            if on(L::TransmitOnlyKnown) {
                if let Some(k) = a.packet() {
                    let known = trace.knowledge[t][p].get(k.wrapping_sub(1)).copied();
                    if known != Some(true) {
                        push(
                            L::TransmitOnlyKnown,
                            t,
                            p,
                            format!("transmits packet {k} it does not know"),
                        );
                    }
                }
            }
        }
    }

    if on(L::Liveness) && spec.liveness == LivenessMode::EachActionAtLeastOnce {
        for p in 0..spec.processes {
            let missing: Vec<&str> = ActionKind::ALL
                .into_iter()
                .filter(|&kind| !trace.actions.iter().any(|row| row[p].kind() == kind))
                .map(ActionKind::as_str)
                .collect();
            if !missing.is_empty() {
                push(
                    L::Liveness,
                    horizon,
                    p,
                    format!("never performs {}", missing.join(", ")),
                );
            }
        }
    }

    if on(L::InitialKnowledge) {
        let expected = initial_knowledge(spec);
        for (p, row) in expected.iter().enumerate() {
            if trace.knowledge[0][p] != *row {
                let detail = if p == spec.source {
                    "source must know every packet at time 0"
                } else {
                    "only the source may know packets at time 0"
                };
                push(L::InitialKnowledge, 0, p, detail.to_string());
            }
        }
    }

    for t in 0..horizon {
        let acts = &trace.actions[t];
        let (now, next) = (&trace.knowledge[t], &trace.knowledge[t + 1]);
        for p in 0..spec.processes {
            if on(L::NeverForgets) {
                let lost = packets_listed(&now[p], |k| now[p][k - 1] && !next[p][k - 1]);
                if !lost.is_empty() {
                    push(L::NeverForgets, t, p, format!("forgets packets {lost:?}"));
                }
            }
            if !on(L::CollisionFreeLearning) {
                continue;
            }
            let learn_any = learned_packet(acts, p, |_, _| true);
            let learn_topo = learned_packet(acts, p, |l, s| spec.topology.hears(l, s));
            let topo_on = on(L::HearsRelation);
            let learn = if topo_on { learn_topo } else { learn_any };

            let gained = packets_listed(&now[p], |k| !now[p][k - 1] && next[p][k - 1]);
            let illegal: Vec<usize> = gained
                .iter()
                .copied()
                .filter(|&k| Some(k) != learn)
                .collect();
            let (deaf, unexplained): (Vec<usize>, Vec<usize>) = illegal
                .into_iter()
                .partition(|&k| topo_on && Some(k) == learn_any);
            if !unexplained.is_empty() {
                push(
                    L::CollisionFreeLearning,
                    t,
                    p,
                    format!("gains packets {unexplained:?} without a collision-free transmission"),
                );
            }
            if !deaf.is_empty() {
                push(
                    L::HearsRelation,
                    t,
                    p,
                    format!("gains packets {deaf:?} from a speaker it cannot hear"),
                );
            }
            if let Some(k) = learn {
                if k <= m && !next[p][k - 1] {
                    push(
                        L::CollisionFreeLearning,
                        t,
                        p,
                        format!("hears packet {k} alone on the channel but does not learn it"),
                    );
                }
            }
        }
    }

    if on(L::GoalDeadline) && spec.goal == GoalKind::AllKnowAll {
        let last = &trace.knowledge[horizon];
        for (p, known) in last.iter().enumerate() {
            let missing = packets_listed(known, |k| !known[k - 1]);
            if !missing.is_empty() {
                push(
                    L::GoalDeadline,
                    horizon,
                    p,
                    format!("does not know packets {missing:?} at the deadline"),
                );
            }
        }
    }

    Ok(out)
}

/// Validates against every requirement that applies to the trace's spec.
pub fn validate_all(trace: &ProtocolTrace) -> Result<Vec<Violation>, TraceError> {
    validate(trace, &RequirementLabel::applicable(&trace.spec))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TraceDoc {
    spec: NetworkSpec,
    actions: Vec<Vec<String>>,
    #[serde(default)]
    knowledge: Option<Vec<KnowledgeRow>>,
}

/// Serializes a trace as JSON with fields in the fixed order
/// `spec`, `actions`, `knowledge`, one slot per line.
pub fn write_trace(trace: &ProtocolTrace) -> String {
    fn rows<T: Serialize>(rows: &[T]) -> String {
        if rows.is_empty() {
            return "[]".to_string();
        }
        let body: Vec<String> = rows
            .iter()
            .map(|r| format!("    {}", serde_json::to_string(r).expect("rows serialize")))
            .collect();
        format!("[\n{}\n  ]", body.join(",\n"))
    }
    let spec = serde_json::to_string(&trace.spec).expect("spec serializes");
    format!(
        "{{\n  \"spec\": {spec},\n  \"actions\": {},\n  \"knowledge\": {}\n}}\n",
        rows(&trace.actions),
        rows(&trace.knowledge)
    )
}

/// Parses a trace file. Knowledge is re-derived from the actions and, when the
/// file carries a knowledge grid, compared against it.
pub fn read_trace(text: &str) -> Result<ProtocolTrace, TraceError> {
    let doc: TraceDoc =
        serde_json::from_str(text).map_err(|e| TraceError::Syntax(e.to_string()))?;
    let spec = doc.spec;
    if doc.actions.len() != spec.horizon {
        return Err(TraceError::Dimension(format!(
            "{} action rows for horizon {}",
            doc.actions.len(),
            spec.horizon
        )));
    }
    let mut actions = Vec::with_capacity(doc.actions.len());
    for (t, row) in doc.actions.iter().enumerate() {
        if row.len() != spec.processes {
            return Err(TraceError::Dimension(format!(
                "action row {t} has {} entries, expected {}",
                row.len(),
                spec.processes
            )));
        }
        let mut parsed = Vec::with_capacity(row.len());
        for (p, text) in row.iter().enumerate() {
            let a: Action = text.parse().map_err(|_| TraceError::UnknownAction {
                t,
                p,
                text: text.clone(),
            })?;
            if let Some(code) = a.packet() {
                if code > spec.packets {
                    return Err(TraceError::UnknownContentCode { t, p, code });
                }
            }
            parsed.push(a);
        }
        actions.push(parsed);
    }

    let trace = ProtocolTrace::derive(spec, actions);
    if let Some(given) = doc.knowledge {
        let claimed = ProtocolTrace::from_parts(trace.spec.clone(), trace.actions.clone(), given);
        check_dimensions(&claimed)?;
        for (t, (a, b)) in claimed.knowledge.iter().zip(&trace.knowledge).enumerate() {
            if let Some(p) = (0..a.len()).find(|&p| a[p] != b[p]) {
                return Err(TraceError::KnowledgeMismatch { t, p });
            }
        }
    }
    Ok(trace)
}
