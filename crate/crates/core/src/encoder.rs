//! Grounding of a [`NetworkSpec`] into a finite-domain constraint system.
//!
//! Every (slot, process) cell is one variable whose domain is the full action
//! set, so "exactly one action" and the content range hold by construction.
//! Knowledge is not a variable: it follows from the actions through the
//! initial-knowledge, never-forget and learning constraints.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::action::{Action, ActionKind};
use crate::model::{
    validate_spec, NetworkSpec, PacketId, ProcessId, RequirementLabel, SpecViolation,
};

/// One decision variable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cell {
    pub t: usize,
    pub p: ProcessId,
    pub domain: Vec<Action>,
}

/// A ground predicate over the cells and the derived knowledge grid.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Atom {
    /// The cell performs exactly one of sleep, listen, transmit.
    ExactlyOneAction { t: usize, p: ProcessId },
    /// The transmit code lies in `[-1, M]`.
    ContentInRange { t: usize, p: ProcessId },
    /// `p` performs `kind` in at least one slot.
    PerformsAtLeastOnce { p: ProcessId, kind: ActionKind },
    /// `knows(0, p, k)` equals `known`.
    InitialKnowledge {
        p: ProcessId,
        k: PacketId,
        known: bool,
    },
    /// `transmit(t, p) = k` implies `knows(t, p, k)`.
    TransmitsOnlyKnown { t: usize, p: ProcessId, k: PacketId },
    /// `knows(t, p, k)` implies `knows(t + 1, p, k)`.
    NeverForgets { t: usize, p: ProcessId, k: PacketId },
    /// `knows(t + 1, p, k)` holds exactly when it held at `t` or `p` listened
    /// while an audible speaker was the only transmitter and sent `k`.
    LearnsWhenAlone { t: usize, p: ProcessId, k: PacketId },
    /// `p` can hear exactly `speakers`.
    Audible {
        p: ProcessId,
        speakers: Vec<ProcessId>,
    },
    /// `knows(T, p, k)`.
    KnowsAtDeadline { t: usize, p: ProcessId, k: PacketId },
}

impl Atom {
    /// Sort key: slot (0 when the atom is not tied to a slot), then process, then packet.
    pub fn position(&self) -> (usize, ProcessId, PacketId) {
        match *self {
            Atom::ExactlyOneAction { t, p } | Atom::ContentInRange { t, p } => (t, p, 0),
            Atom::PerformsAtLeastOnce { p, .. } | Atom::Audible { p, .. } => (0, p, 0),
            Atom::InitialKnowledge { p, k, .. } => (0, p, k),
            Atom::TransmitsOnlyKnown { t, p, k }
            | Atom::NeverForgets { t, p, k }
            | Atom::LearnsWhenAlone { t, p, k }
            | Atom::KnowsAtDeadline { t, p, k } => (t, p, k),
        }
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Atom::ExactlyOneAction { t, p } => {
                write!(f, "exactly one of sleep/listen/transmit at ({t},{p})")
            }
            Atom::ContentInRange { t, p } => write!(f, "transmit({t},{p}) in content range"),
            Atom::PerformsAtLeastOnce { p, kind } => {
                write!(f, "p{p} performs {} at least once", kind.as_str())
            }
            Atom::InitialKnowledge { p, k, known } => {
                write!(f, "knows(0,{p},{k}) = {known}")
            }
            Atom::TransmitsOnlyKnown { t, p, k } => {
                write!(f, "transmit({t},{p}) = {k} -> knows({t},{p},{k})")
            }
            Atom::NeverForgets { t, p, k } => {
                write!(f, "knows({t},{p},{k}) -> knows({},{p},{k})", t + 1)
            }
            Atom::LearnsWhenAlone { t, p, k } => write!(
                f,
                "knows({},{p},{k}) <-> knows({t},{p},{k}) | listen({t},{p}) & sole audible transmitter sends {k}",
                t + 1
            ),
            Atom::Audible { p, speakers } => {
                let pairs: Vec<String> = speakers.iter().map(|s| format!("({p},{s})")).collect();
                write!(f, "p{p} hears only [{}]", pairs.join(", "))
            }
            Atom::KnowsAtDeadline { t, p, k } => write!(f, "knows({t},{p},{k})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundConstraint {
    pub label: RequirementLabel,
    pub atom: Atom,
}

impl fmt::Display for GroundConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.label, self.atom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("invalid spec: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    InvalidSpec(Vec<SpecViolation>),
    #[error("{0} is structural and cannot be disabled")]
    Structural(RequirementLabel),
    #[error("{0} is not enabled")]
    NotEnabled(RequirementLabel),
}

/// Grounded variables and labelled constraints for one spec.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConstraintSystem {
    pub spec: NetworkSpec,
    /// Cells in solving order: slot ascending, then process ascending.
    pub cells: Vec<Cell>,
    /// Sorted by label, then slot, then process.
    pub constraints: Vec<GroundConstraint>,
    pub enabled: BTreeSet<RequirementLabel>,
}

/// Grounds every requirement of `spec`.
pub fn encode(spec: &NetworkSpec) -> Result<ConstraintSystem, EncodeError> {
    use RequirementLabel as L;

    validate_spec(spec).map_err(EncodeError::InvalidSpec)?;
    let (horizon, procs, packets) = (spec.horizon, spec.processes, spec.packets);
    let enabled = RequirementLabel::applicable(spec);
    let domain = Action::domain(packets);

    let cells = (0..horizon)
        .flat_map(|t| (0..procs).map(move |p| (t, p)))
        .map(|(t, p)| Cell {
            t,
            p,
            domain: domain.clone(),
        })
        .collect::<Vec<_>>();

    let mut constraints = Vec::new();
    let mut add = |label, atom| constraints.push(GroundConstraint { label, atom });
    let slots = || (0..horizon).flat_map(move |t| (0..procs).map(move |p| (t, p)));
    let slot_packets = || slots().flat_map(move |(t, p)| (1..=packets).map(move |k| (t, p, k)));

    for (t, p) in slots() {
        add(L::ExactlyOneAction, Atom::ExactlyOneAction { t, p });
        add(L::ContentDomain, Atom::ContentInRange { t, p });
    }
    if enabled.contains(&L::Liveness) {
        for p in 0..procs {
            for kind in ActionKind::ALL {
                add(L::Liveness, Atom::PerformsAtLeastOnce { p, kind });
            }
        }
    }
    for p in 0..procs {
        for k in 1..=packets {
            let known = p == spec.source;
            add(L::InitialKnowledge, Atom::InitialKnowledge { p, k, known });
        }
    }
    for (t, p, k) in slot_packets() {
        add(L::TransmitOnlyKnown, Atom::TransmitsOnlyKnown { t, p, k });
    }
    for (t, p, k) in slot_packets() {
        add(L::NeverForgets, Atom::NeverForgets { t, p, k });
    }
    for (t, p, k) in slot_packets() {
        add(L::CollisionFreeLearning, Atom::LearnsWhenAlone { t, p, k });
    }
    if enabled.contains(&L::GoalDeadline) {
        for p in 0..procs {
            for k in 1..=packets {
                add(L::GoalDeadline, Atom::KnowsAtDeadline { t: horizon, p, k });
            }
        }
    }
    for p in 0..procs {
        let speakers = spec.topology.speakers_of(p).collect();
        add(L::HearsRelation, Atom::Audible { p, speakers });
    }

    constraints.sort_by(|a, b| (a.label, a.atom.position()).cmp(&(b.label, b.atom.position())));

    Ok(ConstraintSystem {
        spec: spec.clone(),
        cells,
        constraints,
        enabled,
    })
}

impl ConstraintSystem {
    pub fn is_enabled(&self, label: RequirementLabel) -> bool {
        self.enabled.contains(&label)
    }

    /// Constraints whose label is currently enabled.
    pub fn active_constraints(&self) -> impl Iterator<Item = &GroundConstraint> {
        self.constraints.iter().filter(|c| self.is_enabled(c.label))
    }

    /// A copy with `label` switched off.
    pub fn disable(&self, label: RequirementLabel) -> Result<ConstraintSystem, EncodeError> {
        if label.is_structural() {
            return Err(EncodeError::Structural(label));
        }
        if !self.is_enabled(label) {
            return Err(EncodeError::NotEnabled(label));
        }
        let mut next = self.clone();
        next.enabled.remove(&label);
        Ok(next)
    }

    /// A copy whose enabled set is the structural labels plus `labels`
    /// (restricted to labels applicable to the spec).
    pub fn restricted_to(&self, labels: &BTreeSet<RequirementLabel>) -> ConstraintSystem {
        let applicable = RequirementLabel::applicable(&self.spec);
        let mut next = self.clone();
        next.enabled = applicable
            .into_iter()
            .filter(|l| l.is_structural() || labels.contains(l))
            .collect();
        next
    }

    pub fn describe(&self) -> Description {
        let mut counts: BTreeMap<RequirementLabel, usize> =
            RequirementLabel::ALL.into_iter().map(|l| (l, 0)).collect();
        for c in &self.constraints {
            *counts.get_mut(&c.label).expect("label in taxonomy") += 1;
        }
        let listing = self.constraints.iter().map(ToString::to_string).collect();
        Description {
            counts,
            enabled: self.enabled.clone(),
            listing,
        }
    }
}

/// Per-label constraint counts and a line-per-constraint listing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Description {
    pub counts: BTreeMap<RequirementLabel, usize>,
    pub enabled: BTreeSet<RequirementLabel>,
    pub listing: Vec<String>,
}

impl Description {
    pub fn count(&self, label: RequirementLabel) -> usize {
        self.counts[&label]
    }
}

impl fmt::Display for Description {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (label, n) in &self.counts {
            let state = if self.enabled.contains(label) {
                "on"
            } else {
                "off"
            };
            writeln!(f, "{label:<26} {state:>3} {n:>6}")?;
        }
        for line in &self.listing {
            writeln!(f, "  {line}")?;
        }
        Ok(())
    }
}
