//! Problem instances: processes, packets, horizon, topology and the
//! requirement catalog, plus the line-oriented spec file format.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Process identifier, 0-based.
pub type ProcessId = usize;

/// Packet identifier, 1-based. Code 0 is reserved for garbage.
pub type PacketId = usize;

/// Upper bound on the packet count; knowledge rows are stored as 64-bit masks.
pub const MAX_PACKETS: usize = 64;

/// Which processes can hear which. A pair `(listener, speaker)` means the
/// listener may learn from the speaker's transmissions.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Topology {
    hears: BTreeSet<(ProcessId, ProcessId)>,
}

impl Topology {
    /// Every process hears every other process.
    pub fn all(processes: usize) -> Self {
        let hears = (0..processes)
            .flat_map(|l| (0..processes).filter(move |&s| s != l).map(move |s| (l, s)))
            .collect();
        Self { hears }
    }

    /// Each process hears only its left neighbour (id one less than itself).
    pub fn line(processes: usize) -> Self {
        let hears = (1..processes).map(|p| (p, p - 1)).collect();
        Self { hears }
    }

    pub fn from_pairs<I: IntoIterator<Item = (ProcessId, ProcessId)>>(pairs: I) -> Self {
        Self {
            hears: pairs.into_iter().collect(),
        }
    }

    pub fn hears(&self, listener: ProcessId, speaker: ProcessId) -> bool {
        self.hears.contains(&(listener, speaker))
    }

    pub fn pairs(&self) -> impl Iterator<Item = (ProcessId, ProcessId)> + '_ {
        self.hears.iter().copied()
    }

    /// Speakers audible to `listener`, ascending.
    pub fn speakers_of(&self, listener: ProcessId) -> impl Iterator<Item = ProcessId> + '_ {
        self.hears
            .range((listener, 0)..=(listener, usize::MAX))
            .map(|&(_, s)| s)
    }

    pub fn len(&self) -> usize {
        self.hears.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hears.is_empty()
    }

    pub fn is_subset(&self, other: &Topology) -> bool {
        self.hears.is_subset(&other.hears)
    }

    /// The shortest spec-file keyword describing this relation for `processes`.
    pub fn kind(&self, processes: usize) -> TopologyKind {
        if *self == Topology::all(processes) {
            TopologyKind::All
        } else if *self == Topology::line(processes) {
            TopologyKind::Line
        } else {
            TopologyKind::Explicit
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopologyKind {
    All,
    Line,
    Explicit,
}

impl TopologyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TopologyKind::All => "all",
            TopologyKind::Line => "line",
            TopologyKind::Explicit => "explicit",
        }
    }
}

impl FromStr for TopologyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all" => Ok(TopologyKind::All),
            "line" => Ok(TopologyKind::Line),
            "explicit" => Ok(TopologyKind::Explicit),
            other => Err(format!("unknown topology '{other}'")),
        }
    }
}

/// Bounded reading of "every action infinitely often".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum LivenessMode {
    #[default]
    Off,
    /// Each process sleeps, listens and transmits in at least one slot.
    EachActionAtLeastOnce,
}

impl LivenessMode {
    pub fn as_str(self) -> &'static str {
        match self {
            LivenessMode::Off => "off",
            LivenessMode::EachActionAtLeastOnce => "each-action-once",
        }
    }
}

impl FromStr for LivenessMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "off" => Ok(LivenessMode::Off),
            "each-action-once" => Ok(LivenessMode::EachActionAtLeastOnce),
            other => Err(format!("unknown liveness mode '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum GoalKind {
    /// Every process knows every packet at the end of the horizon.
    #[default]
    AllKnowAll,
    None,
}

impl GoalKind {
    pub fn as_str(self) -> &'static str {
        match self {
            GoalKind::AllKnowAll => "all-know-all",
            GoalKind::None => "none",
        }
    }
}

impl FromStr for GoalKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all-know-all" => Ok(GoalKind::AllKnowAll),
            "none" => Ok(GoalKind::None),
            other => Err(format!("unknown goal '{other}'")),
        }
    }
}

/// The requirement catalog. Declaration order is the taxonomy order used for
/// deterministic iteration (listings, core minimization).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RequirementLabel {
    #[serde(rename = "R1_ExactlyOneAction")]
    ExactlyOneAction,
    #[serde(rename = "R2_ContentDomain")]
    ContentDomain,
    #[serde(rename = "R3_Liveness")]
    Liveness,
    #[serde(rename = "R4_InitialKnowledge")]
    InitialKnowledge,
    #[serde(rename = "R5_TransmitOnlyKnown")]
    TransmitOnlyKnown,
    #[serde(rename = "R6_NeverForgets")]
    NeverForgets,
    #[serde(rename = "R7_CollisionFreeLearning")]
    CollisionFreeLearning,
    #[serde(rename = "GOAL_Deadline")]
    GoalDeadline,
    #[serde(rename = "TOPO_HearsRelation")]
    HearsRelation,
}

impl RequirementLabel {
    pub const ALL: [RequirementLabel; 9] = [
        RequirementLabel::ExactlyOneAction,
        RequirementLabel::ContentDomain,
        RequirementLabel::Liveness,
        RequirementLabel::InitialKnowledge,
        RequirementLabel::TransmitOnlyKnown,
        RequirementLabel::NeverForgets,
        RequirementLabel::CollisionFreeLearning,
        RequirementLabel::GoalDeadline,
        RequirementLabel::HearsRelation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RequirementLabel::ExactlyOneAction => "R1_ExactlyOneAction",
            RequirementLabel::ContentDomain => "R2_ContentDomain",
            RequirementLabel::Liveness => "R3_Liveness",
            RequirementLabel::InitialKnowledge => "R4_InitialKnowledge",
            RequirementLabel::TransmitOnlyKnown => "R5_TransmitOnlyKnown",
            RequirementLabel::NeverForgets => "R6_NeverForgets",
            RequirementLabel::CollisionFreeLearning => "R7_CollisionFreeLearning",
            RequirementLabel::GoalDeadline => "GOAL_Deadline",
            RequirementLabel::HearsRelation => "TOPO_HearsRelation",
        }
    }

    /// Structural labels are enforced by the variable domain itself.
    pub fn is_structural(self) -> bool {
        matches!(
            self,
            RequirementLabel::ExactlyOneAction | RequirementLabel::ContentDomain
        )
    }

    /// Labels that carry ground constraints for `spec`.
    pub fn applicable(spec: &NetworkSpec) -> BTreeSet<RequirementLabel> {
        Self::ALL
            .into_iter()
            .filter(|l| match l {
                RequirementLabel::Liveness => spec.liveness != LivenessMode::Off,
                RequirementLabel::GoalDeadline => spec.goal == GoalKind::AllKnowAll,
                _ => true,
            })
            .collect()
    }
}

impl fmt::Display for RequirementLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RequirementLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| format!("unknown requirement label '{s}'"))
    }
}

/// One problem instance.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "SpecDoc", into = "SpecDoc")]
pub struct NetworkSpec {
    pub processes: usize,
    pub packets: usize,
    pub horizon: usize,
    pub source: ProcessId,
    pub topology: Topology,
    pub liveness: LivenessMode,
    pub goal: GoalKind,
}

impl NetworkSpec {
    /// A spec with the default liveness (off) and goal (all-know-all).
    pub fn new(
        processes: usize,
        packets: usize,
        horizon: usize,
        source: ProcessId,
        topology: Topology,
    ) -> Self {
        Self {
            processes,
            packets,
            horizon,
            source,
            topology,
            liveness: LivenessMode::Off,
            goal: GoalKind::AllKnowAll,
        }
    }

    pub fn with_horizon(&self, horizon: usize) -> Self {
        Self {
            horizon,
            ..self.clone()
        }
    }

    pub fn with_liveness(self, liveness: LivenessMode) -> Self {
        Self { liveness, ..self }
    }

    pub fn with_goal(self, goal: GoalKind) -> Self {
        Self { goal, ..self }
    }

    /// Same instance up to the horizon.
    pub fn same_instance(&self, other: &NetworkSpec) -> bool {
        self.with_horizon(0) == other.with_horizon(0)
    }

    pub fn validate(&self) -> Result<(), Vec<SpecViolation>> {
        validate_spec(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SpecViolation {
    #[error("processes must be at least 1")]
    NoProcesses,
    #[error("packets out of supported range ({0} > {MAX_PACKETS})")]
    TooManyPackets(usize),
    #[error("source out of range ({id} >= {processes})")]
    SourceOutOfRange { id: usize, processes: usize },
    #[error("reflexive hears pair ({0}, {0})")]
    ReflexivePair(ProcessId),
    #[error("process id out of range in hears pair ({0}, {1})")]
    PairOutOfRange(ProcessId, ProcessId),
}

/// Checks every invariant of `spec`, listing each violation.
pub fn validate_spec(spec: &NetworkSpec) -> Result<(), Vec<SpecViolation>> {
    let mut errors = Vec::new();
    if spec.processes == 0 {
        errors.push(SpecViolation::NoProcesses);
    }
    if spec.packets > MAX_PACKETS {
        errors.push(SpecViolation::TooManyPackets(spec.packets));
    }
    if spec.source >= spec.processes {
        errors.push(SpecViolation::SourceOutOfRange {
            id: spec.source,
            processes: spec.processes,
        });
    }
    for (l, s) in spec.topology.pairs() {
        if l == s {
            errors.push(SpecViolation::ReflexivePair(l));
        }
        if l >= spec.processes || s >= spec.processes {
            errors.push(SpecViolation::PairOutOfRange(l, s));
        }
    }
    if errors.is_empty() {
        Ok(())
    } else {
        Err(errors)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SpecParseError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: duplicate key '{key}'")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: unknown key '{key}'")]
    UnknownKey { line: usize, key: String },
    #[error("missing key '{0}'")]
    MissingKey(&'static str),
    #[error("{}", join_violations(.0))]
    Semantic(Vec<SpecViolation>),
}

fn join_violations(v: &[SpecViolation]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

const KEYS: [&str; 7] = [
    "processes",
    "packets",
    "horizon",
    "source",
    "topology",
    "liveness",
    "goal",
];

/// Parses the `key = value` spec format. `#` starts a comment; `hears L S`
/// lines list pairs for `topology = explicit`.
pub fn parse_spec(text: &str) -> Result<NetworkSpec, SpecParseError> {
    let mut values: [Option<(usize, String)>; 7] = Default::default();
    let mut hears: Vec<(usize, (ProcessId, ProcessId))> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let syntax = |message: String| SpecParseError::Syntax { line, message };

        if let Some(rest) = content.strip_prefix("hears") {
            if rest.starts_with(char::is_whitespace) {
                let ids: Vec<&str> = rest.split_whitespace().collect();
                if ids.len() != 2 {
                    return Err(syntax("expected 'hears <listener> <speaker>'".into()));
                }
                let l = parse_count(ids[0]).map_err(&syntax)?;
                let s = parse_count(ids[1]).map_err(&syntax)?;
                if hears.iter().any(|&(_, pair)| pair == (l, s)) {
                    return Err(syntax(format!("duplicate hears pair ({l}, {s})")));
                }
                hears.push((line, (l, s)));
                continue;
            }
        }

        let Some((key, value)) = content.split_once('=') else {
            return Err(syntax(format!("expected 'key = value', found '{content}'")));
        };
        let key = key.trim();
        let value = value.trim();
        let Some(slot) = KEYS.iter().position(|k| *k == key) else {
            return Err(SpecParseError::UnknownKey {
                line,
                key: key.to_string(),
            });
        };
        if values[slot].is_some() {
            return Err(SpecParseError::DuplicateKey {
                line,
                key: key.to_string(),
            });
        }
        if value.is_empty() {
            return Err(syntax(format!("missing value for '{key}'")));
        }
        let well_formed = match slot {
            0..=3 => parse_count(value).map(drop),
            4 => value.parse::<TopologyKind>().map(drop),
            5 => value.parse::<LivenessMode>().map(drop),
            _ => value.parse::<GoalKind>().map(drop),
        };
        well_formed.map_err(&syntax)?;
        values[slot] = Some((line, value.to_string()));
    }

    let mut take = |i: usize| values[i].take().ok_or(SpecParseError::MissingKey(KEYS[i]));
    let processes = take(0)?;
    let packets = take(1)?;
    let horizon = take(2)?;
    let source = take(3)?;
    let topology = take(4)?;
    let liveness = take(5)?;
    let goal = take(6)?;

    let count = |(line, v): (usize, String)| {
        parse_count(&v).map_err(|message| SpecParseError::Syntax { line, message })
    };
    fn keyword<T: FromStr<Err = String>>((line, v): (usize, String)) -> Result<T, SpecParseError> {
        v.parse()
            .map_err(|message| SpecParseError::Syntax { line, message })
    }

    let processes = count(processes)?;
    let packets = count(packets)?;
    let horizon = count(horizon)?;
    let source = count(source)?;
    let topo_line = topology.0;
    let kind: TopologyKind = keyword(topology)?;
    let liveness = keyword(liveness)?;
    let goal = keyword(goal)?;

    let topology = match kind {
        TopologyKind::All => Topology::all(processes),
        TopologyKind::Line => Topology::line(processes),
        TopologyKind::Explicit => Topology::from_pairs(hears.iter().map(|&(_, p)| p)),
    };
    if kind != TopologyKind::Explicit {
        if let Some(&(line, _)) = hears.first() {
            return Err(SpecParseError::Syntax {
                line,
                message: format!(
                    "hears lines require 'topology = explicit' (line {topo_line} says '{}')",
                    kind.as_str()
                ),
            });
        }
    }

    let spec = NetworkSpec {
        processes,
        packets,
        horizon,
        source,
        topology,
        liveness,
        goal,
    };
    validate_spec(&spec).map_err(SpecParseError::Semantic)?;
    Ok(spec)
}

fn parse_count(s: &str) -> Result<usize, String> {
    s.parse::<usize>()
        .map_err(|_| format!("expected a non-negative integer, found '{s}'"))
}

/// Writes `spec` in the spec file format. `parse_spec(&render_spec(s)) == s`
/// for every valid spec.
pub fn render_spec(spec: &NetworkSpec) -> String {
    let kind = spec.topology.kind(spec.processes);
    let mut out = format!(
        "processes = {}\npackets = {}\nhorizon = {}\nsource = {}\ntopology = {}\n",
        spec.processes,
        spec.packets,
        spec.horizon,
        spec.source,
        kind.as_str()
    );
    if kind == TopologyKind::Explicit {
        for (l, s) in spec.topology.pairs() {
            out.push_str(&format!("hears {l} {s}\n"));
        }
    }
    out.push_str(&format!(
        "liveness = {}\ngoal = {}\n",
        spec.liveness.as_str(),
        spec.goal.as_str()
    ));
    out
}

/// JSON mirror of the spec file keys, embedded in trace and report files.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecDoc {
    processes: usize,
    packets: usize,
    horizon: usize,
    source: usize,
    topology: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hears: Option<Vec<(usize, usize)>>,
    liveness: String,
    goal: String,
}

impl From<NetworkSpec> for SpecDoc {
    fn from(spec: NetworkSpec) -> Self {
        let kind = spec.topology.kind(spec.processes);
        SpecDoc {
            processes: spec.processes,
            packets: spec.packets,
            horizon: spec.horizon,
            source: spec.source,
            topology: kind.as_str().to_string(),
            hears: (kind == TopologyKind::Explicit).then(|| spec.topology.pairs().collect()),
            liveness: spec.liveness.as_str().to_string(),
            goal: spec.goal.as_str().to_string(),
        }
    }
}

impl TryFrom<SpecDoc> for NetworkSpec {
    type Error = String;

    fn try_from(doc: SpecDoc) -> Result<Self, Self::Error> {
        let kind: TopologyKind = doc.topology.parse()?;
        let topology = match (kind, doc.hears) {
            (TopologyKind::All, None) => Topology::all(doc.processes),
            (TopologyKind::Line, None) => Topology::line(doc.processes),
            (TopologyKind::Explicit, hears) => Topology::from_pairs(hears.unwrap_or_default()),
            (_, Some(_)) => return Err("'hears' requires topology \"explicit\"".into()),
        };
        let spec = NetworkSpec {
            processes: doc.processes,
            packets: doc.packets,
            horizon: doc.horizon,
            source: doc.source,
            topology,
            liveness: doc.liveness.parse()?,
            goal: doc.goal.parse()?,
        };
        validate_spec(&spec).map_err(|v| join_violations(&v))?;
        Ok(spec)
    }
}
