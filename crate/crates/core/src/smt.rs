//! SMT-LIB2 export of the grounded requirements and recovery of a trace from
//! an external solver's answers.
//!
//! The document declares the three action functions and an explicit `knows`
//! function, asserts every ground constraint under a name of the form
//! `|LABEL@t=..,p=..,k=..|`, and ends with `check-sat`, value queries for
//! every cell and knowledge atom, and `get-unsat-core`. Reading values back
//! through `get-value` avoids interpreting the solver's model dump.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::action::{Action, ActionKind, Content};
use crate::encoder::{encode, Atom, ConstraintSystem, EncodeError, GroundConstraint};
use crate::model::{LivenessMode, NetworkSpec, RequirementLabel};
use crate::trace::ProtocolTrace;

/// Environment variable naming the default external solver command.
pub const SOLVER_ENV: &str = "PROTOFORGE_SOLVER";

#[derive(Debug, Error)]
pub enum SmtError {
    #[error("s-expression syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("malformed solver response: {0}")]
    Malformed(String),
    #[error("cell ({t},{p}): content code out of range: {code}")]
    ContentOutOfRange { t: usize, p: usize, code: i64 },
    #[error(
        "cell ({t},{p}): inconsistent triple sleep={sleep} listen={listen} transmit={transmit}"
    )]
    InconsistentTriple {
        t: usize,
        p: usize,
        sleep: bool,
        listen: bool,
        transmit: i64,
    },
    #[error("knows({t},{p},{k}) = {reported} but the learning rule gives {derived}")]
    KnowsMismatch {
        t: usize,
        p: usize,
        k: usize,
        reported: bool,
        derived: bool,
    },
    #[error("failed to run solver '{command}': {message}")]
    Spawn { command: String, message: String },
    #[error("solver timed out after {0:?}")]
    Timeout(Duration),
    #[error("unparseable solver status: {0}")]
    Status(String),
}

/// A parsed s-expression.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Sexp {
    Atom(String),
    List(Vec<Sexp>),
}

impl Sexp {
    pub fn as_atom(&self) -> Option<&str> {
        match self {
            Sexp::Atom(a) => Some(a),
            Sexp::List(_) => None,
        }
    }

    pub fn as_list(&self) -> Option<&[Sexp]> {
        match self {
            Sexp::List(l) => Some(l),
            Sexp::Atom(_) => None,
        }
    }
}

impl fmt::Display for Sexp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sexp::Atom(a) => f.write_str(a),
            Sexp::List(items) => {
                f.write_str("(")?;
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" ")?;
                    }
                    write!(f, "{item}")?;
                }
                f.write_str(")")
            }
        }
    }
}

/// Reads every top-level s-expression in `text`. Comments run from `;` to the
/// end of the line; `|quoted symbols|` and `"strings"` are kept verbatim.
pub fn parse_sexps(text: &str) -> Result<Vec<Sexp>, SmtError> {
    let bytes = text.as_bytes();
    let mut stack: Vec<Vec<Sexp>> = vec![Vec::new()];
    let mut i = 0;
    let err = |offset, message: &str| SmtError::Syntax {
        offset,
        message: message.to_string(),
    };
    while i < bytes.len() {
        match bytes[i] {
            b';' => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            }
            c if c.is_ascii_whitespace() => i += 1,
            b'(' => {
                stack.push(Vec::new());
                i += 1;
            }
            b')' => {
                if stack.len() == 1 {
                    return Err(err(i, "unbalanced ')'"));
                }
                let list = stack.pop().unwrap();
                stack.last_mut().unwrap().push(Sexp::List(list));
                i += 1;
            }
            b'|' => {
                let end = text[i + 1..]
                    .find('|')
                    .ok_or_else(|| err(i, "unterminated quoted symbol"))?;
                let atom = &text[i..i + end + 2];
                stack.last_mut().unwrap().push(Sexp::Atom(atom.to_string()));
                i += end + 2;
            }
            b'"' => {
                let start = i;
                i += 1;
                loop {
                    match bytes.get(i) {
                        None => return Err(err(start, "unterminated string")),
                        Some(b'"') if bytes.get(i + 1) == Some(&b'"') => i += 2,
                        Some(b'"') => {
                            i += 1;
                            break;
                        }
                        Some(_) => i += 1,
                    }
                }
                stack
                    .last_mut()
                    .unwrap()
                    .push(Sexp::Atom(text[start..i].to_string()));
            }
            _ => {
                let start = i;
                while i < bytes.len()
                    && !bytes[i].is_ascii_whitespace()
                    && !matches!(bytes[i], b'(' | b')' | b';' | b'|' | b'"')
                {
                    i += 1;
                }
                stack
                    .last_mut()
                    .unwrap()
                    .push(Sexp::Atom(text[start..i].to_string()));
            }
        }
    }
    if stack.len() != 1 {
        return Err(err(bytes.len(), "unbalanced '('"));
    }
    Ok(stack.pop().unwrap())
}

fn int(v: i64) -> String {
    if v < 0 {
        format!("(- {})", -v)
    } else {
        v.to_string()
    }
}

fn and_of(mut terms: Vec<String>) -> String {
    match terms.len() {
        0 => "true".into(),
        1 => terms.pop().unwrap(),
        _ => format!("(and {})", terms.join(" ")),
    }
}

fn or_of(mut terms: Vec<String>) -> String {
    match terms.len() {
        0 => "false".into(),
        1 => terms.pop().unwrap(),
        _ => format!("(or {})", terms.join(" ")),
    }
}

fn sleep(t: usize, p: usize) -> String {
    format!("(sleep {t} {p})")
}

fn listen(t: usize, p: usize) -> String {
    format!("(listen {t} {p})")
}

fn transmit(t: usize, p: usize) -> String {
    format!("(transmit {t} {p})")
}

fn knows(t: usize, p: usize, k: usize) -> String {
    format!("(knows {t} {p} {k})")
}

/// Named assertions for one ground constraint.
fn assertions(c: &GroundConstraint, spec: &NetworkSpec) -> Vec<(String, String)> {
    let label = c.label.name();
    let silent = int(-1);
    match &c.atom {
        &Atom::ExactlyOneAction { t, p } => {
            let exclusive = format!(
                "(and (=> {s} (and (not {l}) (= {x} {silent}))) (=> (>= {x} 0) (and (not {s}) (not {l}))) (=> {l} (and (not {s}) (= {x} {silent}))))",
                s = sleep(t, p),
                l = listen(t, p),
                x = transmit(t, p),
            );
            let some = format!(
                "(or {} (>= {} 0) {})",
                sleep(t, p),
                transmit(t, p),
                listen(t, p)
            );
            vec![
                (format!("{label}@t={t},p={p}"), exclusive),
                (format!("{label}@t={t},p={p},some"), some),
            ]
        }
        &Atom::ContentInRange { t, p } => vec![(
            format!("{label}@t={t},p={p}"),
            format!(
                "(and (>= {x} {silent}) (<= {x} {}))",
                spec.packets,
                x = transmit(t, p)
            ),
        )],
        &Atom::PerformsAtLeastOnce { p, kind } => {
            let per_slot = (0..spec.horizon)
                .map(|t| match kind {
                    ActionKind::Sleep => sleep(t, p),
                    ActionKind::Listen => listen(t, p),
                    ActionKind::Transmit => format!("(>= {} 0)", transmit(t, p)),
                })
                .collect();
            vec![(
                format!("{label}@p={p},a={}", kind.as_str()),
                or_of(per_slot),
            )]
        }
        &Atom::InitialKnowledge { p, k, known } => {
            let atom = knows(0, p, k);
            let term = if known { atom } else { format!("(not {atom})") };
            vec![(format!("{label}@t=0,p={p},k={k}"), term)]
        }
        &Atom::TransmitsOnlyKnown { t, p, k } => vec![(
            format!("{label}@t={t},p={p},k={k}"),
            format!("(=> (= {} {k}) {})", transmit(t, p), knows(t, p, k)),
        )],
        &Atom::NeverForgets { t, p, k } => vec![(
            format!("{label}@t={t},p={p},k={k}"),
            format!("(=> {} {})", knows(t, p, k), knows(t + 1, p, k)),
        )],
        &Atom::LearnsWhenAlone { t, p, k } => {
            let speakers = (0..spec.processes)
                .filter(|&s| s != p)
                .map(|s| {
                    let mut parts = vec![
                        format!("(hears {p} {s})"),
                        format!("(= {} {k})", transmit(t, s)),
                    ];
                    parts.extend(
                        (0..spec.processes)
                            .filter(|&o| o != s)
                            .map(|o| format!("(= {} {silent})", transmit(t, o))),
                    );
                    and_of(parts)
                })
                .collect();
            let learns = and_of(vec![listen(t, p), or_of(speakers)]);
            let (before, after) = (knows(t, p, k), knows(t + 1, p, k));
            vec![(
                format!("{label}@t={t},p={p},k={k}"),
                format!("(and (=> {after} (or {before} {learns})) (=> {learns} {after}))"),
            )]
        }
        Atom::Audible { p, speakers } => {
            let p = *p;
            let terms = (0..spec.processes)
                .filter(|&s| s != p)
                .map(|s| {
                    if speakers.contains(&s) {
                        format!("(hears {p} {s})")
                    } else {
                        format!("(not (hears {p} {s}))")
                    }
                })
                .collect();
            vec![(format!("{label}@p={p}"), and_of(terms))]
        }
        &Atom::KnowsAtDeadline { t, p, k } => {
            vec![(format!("{label}@t={t},p={p},k={k}"), knows(t, p, k))]
        }
    }
}

/// Emits the document for every requirement that applies to `spec`.
pub fn emit_smtlib(spec: &NetworkSpec) -> Result<String, EncodeError> {
    Ok(emit_system(&encode(spec)?))
}

/// Emits the document for the enabled constraints of `cs`.
pub fn emit_system(cs: &ConstraintSystem) -> String {
    let spec = &cs.spec;
    let mut out = String::new();
    let _ = writeln!(out, "; protoforge SMT-LIB2 export");
    let _ = writeln!(
        out,
        "; processes={} packets={} horizon={} source={} topology={} liveness={} goal={}",
        spec.processes,
        spec.packets,
        spec.horizon,
        spec.source,
        spec.topology.kind(spec.processes).as_str(),
        spec.liveness.as_str(),
        spec.goal.as_str()
    );
    let _ = writeln!(
        out,
        "; transmit codes: -1 silent, 0 garbage, k >= 1 packet k"
    );
    if spec.liveness == LivenessMode::EachActionAtLeastOnce {
        let _ = writeln!(
            out,
            "; R3_Liveness is bounded: each process sleeps, listens and transmits in at least one slot of [0, {})",
            spec.horizon
        );
    }
    let disabled: Vec<&str> = RequirementLabel::applicable(spec)
        .difference(&cs.enabled)
        .map(|l| l.name())
        .collect();
    if !disabled.is_empty() {
        let _ = writeln!(out, "; disabled: {}", disabled.join(" "));
    }
    out.push_str("(set-option :produce-unsat-cores true)\n");
    out.push_str("(set-option :produce-models true)\n");
    out.push_str("(set-logic QF_UFLIA)\n");
    out.push_str("(declare-fun listen (Int Int) Bool)\n");
    out.push_str("(declare-fun sleep (Int Int) Bool)\n");
    out.push_str("(declare-fun transmit (Int Int) Int)\n");
    out.push_str("(declare-fun knows (Int Int Int) Bool)\n");
    out.push_str("(declare-fun hears (Int Int) Bool)\n");
    for c in cs.active_constraints() {
        for (name, term) in assertions(c, spec) {
            let _ = writeln!(out, "(assert (! {term} :named |{name}|))");
        }
    }
    out.push_str("(check-sat)\n");
    let cells: Vec<String> = (0..spec.horizon)
        .flat_map(|t| (0..spec.processes).map(move |p| (t, p)))
        .flat_map(|(t, p)| [sleep(t, p), listen(t, p), transmit(t, p)])
        .collect();
    if !cells.is_empty() {
        let _ = writeln!(out, "(get-value ({}))", cells.join(" "));
    }
    let atoms: Vec<String> = (0..=spec.horizon)
        .flat_map(|t| (0..spec.processes).map(move |p| (t, p)))
        .flat_map(|(t, p)| (1..=spec.packets).map(move |k| knows(t, p, k)))
        .collect();
    if !atoms.is_empty() {
        let _ = writeln!(out, "(get-value ({}))", atoms.join(" "));
    }
    out.push_str("(get-unsat-core)\n");
    out
}

/// Maps a named assertion back to its requirement label.
pub fn label_of_assertion(name: &str) -> Option<RequirementLabel> {
    let bare = name.trim_matches('|');
    bare.split('@').next()?.parse().ok()
}

fn parse_int(e: &Sexp) -> Option<i64> {
    match e {
        Sexp::Atom(a) => a.parse().ok(),
        Sexp::List(l) if l.len() == 2 && l[0].as_atom() == Some("-") => {
            parse_int(&l[1]).map(|v| -v)
        }
        _ => None,
    }
}

fn parse_bool(e: &Sexp) -> Option<bool> {
    match e.as_atom()? {
        "true" => Some(true),
        "false" => Some(false),
        _ => None,
    }
}

#[derive(Default)]
struct Values {
    sleep: BTreeMap<(usize, usize), bool>,
    listen: BTreeMap<(usize, usize), bool>,
    transmit: BTreeMap<(usize, usize), i64>,
    knows: BTreeMap<(usize, usize, usize), bool>,
}

fn is_value_list(e: &Sexp) -> bool {
    e.as_list().is_some_and(|items| {
        items.iter().all(|pair| {
            pair.as_list()
                .is_some_and(|kv| kv.len() == 2 && kv[0].as_list().is_some())
        })
    })
}

fn collect_values(exprs: &[Sexp]) -> Result<Values, SmtError> {
    let mut v = Values::default();
    let malformed = |e: &Sexp| SmtError::Malformed(format!("unexpected entry {e}"));
    for list in exprs.iter().filter(|e| is_value_list(e)) {
        for pair in list.as_list().unwrap() {
            let kv = pair.as_list().unwrap();
            let term = kv[0].as_list().unwrap();
            let name = term
                .first()
                .and_then(Sexp::as_atom)
                .ok_or_else(|| malformed(pair))?;
            let args: Vec<usize> = term[1..]
                .iter()
                .map(|a| a.as_atom().and_then(|a| a.parse().ok()))
                .collect::<Option<_>>()
                .ok_or_else(|| malformed(pair))?;
            match (name, args.as_slice()) {
                ("sleep", &[t, p]) => {
                    v.sleep
                        .insert((t, p), parse_bool(&kv[1]).ok_or_else(|| malformed(pair))?);
                }
                ("listen", &[t, p]) => {
                    v.listen
                        .insert((t, p), parse_bool(&kv[1]).ok_or_else(|| malformed(pair))?);
                }
                ("transmit", &[t, p]) => {
                    v.transmit
                        .insert((t, p), parse_int(&kv[1]).ok_or_else(|| malformed(pair))?);
                }
                ("knows", &[t, p, k]) => {
                    v.knows.insert(
                        (t, p, k),
                        parse_bool(&kv[1]).ok_or_else(|| malformed(pair))?,
                    );
                }
                _ => return Err(malformed(pair)),
            }
        }
    }
    Ok(v)
}

/// Rebuilds a trace from `get-value` output for the cells of `spec`, checking
/// every (sleep, listen, transmit) triple and cross-checking reported
/// knowledge against the learning rule.
pub fn parse_value_response(text: &str, spec: &NetworkSpec) -> Result<ProtocolTrace, SmtError> {
    let values = collect_values(&parse_sexps(text)?)?;
    let mut actions = Vec::with_capacity(spec.horizon);
    for t in 0..spec.horizon {
        let mut row = Vec::with_capacity(spec.processes);
        for p in 0..spec.processes {
            let missing = |f: &str| SmtError::Malformed(format!("no value for {f}({t},{p})"));
            let s = *values.sleep.get(&(t, p)).ok_or_else(|| missing("sleep"))?;
            let l = *values
                .listen
                .get(&(t, p))
                .ok_or_else(|| missing("listen"))?;
            let x = *values
                .transmit
                .get(&(t, p))
                .ok_or_else(|| missing("transmit"))?;
            if x < -1 || x > spec.packets as i64 {
                return Err(SmtError::ContentOutOfRange { t, p, code: x });
            }
            let exclusive =
                (!s || (!l && x == -1)) && (x < 0 || (!s && !l)) && (!l || (!s && x == -1));
            if !exclusive || !(s || l || x >= 0) {
                return Err(SmtError::InconsistentTriple {
                    t,
                    p,
                    sleep: s,
                    listen: l,
                    transmit: x,
                });
            }
            row.push(match x {
                0 => Action::Transmit(Content::Garbage),
                k if k > 0 => Action::Transmit(Content::Packet(k as usize)),
                _ if l => Action::Listen,
                _ => Action::Sleep,
            });
        }
        actions.push(row);
    }
    let trace = ProtocolTrace::derive(spec.clone(), actions);
    for (&(t, p, k), &reported) in &values.knows {
        if t > spec.horizon || p >= spec.processes || k == 0 || k > spec.packets {
            continue;
        }
        let derived = trace.knowledge[t][p][k - 1];
        if derived != reported {
            return Err(SmtError::KnowsMismatch {
                t,
                p,
                k,
                reported,
                derived,
            });
        }
    }
    Ok(trace)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SatStatus {
    Sat,
    Unsat,
    Unknown,
}

impl SatStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SatStatus::Sat => "sat",
            SatStatus::Unsat => "unsat",
            SatStatus::Unknown => "unknown",
        }
    }
}

/// What an external solver said about one document.
#[derive(Debug, Clone)]
pub struct ExternalOutput {
    pub status: SatStatus,
    /// The `get-value` answers, re-rendered, when the status is sat.
    pub values: Option<String>,
    /// Assertion names from `get-unsat-core`, when the status is unsat and
    /// the solver produced one.
    pub core: Option<Vec<String>>,
    pub raw: String,
}

impl ExternalOutput {
    /// Requirement labels named in the core; unknown names are dropped.
    pub fn core_labels(&self) -> Option<BTreeSet<RequirementLabel>> {
        self.core
            .as_ref()
            .map(|names| names.iter().filter_map(|n| label_of_assertion(n)).collect())
    }
}

/// Splits raw solver output into status, value section and core.
pub fn classify_output(raw: &str) -> Result<ExternalOutput, SmtError> {
    let exprs = parse_sexps(raw).map_err(|_| SmtError::Status(raw.trim().to_string()))?;
    let status = match exprs.first().and_then(Sexp::as_atom) {
        Some("sat") => SatStatus::Sat,
        Some("unsat") => SatStatus::Unsat,
        Some("unknown") => SatStatus::Unknown,
        _ => return Err(SmtError::Status(raw.trim().to_string())),
    };
    let rest = &exprs[1..];
    let values = (status == SatStatus::Sat).then(|| {
        rest.iter()
            .filter(|e| is_value_list(e))
            .map(|e| e.to_string())
            .collect::<Vec<_>>()
            .join("\n")
    });
    let core = if status == SatStatus::Unsat {
        rest.iter()
            .filter_map(Sexp::as_list)
            .filter(|items| items.first().and_then(Sexp::as_atom) != Some("error"))
            .find(|items| items.iter().all(|i| i.as_atom().is_some()))
            .map(|items| {
                items
                    .iter()
                    .filter_map(|i| i.as_atom().map(str::to_string))
                    .collect()
            })
    } else {
        None
    };
    Ok(ExternalOutput {
        status,
        values,
        core,
        raw: raw.to_string(),
    })
}

/// Feeds `document` to `command` on standard input and classifies its answer.
pub fn run_external(
    command: &[String],
    document: &str,
    timeout: Duration,
) -> Result<ExternalOutput, SmtError> {
    let display = command.join(" ");
    let Some((program, args)) = command.split_first() else {
        return Err(SmtError::Spawn {
            command: display,
            message: "empty command".into(),
        });
    };
    if timeout.is_zero() {
        return Err(SmtError::Timeout(timeout));
    }
    let mut child = Command::new(program)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| SmtError::Spawn {
            command: display.clone(),
            message: e.to_string(),
        })?;

    let mut stdin = child.stdin.take().expect("piped stdin");
    let doc = document.to_string();
    let writer = thread::spawn(move || {
        // A solver that exits early closes the pipe; that shows up in its status.
        let _ = stdin.write_all(doc.as_bytes());
    });
    let mut stdout = child.stdout.take().expect("piped stdout");
    let reader = thread::spawn(move || {
        let mut buf = String::new();
        let _ = stdout.read_to_string(&mut buf);
        buf
    });

    let deadline = Instant::now() + timeout;
    loop {
        match child.try_wait() {
            Ok(Some(_)) => break,
            Ok(None) if Instant::now() >= deadline => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(SmtError::Timeout(timeout));
            }
            Ok(None) => thread::sleep(Duration::from_millis(2)),
            Err(e) => {
                return Err(SmtError::Spawn {
                    command: display,
                    message: e.to_string(),
                })
            }
        }
    }
    let _ = writer.join();
    let raw = reader.join().unwrap_or_default();
    classify_output(&raw)
}

/// The solver command from an explicit flag value, falling back to
/// `PROTOFORGE_SOLVER`. Words are split on whitespace.
pub fn solver_command(flag: Option<&str>) -> Option<Vec<String>> {
    let text = match flag {
        Some(f) => f.to_string(),
        None => std::env::var(SOLVER_ENV).ok()?,
    };
    let words: Vec<String> = text.split_whitespace().map(str::to_string).collect();
    (!words.is_empty()).then_some(words)
}
