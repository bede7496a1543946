//! Synthesis of slotted broadcast protocols from bounded network requirements.
//!
//! A [`NetworkSpec`] names the processes, packets, horizon and hears relation.
//! [`encoder::encode`] grounds the requirement catalog over every
//! (slot, process) cell, [`solver::solve`] searches for a protocol trace,
//! [`trace::validate`] checks any trace independently, [`smt`] exports the
//! same problem to an external SMT-LIB2 solver, and [`sim`] replays traces
//! against an eager always-on baseline.

pub mod action;
pub mod encoder;
pub mod model;
pub mod sim;
pub mod smt;
pub mod solver;
pub mod trace;

pub use action::{Action, ActionKind, Content};
pub use encoder::{encode, ConstraintSystem, EncodeError};
pub use model::{
    parse_spec, render_spec, validate_spec, GoalKind, LivenessMode, NetworkSpec, RequirementLabel,
    SpecParseError, Topology,
};
pub use solver::{
    enumerate_all, min_horizon, solve, unsat_core_minimize, HorizonSearch, SearchConfig,
    SolveResult, UnsatCore,
};
pub use trace::{read_trace, validate, write_trace, ProtocolTrace, Violation};
