use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use protoforge::sim::{self, PowerModel, SimError};
use protoforge::smt::{self, SatStatus};
use protoforge::trace::{validate_all, TraceError};
use protoforge::{
    encode, min_horizon, parse_spec, read_trace, solve, unsat_core_minimize, write_trace,
    HorizonSearch, NetworkSpec, ProtocolTrace, SearchConfig, SolveResult,
};

const EXIT_UNSAT: u8 = 1;
const EXIT_VIOLATIONS: u8 = 2;
const EXIT_USAGE: u8 = 3;
const EXIT_IO: u8 = 4;
const EXIT_BUDGET: u8 = 5;

#[derive(Parser)]
#[command(
    name = "protoforge",
    version,
    about = "Synthesize and analyze slotted broadcast protocols"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Append a one-line JSON object after the human-readable output.
    #[arg(long, global = true)]
    json: bool,
}

#[derive(Args)]
struct Budget {
    /// Stop the search after this many nodes.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    node_limit: Option<u64>,
}

#[derive(Args)]
struct Power {
    /// Power units charged per listen or transmit slot.
    #[arg(long, default_value_t = 1)]
    pw: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Search for a schedule meeting every requirement of a spec.
    Synth {
        spec: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        budget: Budget,
        #[command(flatten)]
        common: Common,
    },
    /// Find the shortest horizon at which the goal is reachable.
    MinHorizon {
        spec: PathBuf,
        #[arg(long)]
        max: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        budget: Budget,
        #[command(flatten)]
        common: Common,
    },
    /// Check a trace file against its spec's requirements.
    Validate {
        trace: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Print a minimal set of requirement families that cannot hold together.
    UnsatCore {
        spec: PathBuf,
        #[command(flatten)]
        budget: Budget,
        #[command(flatten)]
        common: Common,
    },
    /// Write the SMT-LIB2 encoding, optionally running an external solver on it.
    EmitSmt {
        spec: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Solver command line reading SMT-LIB2 on stdin, e.g. "z3 -in".
        /// Defaults to $PROTOFORGE_SOLVER.
        #[arg(long)]
        solver: Option<String>,
        /// Where to write the trace recovered from a sat answer.
        #[arg(long)]
        trace_out: Option<PathBuf>,
        /// Seconds to wait for the solver.
        #[arg(long, default_value_t = 60)]
        timeout: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Replay a trace and report power use.
    Simulate {
        trace: PathBuf,
        #[command(flatten)]
        power: Power,
        #[command(flatten)]
        common: Common,
    },
    /// Run the eager always-on policy and report power use.
    Baseline {
        spec: PathBuf,
        #[command(flatten)]
        power: Power,
        #[arg(long, default_value_t = 1000)]
        max_slots: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Synthesize a schedule and compare it with the eager policy.
    Compare {
        spec: PathBuf,
        #[command(flatten)]
        power: Power,
        #[arg(long, default_value_t = 1000)]
        max_slots: usize,
        #[command(flatten)]
        budget: Budget,
        #[command(flatten)]
        common: Common,
    },
}

/// A failed run: exit code plus a message for stderr.
struct Failure(u8, String);

impl Failure {
    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Failure(EXIT_IO, format!("{}: {e}", path.display()))
    }
}

type Outcome = Result<u8, Failure>;

fn emit(human: &str, json: bool, machine: Value) {
    print!("{human}");
    if json {
        if !human.is_empty() && !human.ends_with('\n') {
            println!();
        }
        println!("{machine}");
    }
}

fn load_spec(path: &Path) -> Result<NetworkSpec, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
    parse_spec(&text).map_err(|e| Failure::io(path, e))
}

fn load_trace(path: &Path) -> Result<ProtocolTrace, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
    read_trace(&text).map_err(|e| match e {
        TraceError::KnowledgeMismatch { .. } => {
            Failure(EXIT_VIOLATIONS, format!("{}: {e}", path.display()))
        }
        _ => Failure::io(path, e),
    })
}

fn save(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::io(path, e))
}

fn trace_json(trace: &ProtocolTrace) -> Value {
    serde_json::from_str(&write_trace(trace)).expect("trace writer emits valid json")
}

fn config(budget: &Budget) -> SearchConfig {
    match budget.node_limit {
        Some(limit) => SearchConfig::default()
            .with_node_limit(limit)
            .expect("clap enforces a positive limit"),
        None => SearchConfig::default(),
    }
}

fn write_or_show(trace: &ProtocolTrace, out: Option<&Path>) -> Result<String, Failure> {
    match out {
        Some(path) => {
            save(path, &write_trace(trace))?;
            Ok(format!("trace written to {}\n", path.display()))
        }
        None => Ok(trace.to_string()),
    }
}

fn synth(spec: &Path, out: Option<&Path>, budget: &Budget, json: bool) -> Outcome {
    let spec = load_spec(spec)?;
    let cs = encode(&spec).map_err(|e| Failure(EXIT_USAGE, e.to_string()))?;
    let config = config(budget);
    match solve(&cs, &config) {
        SolveResult::Sat(trace) => {
            let human = format!("sat\n{}", write_or_show(&trace, out)?);
            emit(
                &human,
                json,
                json!({"status": "sat", "trace": trace_json(&trace)}),
            );
            Ok(0)
        }
        SolveResult::Unsat(full) => {
            let core = match unsat_core_minimize(&cs, &config) {
                Ok(core) => core,
                Err(_) => full,
            };
            emit(
                &format!("unsat\ncore: {core}\n"),
                json,
                json!({"status": "unsat", "core": core.labels}),
            );
            Ok(EXIT_UNSAT)
        }
        SolveResult::BudgetExhausted => {
            emit(
                "budget exhausted\n",
                json,
                json!({"status": "budget-exhausted"}),
            );
            Ok(EXIT_BUDGET)
        }
    }
}

fn horizon(spec: &Path, max: usize, out: Option<&Path>, budget: &Budget, json: bool) -> Outcome {
    let spec = load_spec(spec)?;
    let result =
        min_horizon(&spec, max, &config(budget)).map_err(|e| Failure(EXIT_USAGE, e.to_string()))?;
    match result {
        HorizonSearch::Found { horizon, trace } => {
            let human = format!("T_min = {horizon}\n{}", write_or_show(&trace, out)?);
            emit(
                &human,
                json,
                json!({"status": "found", "horizon": horizon, "trace": trace_json(&trace)}),
            );
            Ok(0)
        }
        HorizonSearch::NotFoundWithin(t) => {
            emit(
                &format!("no schedule within horizon {t}\n"),
                json,
                json!({"status": "not-found", "max": t}),
            );
            Ok(EXIT_UNSAT)
        }
        HorizonSearch::Inconclusive(t) => {
            emit(
                &format!("budget exhausted at horizon {t}\n"),
                json,
                json!({"status": "budget-exhausted", "horizon": t}),
            );
            Ok(EXIT_BUDGET)
        }
    }
}

fn check(path: &Path, json: bool) -> Outcome {
    let trace = load_trace(path)?;
    let violations = validate_all(&trace).map_err(|e| Failure::io(path, e))?;
    let human: String = violations.iter().map(|v| format!("{v}\n")).collect();
    emit(&human, json, json!({ "violations": violations }));
    Ok(if violations.is_empty() {
        0
    } else {
        EXIT_VIOLATIONS
    })
}

fn core(spec: &Path, budget: &Budget, json: bool) -> Outcome {
    let spec = load_spec(spec)?;
    let cs = encode(&spec).map_err(|e| Failure(EXIT_USAGE, e.to_string()))?;
    match unsat_core_minimize(&cs, &config(budget)) {
        Ok(core) => {
            emit(
                &format!("{core}\n"),
                json,
                json!({"status": "unsat", "core": core.labels}),
            );
            Ok(EXIT_UNSAT)
        }
        Err(protoforge::solver::CoreError::Satisfiable) => {
            emit("satisfiable\n", json, json!({"status": "sat"}));
            Ok(0)
        }
        Err(e) => Err(Failure(EXIT_BUDGET, e.to_string())),
    }
}

fn emit_smt(
    spec: &Path,
    out: Option<&Path>,
    solver: Option<&str>,
    trace_out: Option<&Path>,
    timeout: u64,
    json: bool,
) -> Outcome {
    let spec = load_spec(spec)?;
    let doc = smt::emit_smtlib(&spec).map_err(|e| Failure(EXIT_USAGE, e.to_string()))?;
    let command = smt::solver_command(solver);
    match out {
        Some(path) => save(path, &doc)?,
        None if command.is_none() => print!("{doc}"),
        None => {}
    }
    let Some(command) = command else {
        return Ok(0);
    };
    let answer = smt::run_external(&command, &doc, Duration::from_secs(timeout))
        .map_err(|e| Failure(EXIT_IO, e.to_string()))?;
    let mut human = format!("{}\n", answer.status.as_str());
    let mut machine = json!({"status": answer.status.as_str()});
    match answer.status {
        SatStatus::Sat => {
            let values = answer.values.as_deref().unwrap_or_default();
            let trace = smt::parse_value_response(values, &spec)
                .map_err(|e| Failure(EXIT_IO, e.to_string()))?;
            human.push_str(&write_or_show(&trace, trace_out)?);
            machine["trace"] = trace_json(&trace);
        }
        SatStatus::Unsat => {
            if let Some(labels) = answer.core_labels() {
                let names: Vec<&str> = labels.iter().map(|l| l.name()).collect();
                human.push_str(&format!("core: {}\n", names.join(" ")));
                machine["core"] = json!(labels);
            }
        }
        SatStatus::Unknown => {
            emit(&human, json, machine);
            return Ok(EXIT_IO);
        }
    }
    emit(&human, json, machine);
    Ok(0)
}

fn sim_failure(e: SimError) -> Failure {
    match e {
        SimError::InvalidTrace(_) => Failure(EXIT_VIOLATIONS, e.to_string()),
        _ => Failure(EXIT_IO, e.to_string()),
    }
}

fn simulate(path: &Path, pw: u64, json: bool) -> Outcome {
    let trace = load_trace(path)?;
    let report =
        sim::simulate_trace(&trace, PowerModel::with_active_cost(pw)).map_err(sim_failure)?;
    emit(&report.render(), json, json!(report));
    Ok(0)
}

fn baseline(spec: &Path, pw: u64, max_slots: usize, json: bool) -> Outcome {
    let spec = load_spec(spec)?;
    let (_, report) = sim::run_baseline(&spec, PowerModel::with_active_cost(pw), max_slots);
    emit(&report.render(), json, json!(report));
    Ok(0)
}

fn compare(spec: &Path, pw: u64, max_slots: usize, budget: &Budget, json: bool) -> Outcome {
    let spec = load_spec(spec)?;
    let cs = encode(&spec).map_err(|e| Failure(EXIT_USAGE, e.to_string()))?;
    let power = PowerModel::with_active_cost(pw);
    let trace = match solve(&cs, &config(budget)) {
        SolveResult::Sat(trace) => trace,
        SolveResult::Unsat(core) => {
            emit(
                &format!("unsat\ncore: {core}\n"),
                json,
                json!({"status": "unsat", "core": core.labels}),
            );
            return Ok(EXIT_UNSAT);
        }
        SolveResult::BudgetExhausted => {
            emit(
                "budget exhausted\n",
                json,
                json!({"status": "budget-exhausted"}),
            );
            return Ok(EXIT_BUDGET);
        }
    };
    let synthesized = sim::simulate_trace(&trace, power).map_err(sim_failure)?;
    let (_, base) = sim::run_baseline(&spec, power, max_slots);
    let report = sim::compare(&synthesized, &base).map_err(sim_failure)?;
    let machine: Value = serde_json::from_str(&report.to_json()).expect("report json");
    emit(&report.render(), json, machine);
    Ok(0)
}

fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Synth {
            spec,
            out,
            budget,
            common,
        } => synth(&spec, out.as_deref(), &budget, common.json),
        Command::MinHorizon {
            spec,
            max,
            out,
            budget,
            common,
        } => horizon(&spec, max, out.as_deref(), &budget, common.json),
        Command::Validate { trace, common } => check(&trace, common.json),
        Command::UnsatCore {
            spec,
            budget,
            common,
        } => core(&spec, &budget, common.json),
        Command::EmitSmt {
            spec,
            out,
            solver,
            trace_out,
            timeout,
            common,
        } => emit_smt(
            &spec,
            out.as_deref(),
            solver.as_deref(),
            trace_out.as_deref(),
            timeout,
            common.json,
        ),
        Command::Simulate {
            trace,
            power,
            common,
        } => simulate(&trace, power.pw, common.json),
        Command::Baseline {
            spec,
            power,
            max_slots,
            common,
        } => baseline(&spec, power.pw, max_slots, common.json),
        Command::Compare {
            spec,
            power,
            max_slots,
            budget,
            common,
        } => compare(&spec, power.pw, max_slots, &budget, common.json),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(Failure(code, message)) => {
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}
