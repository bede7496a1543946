//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Each binding takes spec text in the `key = value` format and returns a JSON
//! string. The plain functions in [`ops`] do the work so they can be tested
//! natively.

use wasm_bindgen::prelude::*;

pub mod ops {
    use protoforge::sim::{self, PowerModel};
    use protoforge::{
        encode, min_horizon, parse_spec, solve, unsat_core_minimize, write_trace, HorizonSearch,
        ProtocolTrace, SearchConfig, SolveResult,
    };
    use serde_json::{json, Value};

    /// Searches beyond this many nodes are reported as inconclusive so the
    /// page stays responsive.
    pub const NODE_LIMIT: u64 = 2_000_000;

    fn config() -> SearchConfig {
        SearchConfig::default()
            .with_node_limit(NODE_LIMIT)
            .expect("positive limit")
    }

    fn trace_value(trace: &ProtocolTrace) -> Value {
        let mut v: Value = serde_json::from_str(&write_trace(trace)).expect("valid json");
        v["grid"] = Value::String(trace.to_string());
        v
    }

    pub fn synthesize(spec_text: &str) -> Result<String, String> {
        let spec = parse_spec(spec_text).map_err(|e| e.to_string())?;
        let cs = encode(&spec).map_err(|e| e.to_string())?;
        let out = match solve(&cs, &config()) {
            SolveResult::Sat(trace) => {
                let report = sim::simulate_trace(&trace, PowerModel::default())
                    .map_err(|e| e.to_string())?;
                json!({"status": "sat", "trace": trace_value(&trace), "total_power": report.total_power})
            }
            SolveResult::Unsat(full) => {
                let core = unsat_core_minimize(&cs, &config()).unwrap_or(full);
                json!({"status": "unsat", "core": core.labels})
            }
            SolveResult::BudgetExhausted => json!({"status": "budget-exhausted"}),
        };
        Ok(out.to_string())
    }

    pub fn shortest_horizon(spec_text: &str, t_max: usize) -> Result<String, String> {
        let spec = parse_spec(spec_text).map_err(|e| e.to_string())?;
        let out = match min_horizon(&spec, t_max, &config()).map_err(|e| e.to_string())? {
            HorizonSearch::Found { horizon, trace } => {
                json!({"status": "found", "horizon": horizon, "trace": trace_value(&trace)})
            }
            HorizonSearch::NotFoundWithin(t) => json!({"status": "not-found", "max": t}),
            HorizonSearch::Inconclusive(t) => json!({"status": "budget-exhausted", "horizon": t}),
        };
        Ok(out.to_string())
    }

    pub fn compare(spec_text: &str, pw: u64, max_slots: usize) -> Result<String, String> {
        let spec = parse_spec(spec_text).map_err(|e| e.to_string())?;
        let cs = encode(&spec).map_err(|e| e.to_string())?;
        let power = PowerModel::with_active_cost(pw);
        let trace = match solve(&cs, &config()) {
            SolveResult::Sat(trace) => trace,
            SolveResult::Unsat(_) => {
                return Err("no schedule meets the requirements at this horizon".into())
            }
            SolveResult::BudgetExhausted => return Err("search budget exhausted".into()),
        };
        let synthesized = sim::simulate_trace(&trace, power).map_err(|e| e.to_string())?;
        let (base_trace, base) = sim::run_baseline(&spec, power, max_slots);
        let report = sim::compare(&synthesized, &base).map_err(|e| e.to_string())?;
        let mut v: Value = serde_json::from_str(&report.to_json()).expect("valid json");
        v["table"] = Value::String(report.render());
        v["synthesized_grid"] = Value::String(trace.to_string());
        v["baseline_grid"] = Value::String(base_trace.to_string());
        Ok(v.to_string())
    }
}

fn js(r: Result<String, String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn synthesize(spec_text: &str) -> Result<String, JsError> {
    js(ops::synthesize(spec_text))
}

#[wasm_bindgen(js_name = minHorizon)]
pub fn min_horizon(spec_text: &str, t_max: usize) -> Result<String, JsError> {
    js(ops::shortest_horizon(spec_text, t_max))
}

#[wasm_bindgen]
pub fn compare(spec_text: &str, pw: u32, max_slots: usize) -> Result<String, JsError> {
    js(ops::compare(spec_text, u64::from(pw), max_slots))
}
