//! Browser bindings for the static demo page in `www/`.
//!
//! Each exported function takes plain strings/numbers and returns a JSON
//! string. The `*_json` functions hold the logic and are callable natively,
//! which is how the tests exercise them.

use std::collections::BTreeSet;

use grid_isle::detection::{self, VoteConfig};
use grid_isle::dispatch;
use grid_isle::dynamics::{self, DgModel, ModelSpec, Scenario, SensorSpec, STATES_PER_DG};
use grid_isle::grid::{self, BusId};
use grid_isle::islanding::{self, IslandingConfig, SolveOptions};
use grid_isle::skr::{self, SkrConfig, SkrState};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct IslandView {
    buses: BTreeSet<BusId>,
    healthy: bool,
    contains_anomaly: bool,
    p_gen_max_mw: f64,
    p_dem_mw: f64,
    cost_usd: Option<f64>,
    shed_pct: Option<f64>,
    error: Option<String>,
}

#[derive(Serialize)]
struct SolveView {
    objective: f64,
    gap: f64,
    nodes: usize,
    wall_time_s: f64,
    unhealthy: BTreeSet<BusId>,
    open_lines: Vec<String>,
    islands: Vec<IslandView>,
    nominal_cost_usd: f64,
    islanded_cost_usd: f64,
}

fn parse_lambda(text: &str) -> Result<[f64; 3], String> {
    if text.trim().is_empty() {
        return Ok([1.0, 1.0, 1.0]);
    }
    let v: Vec<f64> = text.split(',').map(|p| p.trim().parse::<f64>().map_err(|_| format!("bad weight `{p}`"))).collect::<Result<_, _>>()?;
    match v.as_slice() {
        [a, b, c] => Ok([*a, *b, *c]),
        _ => Err("expected three weights l1,l2,l3".into()),
    }
}

/// Solve the islanding MILP on the bundled 24-bus case.
pub fn solve_islanding_json(buses: &str, lambda: &str) -> Result<String, String> {
    let topo = grid::rts24();
    let anomalous = grid::parse_bus_list(buses)?;
    let config = IslandingConfig { lambda: parse_lambda(lambda)?, ..Default::default() };
    let inst = islanding::build_milp(&topo, &anomalous, &config).map_err(|e| e.to_string())?;
    let sol = islanding::solve(&inst, &SolveOptions::default()).map_err(|e| e.to_string())?;
    let open = sol.open_lines();
    let closed: BTreeSet<String> = topo.lines.iter().map(|l| l.id.clone()).filter(|id| !open.contains(id)).collect();
    let islanded = topo.with_lines(&closed);
    let islands: Vec<IslandView> = islanding::islands_of(&sol, &topo, &anomalous)
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|isl| {
            let caps = grid::capacities(&topo, &isl.buses);
            let (cost_usd, shed_pct, error) = match dispatch::island_report(&islanded, "", &isl.buses, Vec::new()) {
                Ok(r) => (Some(r.cost_usd), Some(100.0 * r.shed_fraction), None),
                Err(e) => (None, None, Some(e.to_string())),
            };
            IslandView {
                buses: isl.buses,
                healthy: isl.healthy,
                contains_anomaly: isl.contains_anomaly,
                p_gen_max_mw: caps.p_gen_max_mw,
                p_dem_mw: caps.p_dem_mw,
                cost_usd,
                shed_pct,
                error,
            }
        })
        .collect();
    let nominal = dispatch::nominal_dispatch(&topo).map_err(|e| e.to_string())?;
    let view = SolveView {
        objective: sol.objective,
        gap: sol.gap,
        nodes: sol.nodes,
        wall_time_s: sol.wall_time_s,
        unhealthy: sol.unhealthy(),
        open_lines: open,
        islanded_cost_usd: islands.iter().filter_map(|i| i.cost_usd).sum(),
        islands,
        nominal_cost_usd: nominal.cost_usd,
    };
    Ok(serde_json::to_string(&view).expect("serializes"))
}

/// Parse votes like `"111 110 001"`: one group of digits per round.
pub fn parse_votes(text: &str) -> Result<Vec<Vec<u8>>, String> {
    text.split(|c: char| c.is_whitespace() || c == ',' || c == ';')
        .filter(|g| !g.is_empty())
        .map(|g| {
            g.chars()
                .map(|c| match c {
                    '0' => Ok(0),
                    '1' => Ok(1),
                    other => Err(format!("vote `{other}` is not 0 or 1")),
                })
                .collect()
        })
        .collect()
}

/// Run the credibility vote over hand-entered rounds.
pub fn algorithm2_trace_json(votes: &str, rounds: usize) -> Result<String, String> {
    let parsed = parse_votes(votes)?;
    let classifiers = parsed.first().map_or(3, Vec::len);
    let config = VoteConfig { rounds, classifiers, ..Default::default() };
    let d = detection::decide(parsed.iter(), &config).map_err(|e| e.to_string())?;
    Ok(serde_json::to_string(&d).expect("serializes"))
}

#[derive(Serialize)]
struct SkrView {
    t: Vec<f64>,
    residual: Vec<f64>,
    threshold: Vec<f64>,
    alarms: Vec<skr::AlarmEvent>,
    events: Vec<dynamics::ScenarioEvent>,
}

/// Simulate one of the bundled scenarios and trace the residual trigger of
/// one DG.
pub fn skr_trace_json(scenario: &str, confidence: f64, source: usize) -> Result<String, String> {
    let sc = Scenario::standard_suite(11)
        .into_iter()
        .chain([("nominal".to_string(), Scenario::nominal(1.0, 11))])
        .find(|(n, _)| n == scenario)
        .map(|(_, s)| s)
        .ok_or_else(|| format!("unknown scenario `{scenario}`"))?;
    let model = DgModel::synthetic(&ModelSpec::default()).map_err(|e| e.to_string())?;
    if source >= model.n_dg {
        return Err(format!("DG index {source} out of range (0..{})", model.n_dg));
    }
    let frames = dynamics::run_scenario(&model, &SensorSpec::default(), &sc).map_err(|e| e.to_string())?;
    let config = SkrConfig { confidence, ..Default::default() };
    let mut states: Vec<SkrState> = (0..model.n_dg).map(|j| SkrState::new(j, config)).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    let mut view = SkrView { t: Vec::new(), residual: Vec::new(), threshold: Vec::new(), alarms: Vec::new(), events: sc.events.clone() };
    for f in &frames {
        for (j, st) in states.iter_mut().enumerate() {
            let comps: Vec<f64> = (0..STATES_PER_DG).map(|k| f.y[j * STATES_PER_DG + k] - f.y_est[j * STATES_PER_DG + k]).collect();
            let (r, alarm) = skr::observe(st, f.t, &comps).map_err(|e| e.to_string())?;
            view.alarms.extend(alarm);
            if j == source {
                view.t.push(f.t);
                view.residual.push(r);
                view.threshold.push(st.threshold());
            }
        }
    }
    Ok(serde_json::to_string(&view).expect("serializes"))
}

#[wasm_bindgen]
pub fn solve_islanding(buses: &str, lambda: &str) -> Result<String, JsError> {
    solve_islanding_json(buses, lambda).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn algorithm2_trace(votes: &str, rounds: usize) -> Result<String, JsError> {
    algorithm2_trace_json(votes, rounds).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn skr_trace(scenario: &str, confidence: f64, source: usize) -> Result<String, JsError> {
    skr_trace_json(scenario, confidence, source).map_err(|e| JsError::new(&e))
}
