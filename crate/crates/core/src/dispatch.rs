//! Per-island economic dispatch, load-shedding balance and cost comparison.
//!
//! Every generator attached to an island is treated as committed: it runs at
//! least at `p_min` and pays its commitment block. The dispatch LP moves the
//! convex segments above `p_min` and routes power over the island's closed
//! lines as a transport network with the lines' flow limits.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{self, BusId, Capacities, GridTopology};
use crate::lp::{LinearProgram, LpError};

/// Penalty on demand the network cannot deliver, and on forced spill.
const VOLL_USD_PER_MWH: f64 = 10_000.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DispatchError {
    #[error("critical demand {critical_mw:.2} MW exceeds generation capacity {capacity_mw:.2} MW")]
    CriticalityInfeasible { critical_mw: f64, capacity_mw: f64 },
    #[error(
        "served demand {demand_mw:.2} MW is below the committed minimum {p_min_mw:.2} MW; \
         decommit units to restore feasibility"
    )]
    BelowMinimum { demand_mw: f64, p_min_mw: f64 },
    #[error("dispatch LP failed: {0}")]
    Lp(#[from] LpError),
}

/// Served demand after proportional shedding above the critical floors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Balance {
    pub demand_mw: f64,
    pub capacity_mw: f64,
    pub served_mw: f64,
    pub shed_fraction: f64,
    /// Served MW per load id.
    pub served: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dispatch {
    /// Output per generator id, MW.
    pub outputs: BTreeMap<String, f64>,
    /// Served MW per load id, after network-limited curtailment.
    pub served: BTreeMap<String, f64>,
    /// Flow per closed line id, MW (positive from `from` to `to`).
    pub flows: BTreeMap<String, f64>,
    /// Hourly operating cost at the dispatch point, $.
    pub cost_usd: f64,
    /// Startup costs of the committed units, reported apart from `cost_usd`.
    pub startup_usd: f64,
    /// Demand the network could not deliver on top of the balance shedding.
    pub undelivered_mw: f64,
    /// Minimum-output generation with nowhere to go.
    pub spilled_mw: f64,
}

impl Dispatch {
    pub fn output(&self, generator_id: &str) -> Option<f64> {
        self.outputs.get(generator_id).copied()
    }

    pub fn served_mw(&self) -> f64 {
        self.served.values().sum()
    }
}

/// Proportional shedding so that served demand is `min(demand, capacity)`
/// while every load keeps its critical floor.
pub fn balance_check(topo: &GridTopology, buses: &BTreeSet<BusId>) -> Result<Balance, DispatchError> {
    let loads: Vec<_> = topo.loads.iter().filter(|d| buses.contains(&d.bus)).collect();
    let capacity_mw: f64 = topo.generators.iter().filter(|g| buses.contains(&g.bus)).map(|g| g.p_max).sum();
    let demand_mw: f64 = loads.iter().map(|d| d.p).sum();
    let critical_mw: f64 = loads.iter().map(|d| d.theta * d.p).sum();
    if critical_mw > capacity_mw + 1e-9 {
        return Err(DispatchError::CriticalityInfeasible { critical_mw, capacity_mw });
    }
    let target = demand_mw.min(capacity_mw);
    let flexible = demand_mw - critical_mw;
    let alpha = if flexible > 1e-12 { ((target - critical_mw) / flexible).clamp(0.0, 1.0) } else { 1.0 };
    let served: BTreeMap<String, f64> =
        loads.iter().map(|d| (d.id.clone(), d.theta * d.p + alpha * (1.0 - d.theta) * d.p)).collect();
    let served_mw: f64 = served.values().sum();
    let shed_fraction = if demand_mw > 0.0 { 1.0 - served_mw / demand_mw } else { 0.0 };
    Ok(Balance { demand_mw, capacity_mw, served_mw, shed_fraction, served })
}

/// Minimum-cost dispatch of the island induced by `buses` serving the
/// balance-checked demand.
pub fn economic_dispatch(topo: &GridTopology, buses: &BTreeSet<BusId>) -> Result<Dispatch, DispatchError> {
    let island = topo.subnetwork(buses);
    let balance = balance_check(&island, buses)?;
    dispatch_served(&island, &balance.served)
}

/// Nominal (pre-event) dispatch of the whole network.
pub fn nominal_dispatch(topo: &GridTopology) -> Result<Dispatch, DispatchError> {
    economic_dispatch(topo, &topo.bus_ids())
}

fn dispatch_served(island: &GridTopology, served: &BTreeMap<String, f64>) -> Result<Dispatch, DispatchError> {
    let demand_mw: f64 = served.values().sum();
    let p_min_mw: f64 = island.generators.iter().map(|g| g.p_min).sum();
    if demand_mw + 1e-9 < p_min_mw {
        return Err(DispatchError::BelowMinimum { demand_mw, p_min_mw });
    }

    let nb = island.buses.len();
    let mut lp = LinearProgram::new();
    let mut bus_rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nb];
    let mut bus_rhs = vec![0.0; nb];
    let mut fixed_cost = 0.0;
    let mut segments: Vec<Vec<usize>> = Vec::with_capacity(island.generators.len());
    for g in &island.generators {
        let b = island.bus_position(g.bus).expect("validated topology");
        fixed_cost += g.cost.cost_at(g.p_min);
        bus_rhs[b] -= g.p_min;
        let cols: Vec<usize> = g
            .cost
            .slices(g.p_min, g.p_max)
            .into_iter()
            .map(|(width, price)| {
                let c = lp.add_col(0.0, width, price);
                bus_rows[b].push((c, 1.0));
                c
            })
            .collect();
        segments.push(cols);
    }
    for d in &island.loads {
        let b = island.bus_position(d.bus).expect("validated topology");
        bus_rhs[b] += served.get(&d.id).copied().unwrap_or(0.0);
    }
    let flow_cols: Vec<usize> = island
        .lines
        .iter()
        .map(|l| {
            let c = lp.add_col(l.p_min, l.p_max, 0.0);
            bus_rows[island.bus_position(l.from_bus).unwrap()].push((c, -1.0));
            bus_rows[island.bus_position(l.to_bus).unwrap()].push((c, 1.0));
            c
        })
        .collect();
    let mut unserved_cols = Vec::with_capacity(nb);
    let mut spill_cols = Vec::with_capacity(nb);
    for b in 0..nb {
        let u = lp.add_col(0.0, served_bus_demand(island, served, b), VOLL_USD_PER_MWH);
        let s = lp.add_col(0.0, f64::INFINITY, VOLL_USD_PER_MWH);
        bus_rows[b].push((u, 1.0));
        bus_rows[b].push((s, -1.0));
        unserved_cols.push(u);
        spill_cols.push(s);
    }
    for (b, coeffs) in bus_rows.into_iter().enumerate() {
        lp.add_row(coeffs, bus_rhs[b], bus_rhs[b]);
    }
    let sol = lp.solve()?;

    let mut outputs = BTreeMap::new();
    let mut cost_usd = fixed_cost;
    let mut startup_usd = 0.0;
    for (g, cols) in island.generators.iter().zip(&segments) {
        let p = g.p_min + cols.iter().map(|&c| sol.x[c]).sum::<f64>();
        cost_usd += cols.iter().map(|&c| sol.x[c] * lp.cost[c]).sum::<f64>();
        startup_usd += g.cost.startup_usd;
        outputs.insert(g.id.clone(), p);
    }
    // curtail undelivered demand proportionally within each bus
    let mut served_out = served.clone();
    for (b, &u) in unserved_cols.iter().enumerate() {
        let short = sol.x[u];
        if short <= 1e-9 {
            continue;
        }
        let bus = island.buses[b].id;
        let total = served_bus_demand(island, served, b);
        for d in island.loads.iter().filter(|d| d.bus == bus) {
            if let Some(v) = served_out.get_mut(&d.id) {
                *v -= short * *v / total.max(1e-12);
            }
        }
    }
    let flows = island.lines.iter().zip(&flow_cols).map(|(l, &c)| (l.id.clone(), sol.x[c])).collect();
    Ok(Dispatch {
        outputs,
        served: served_out,
        flows,
        cost_usd,
        startup_usd,
        undelivered_mw: unserved_cols.iter().map(|&c| sol.x[c]).sum(),
        spilled_mw: spill_cols.iter().map(|&c| sol.x[c]).sum(),
    })
}

fn served_bus_demand(island: &GridTopology, served: &BTreeMap<String, f64>, b: usize) -> f64 {
    let bus = island.buses[b].id;
    island.loads.iter().filter(|d| d.bus == bus).map(|d| served.get(&d.id).copied().unwrap_or(0.0)).sum()
}

/// One island row of a partition report: buses, capacities, cut lines, shedding and cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IslandReport {
    pub island: String,
    pub buses: BTreeSet<BusId>,
    pub capacities: Capacities,
    pub dispatch: BTreeMap<String, f64>,
    pub cost_usd: f64,
    pub startup_usd: f64,
    pub served_mw: f64,
    pub shed_fraction: f64,
    /// Shedding implied by real-power balance alone, `max(0, 1 - gen/demand)`.
    pub shed_lower_bound: f64,
    pub disconnected_lines: Vec<String>,
}

/// Dispatch an island and assemble its report row.
pub fn island_report(
    topo: &GridTopology,
    island: impl Into<String>,
    buses: &BTreeSet<BusId>,
    disconnected_lines: Vec<String>,
) -> Result<IslandReport, DispatchError> {
    let caps = grid::capacities(topo, buses);
    let d = economic_dispatch(topo, buses)?;
    let served_mw = d.served_mw();
    let shed_fraction = if caps.p_dem_mw > 0.0 { (1.0 - served_mw / caps.p_dem_mw).max(0.0) } else { 0.0 };
    let shed_lower_bound =
        if caps.p_dem_mw > 0.0 { (1.0 - caps.p_gen_max_mw / caps.p_dem_mw).max(0.0) } else { 0.0 };
    Ok(IslandReport {
        island: island.into(),
        buses: buses.clone(),
        capacities: caps,
        dispatch: d.outputs,
        cost_usd: d.cost_usd,
        startup_usd: d.startup_usd,
        served_mw,
        shed_fraction,
        shed_lower_bound,
        disconnected_lines,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostComparison {
    pub pre_usd: f64,
    pub post_usd: f64,
    pub delta_usd: f64,
    pub percent: f64,
}

pub fn compare_to_nominal(pre: &IslandReport, post: &[IslandReport]) -> CostComparison {
    let post_usd: f64 = post.iter().map(|r| r.cost_usd).sum();
    let delta_usd = post_usd - pre.cost_usd;
    let percent = if pre.cost_usd != 0.0 { 100.0 * delta_usd / pre.cost_usd } else { 0.0 };
    CostComparison { pre_usd: pre.cost_usd, post_usd, delta_usd, percent }
}

/// Lossless DC power flow on the closed lines of `topo` for the given bus
/// injections (MW, generation positive). The first bus of each connected
/// component is its angle reference. Lines without a reactance are skipped.
pub fn dc_power_flow(topo: &GridTopology, injection: &BTreeMap<BusId, f64>) -> BTreeMap<String, f64> {
    let ids = topo.bus_ids();
    let lines: Vec<_> = topo.lines.iter().filter(|l| l.reactance_pu.is_some_and(|x| x > 0.0)).collect();
    let comps = grid::components(&ids, lines.iter().map(|l| (l.from_bus, l.to_bus)));
    let mut theta: BTreeMap<BusId, f64> = BTreeMap::new();
    for comp in comps {
        let order: Vec<BusId> = comp.iter().copied().collect();
        let pos: BTreeMap<BusId, usize> = order.iter().enumerate().map(|(k, &b)| (b, k)).collect();
        let k = order.len();
        theta.insert(order[0], 0.0);
        if k == 1 {
            continue;
        }
        let mut bmat = nalgebra::DMatrix::<f64>::zeros(k - 1, k - 1);
        let mut rhs = nalgebra::DVector::<f64>::zeros(k - 1);
        for l in lines.iter().filter(|l| comp.contains(&l.from_bus)) {
            let y = 1.0 / l.reactance_pu.unwrap();
            let (i, j) = (pos[&l.from_bus], pos[&l.to_bus]);
            for (a, b) in [(i, j), (j, i)] {
                if a > 0 {
                    bmat[(a - 1, a - 1)] += y;
                    if b > 0 {
                        bmat[(a - 1, b - 1)] -= y;
                    }
                }
            }
        }
        for (idx, &b) in order.iter().enumerate().skip(1) {
            rhs[idx - 1] = injection.get(&b).copied().unwrap_or(0.0);
        }
        if let Some(sol) = bmat.lu().solve(&rhs) {
            for (idx, &b) in order.iter().enumerate().skip(1) {
                theta.insert(b, sol[idx - 1]);
            }
        }
    }
    lines
        .iter()
        .map(|l| (l.id.clone(), (theta[&l.from_bus] - theta[&l.to_bus]) / l.reactance_pu.unwrap()))
        .collect()
}

/// Net injection per bus for a dispatch.
pub fn injections(topo: &GridTopology, d: &Dispatch) -> BTreeMap<BusId, f64> {
    let mut inj: BTreeMap<BusId, f64> = topo.bus_ids().into_iter().map(|b| (b, 0.0)).collect();
    for g in &topo.generators {
        *inj.get_mut(&g.bus).unwrap() += d.output(&g.id).unwrap_or(0.0);
    }
    for l in &topo.loads {
        *inj.get_mut(&l.bus).unwrap() -= d.served.get(&l.id).copied().unwrap_or(0.0);
    }
    inj
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::load_case_str;

    fn three_gen() -> GridTopology {
        load_case_str(
            r#"{
            "schema": "grid-isle/1",
            "buses": [{"id": 1}, {"id": 2}],
            "lines": [{"id": "L", "from": 1, "to": 2, "p_min_mw": -500, "p_max_mw": 500}],
            "generators": [
              {"id": "A", "bus": 1, "p_min_mw": 5, "p_max_mw": 40, "p0_mw": 10,
               "chi_per_mw": 0.0, "cost_segments": [{"mw_upto": 5, "usd_per_mwh": 30}, {"mw_upto": 20, "usd_per_mwh": 12},
                                 {"mw_upto": 40, "usd_per_mwh": 25}]},
              {"id": "B", "bus": 2, "p_min_mw": 0, "p_max_mw": 30, "p0_mw": 10,
               "chi_per_mw": 0.0, "cost_segments": [{"mw_upto": 10, "usd_per_mwh": 15}, {"mw_upto": 30, "usd_per_mwh": 22}]},
              {"id": "C", "bus": 2, "p_min_mw": 2, "p_max_mw": 25, "p0_mw": 10,
               "chi_per_mw": 0.0, "cost_segments": [{"mw_upto": 25, "usd_per_mwh": 18}]}
            ],
            "loads": [{"id": "D", "bus": 2, "p_mw": 61.3, "critical_fraction": 0.2}]
        }"#,
        )
        .unwrap()
    }

    #[test]
    fn single_generator_single_load() {
        let topo = grid::tests::two_bus();
        let d = nominal_dispatch(&topo).unwrap();
        assert!((d.cost_usd - 200.0).abs() < 1e-9);
        assert!((d.output("G1").unwrap() - 10.0).abs() < 1e-9);
        assert!((d.flows["L1"] - 10.0).abs() < 1e-9);
    }

    #[test]
    fn three_generators_match_grid_search() {
        let topo = three_gen();
        let d = nominal_dispatch(&topo).unwrap();
        let demand = 61.3;
        let (ga, gb, gc) = (&topo.generators[0], &topo.generators[1], &topo.generators[2]);
        let mut best = f64::INFINITY;
        // outputs on a 0.1 MW lattice: a = 5.0 + i/10, b = j/10, c = demand - a - b
        for i in 0..=350 {
            let a = 5.0 + i as f64 / 10.0;
            for j in 0..=300 {
                let b = j as f64 / 10.0;
                let c = demand - a - b;
                if c < gc.p_min - 1e-9 || c > gc.p_max + 1e-9 {
                    continue;
                }
                best = best.min(ga.cost.cost_at(a) + gb.cost.cost_at(b) + gc.cost.cost_at(c));
            }
        }
        assert!((d.cost_usd - best).abs() < 1e-6, "lp {} grid {}", d.cost_usd, best);
    }

    #[test]
    fn deficit_sheds_proportionally_above_floors() {
        let text = r#"{
            "schema": "grid-isle/1", "buses": [{"id": 1}], "lines": [],
            "generators": [{"id": "G", "bus": 1, "p_min_mw": 0, "p_max_mw": 60, "p0_mw": 0,
                            "chi_per_mw": 0.0, "cost_segments": [{"mw_upto": 60, "usd_per_mwh": 10}]}],
            "loads": [{"id": "a", "bus": 1, "p_mw": 50, "critical_fraction": 0.8},
                      {"id": "b", "bus": 1, "p_mw": 50, "critical_fraction": 0.0}]
        }"#;
        let topo = load_case_str(text).unwrap();
        let b = balance_check(&topo, &topo.bus_ids()).unwrap();
        assert!((b.served_mw - 60.0).abs() < 1e-9);
        assert!((b.shed_fraction - 0.4).abs() < 1e-9);
        // flexible parts: 10 and 50, alpha = 20/60
        assert!((b.served["a"] - (40.0 + 10.0 / 3.0)).abs() < 1e-9);
        assert!((b.served["b"] - 50.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn fully_critical_deficit_is_error() {
        let text = r#"{
            "schema": "grid-isle/1", "buses": [{"id": 1}], "lines": [],
            "generators": [{"id": "G", "bus": 1, "p_min_mw": 0, "p_max_mw": 10, "p0_mw": 0,
                            "chi_per_mw": 0.0, "cost_segments": [{"mw_upto": 10, "usd_per_mwh": 10}]}],
            "loads": [{"id": "a", "bus": 1, "p_mw": 20, "critical_fraction": 1.0}]
        }"#;
        let topo = load_case_str(text).unwrap();
        assert!(matches!(balance_check(&topo, &topo.bus_ids()), Err(DispatchError::CriticalityInfeasible { .. })));
    }

    #[test]
    fn below_minimum_suggests_decommit() {
        let text = r#"{
            "schema": "grid-isle/1", "buses": [{"id": 1}], "lines": [],
            "generators": [{"id": "G", "bus": 1, "p_min_mw": 30, "p_max_mw": 60, "p0_mw": 30,
                            "chi_per_mw": 0.0, "cost_segments": [{"mw_upto": 60, "usd_per_mwh": 10}]}],
            "loads": [{"id": "a", "bus": 1, "p_mw": 20, "critical_fraction": 0.0}]
        }"#;
        let topo = load_case_str(text).unwrap();
        let err = economic_dispatch(&topo, &topo.bus_ids()).unwrap_err();
        assert!(err.to_string().contains("decommit"));
    }

    #[test]
    fn line_limit_forces_expensive_unit() {
        let mut topo = three_gen();
        topo.lines[0].p_min = -5.0;
        topo.lines[0].p_max = 5.0;
        let d = nominal_dispatch(&topo).unwrap();
        assert!(d.output("A").unwrap() <= 10.0 + 1e-9);
        assert!(d.flows["L"].abs() <= 5.0 + 1e-9);
    }

    #[test]
    fn identical_reports_have_zero_delta() {
        let topo = three_gen();
        let r = island_report(&topo, "all", &topo.bus_ids(), vec![]).unwrap();
        let c = compare_to_nominal(&r, std::slice::from_ref(&r));
        assert_eq!(c.delta_usd, 0.0);
        assert_eq!(c.percent, 0.0);
    }

    #[test]
    fn dc_flow_splits_by_reactance() {
        let text = r#"{
            "schema": "grid-isle/1", "buses": [{"id": 1}, {"id": 2}, {"id": 3}],
            "lines": [{"id": "a", "from": 1, "to": 2, "p_min_mw": -99, "p_max_mw": 99, "reactance_pu": 0.1},
                      {"id": "b", "from": 1, "to": 3, "p_min_mw": -99, "p_max_mw": 99, "reactance_pu": 0.1},
                      {"id": "c", "from": 3, "to": 2, "p_min_mw": -99, "p_max_mw": 99, "reactance_pu": 0.1}],
            "generators": [], "loads": []
        }"#;
        let topo = load_case_str(text).unwrap();
        let inj = BTreeMap::from([(1, 30.0), (2, -30.0), (3, 0.0)]);
        let f = dc_power_flow(&topo, &inj);
        assert!((f["a"] - 20.0).abs() < 1e-9);
        assert!((f["b"] - 10.0).abs() < 1e-9);
        assert!((f["c"] - 10.0).abs() < 1e-9);
    }
}
