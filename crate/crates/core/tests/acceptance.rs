//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! Failing criteria are reported, not asserted, so the suite stays usable as
//! a scoreboard; the target only aborts if an evaluation cannot run at all.

use std::collections::BTreeSet;
use std::time::Instant;

use grid_isle::detection::{self, DetectError, ModelBundle, VoteConfig};
use grid_isle::dispatch;
use grid_isle::dynamics::Scenario;
use grid_isle::grid::{self, BusId, GridTopology, Partition};
use grid_isle::islanding::{self, IslandingConfig, IslandingError, MilpInstance, SolveOptions};
use grid_isle::pipeline::{self, RunConfig, RunReport, TrainConfig};
use grid_isle::skr;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const NOMINAL_USD: f64 = 36418.68;
const STEP1_USD: f64 = 36436.05;
const ISLAND2_USD: f64 = 26459.37;

struct Line {
    id: usize,
    pass: bool,
    detail: String,
}

fn report(lines: &[Line]) {
    println!();
    for l in lines {
        println!("criterion {}: {} — {}", l.id, if l.pass { "PASS" } else { "FAIL" }, l.detail);
    }
    let passed = lines.iter().filter(|l| l.pass).count();
    println!("acceptance: {passed}/{} criteria pass", lines.len());
}

fn buses(text: &str) -> BTreeSet<BusId> {
    grid::parse_bus_list(text).expect("literal bus list")
}

fn lines_set(ids: &[&str]) -> BTreeSet<String> {
    ids.iter().map(|s| s.to_string()).collect()
}

/// Cut sets as corridors: parallel circuits `19-20/1`, `19-20/2` count as
/// the one entry `19-20`, which is how the tables list them.
fn corridors<'a>(ids: impl IntoIterator<Item = &'a String>) -> BTreeSet<String> {
    ids.into_iter().map(|id| id.split('/').next().unwrap_or(id).to_string()).collect()
}

fn closed_except(topo: &GridTopology, open: &BTreeSet<String>) -> BTreeSet<String> {
    topo.lines.iter().map(|l| l.id.clone()).filter(|id| !open.contains(id)).collect()
}

/// Optimum of `inst` with the bus binaries pinned to a given healthy set.
fn pinned_objective(inst: &MilpInstance, healthy: &BTreeSet<BusId>) -> Result<f64, IslandingError> {
    let mut pinned = inst.clone();
    for (k, b) in inst.bus_ids.iter().enumerate() {
        let v = if healthy.contains(b) { 1.0 } else { 0.0 };
        pinned.lp.col_lower[inst.h[k]] = v;
        pinned.lp.col_upper[inst.h[k]] = v;
    }
    islanding::solve(&pinned, &SolveOptions::default()).map(|s| s.objective)
}

// ---------------------------------------------------------------------------

fn criterion_1(max_violation: &mut f64) -> Line {
    let topo = grid::rts24();
    let want_unhealthy = buses("1,2,4-13,20,23");
    let want_healthy = buses("3,14-19,21,22,24");
    let want_cut = lines_set(&["1-3", "3-9", "11-14", "19-20"]);

    let started = Instant::now();
    let inst = islanding::build_milp(&topo, &BTreeSet::from([4]), &IslandingConfig::default()).expect("builds");
    let sol = islanding::solve(&inst, &SolveOptions::default()).expect("solves");
    let secs = started.elapsed().as_secs_f64();
    *max_violation = max_violation.max(islanding::validate_solution(&inst, &sol).values().copied().fold(0.0, f64::max));

    let cut = corridors(&sol.open_lines());
    let partition_ok = sol.unhealthy() == want_unhealthy && sol.healthy() == want_healthy && cut == want_cut;

    let reference = Partition::from_unhealthy(&topo, want_unhealthy.clone()).expect("valid partition");
    let caps = grid::partition_capacities(&topo, &reference);
    let caps_ok = caps.healthy.p_gen_max_mw == 1470.0
        && caps.healthy.p_dem_mw == 1305.0
        && caps.unhealthy.p_gen_max_mw == 1605.0
        && caps.unhealthy.p_dem_mw == 1545.0;
    let ref_cut = corridors(&grid::cut_set(&topo, &reference));
    let ref_j = pinned_objective(&inst, &want_healthy);

    Line {
        id: 1,
        pass: partition_ok && caps_ok && ref_cut == want_cut && secs <= 60.0,
        detail: format!(
            "solver unhealthy {:?}, cut {:?}, J* = {:.4}, {:.2} s; table partition: capacities {}/{} MW gen, {}/{} MW dem ({}), cut {:?} ({}), J with its buses pinned = {}",
            sol.unhealthy(),
            cut,
            sol.objective,
            secs,
            caps.healthy.p_gen_max_mw,
            caps.unhealthy.p_gen_max_mw,
            caps.healthy.p_dem_mw,
            caps.unhealthy.p_dem_mw,
            if caps_ok { "exact" } else { "mismatch" },
            ref_cut,
            if ref_cut == want_cut { "matches table" } else { "differs from table" },
            match ref_j {
                Ok(j) => format!("{j:.4}"),
                Err(e) => format!("error: {e}"),
            }
        ),
    }
}

fn criterion_2(max_violation: &mut f64) -> Line {
    let topo = grid::rts24();
    let nominal = dispatch::nominal_dispatch(&topo).expect("nominal dispatch").cost_usd;
    let step1 = pipeline::islanding_step(1, 0.0, &topo, 4, &IslandingConfig::default(), &SolveOptions::default()).expect("step 1");
    *max_violation = max_violation.max(step1.max_violation);
    let unhealthy = step1.islands.iter().find(|i| i.contains_anomaly).expect("anomaly island");
    let net = topo.with_lines(&closed_except(&topo, &step1.cut_lines.iter().cloned().collect())).subnetwork(&unhealthy.buses);
    let island2 = unhealthy.report.as_ref().map_or(f64::NAN, |r| r.cost_usd);
    let step2 = pipeline::islanding_step(2, 0.0, &net, 4, &IslandingConfig::default(), &SolveOptions::default());
    let step2_cost = step2.as_ref().map_or(f64::NAN, |s| s.aggregate_cost_usd);
    if let Ok(s) = &step2 {
        *max_violation = max_violation.max(s.max_violation);
    }

    // the same quantities on the table's partitions, for reference
    let ref_u = buses("1,2,4-13,20,23");
    let ref_cut: BTreeSet<String> = grid::cut_set(&topo, &Partition::from_unhealthy(&topo, ref_u.clone()).unwrap()).into_iter().collect();
    let ref_net = topo.with_lines(&closed_except(&topo, &ref_cut));
    let cost = |t: &GridTopology, b: &BTreeSet<BusId>| dispatch::island_report(t, "", b, Vec::new()).map_or(f64::NAN, |r| r.cost_usd);
    let ref_step1 = cost(&ref_net, &ref_u) + cost(&ref_net, &topo.bus_ids().difference(&ref_u).copied().collect());
    let sub = ref_net.subnetwork(&ref_u);
    let a = buses("2,4,7-9");
    let b = buses("1,5,6,10-13,20,23");
    let sub_cut: BTreeSet<String> = grid::cut_set(&sub, &Partition::from_unhealthy(&sub, a.clone()).unwrap()).into_iter().collect();
    let sub_net = sub.with_lines(&closed_except(&sub, &sub_cut));
    let ref_step2 = cost(&sub_net, &a) + cost(&sub_net, &b);

    let nominal_ok = (nominal - NOMINAL_USD).abs() <= 0.05 * NOMINAL_USD;
    let step1_ok = (step1.aggregate_cost_usd - STEP1_USD).abs() <= 0.05 * STEP1_USD && step1.aggregate_cost_usd >= nominal;
    let step2_ok = step2_cost >= 1.2 * ISLAND2_USD;
    Line {
        id: 2,
        pass: nominal_ok && step1_ok && step2_ok,
        detail: format!(
            "nominal ${nominal:.2} ({:+.2}% vs table, {}); step-1 aggregate ${:.2} ({:+.2}%, {}); step-2 aggregate ${step2_cost:.2} vs required ≥ ${:.2} ({}; island 2 itself costs ${island2:.2}); table partitions: step 1 ${ref_step1:.2}, 2a+2b ${ref_step2:.2}",
            100.0 * (nominal / NOMINAL_USD - 1.0),
            if nominal_ok { "ok" } else { "out of ±5%" },
            step1.aggregate_cost_usd,
            100.0 * (step1.aggregate_cost_usd / STEP1_USD - 1.0),
            if step1_ok { "ok" } else { "out of ±5% or below nominal" },
            1.2 * ISLAND2_USD,
            if step2_ok { "ok" } else { "short" },
        ),
    }
}

fn criterion_3(max_violation: &mut f64) -> Line {
    // re-islanding of the table's step-1 unhealthy island, so this criterion
    // does not inherit any step-1 difference
    let topo = grid::rts24();
    let ref_u = buses("1,2,4-13,20,23");
    let cut: BTreeSet<String> = grid::cut_set(&topo, &Partition::from_unhealthy(&topo, ref_u.clone()).unwrap()).into_iter().collect();
    let net = topo.with_lines(&closed_except(&topo, &cut)).subnetwork(&ref_u);
    let want_a = buses("2,4,7-9");
    let want_b = buses("1,5,6,10-13,20,23");
    let want_cut = lines_set(&["1-2", "2-6", "8-10", "9-11", "9-12"]);

    let step = pipeline::islanding_step(2, 0.0, &net, 4, &IslandingConfig::default(), &SolveOptions::default()).expect("step 2");
    *max_violation = max_violation.max(step.max_violation);
    let got_cut = corridors(&step.cut_lines);
    let island_a = step.islands.iter().find(|i| i.contains_anomaly).expect("anomaly island");
    let others: BTreeSet<BusId> = step.islands.iter().filter(|i| !i.contains_anomaly).flat_map(|i| i.buses.iter().copied()).collect();
    let partition_ok = island_a.buses == want_a && others == want_b && got_cut == want_cut;

    // shedding on the table's 2a/2b split
    let sub_cut: BTreeSet<String> = grid::cut_set(&net, &Partition::from_unhealthy(&net, want_a.clone()).unwrap()).into_iter().collect();
    let split = net.with_lines(&closed_except(&net, &sub_cut));
    let shed_a = dispatch::island_report(&split, "2a", &want_a, Vec::new()).map(|r| r.shed_fraction);
    let shed_b = dispatch::island_report(&split, "2b", &want_b, Vec::new()).map(|r| r.shed_fraction);
    let shed_ok = matches!(shed_a, Ok(s) if s >= 0.218 - 1e-9) && matches!(shed_b, Ok(s) if s <= 1e-9);
    let pct = |r: &Result<f64, _>| r.as_ref().map_or("error".to_string(), |s| format!("{:.2}%", 100.0 * s));

    Line {
        id: 3,
        pass: partition_ok && shed_ok,
        detail: format!(
            "solver 2a {:?}, rest {:?}, cut {:?} ({}); table split shed 2a {} (≥ 21.8% required), 2b {}",
            island_a.buses,
            others,
            got_cut,
            if partition_ok { "matches" } else { "differs from table" },
            pct(&shed_a),
            pct(&shed_b),
        ),
    }
}

// ---------------------------------------------------------------------------

fn random_case(rng: &mut ChaCha8Rng) -> (GridTopology, BusId) {
    let n: usize = rng.gen_range(3..=6);
    let mut edges: Vec<(usize, usize)> = (2..=n).map(|k| (rng.gen_range(1..k), k)).collect();
    for _ in 0..rng.gen_range(0..=2) {
        let (a, b) = (rng.gen_range(1..=n), rng.gen_range(1..=n));
        let e = (a.min(b), a.max(b));
        if a != b && !edges.contains(&e) {
            edges.push(e);
        }
    }
    let lines: Vec<serde_json::Value> = edges
        .iter()
        .enumerate()
        .map(|(k, (a, b))| {
            let cap: f64 = rng.gen_range(20.0..100.0_f64).round();
            serde_json::json!({"id": format!("L{k}"), "from": a, "to": b, "p_min_mw": -cap, "p_max_mw": cap,
                               "reactance_pu": rng.gen_range(0.02..0.2)})
        })
        .collect();
    let gens: Vec<serde_json::Value> = (0..rng.gen_range(1..=2))
        .map(|k| {
            let p_min: f64 = rng.gen_range(0.0..10.0_f64).round();
            let p_max: f64 = rng.gen_range(30.0..80.0_f64).round();
            let c1: f64 = rng.gen_range(10.0..30.0_f64).round();
            serde_json::json!({"id": format!("G{k}"), "bus": rng.gen_range(1..=n), "p_min_mw": p_min, "p_max_mw": p_max,
                               "p0_mw": rng.gen_range(p_min..p_max).round(), "chi_per_mw": rng.gen_range(0.001..0.01),
                               "cost_segments": [{"mw_upto": p_max / 2.0, "usd_per_mwh": c1}, {"mw_upto": p_max, "usd_per_mwh": c1 + 5.0}]})
        })
        .collect();
    let loads: Vec<serde_json::Value> = (0..rng.gen_range(1..=3))
        .map(|k| {
            serde_json::json!({"id": format!("D{k}"), "bus": rng.gen_range(1..=n), "p_mw": rng.gen_range(10.0..40.0_f64).round(),
                               "critical_fraction": rng.gen_range(0.0..0.5_f64)})
        })
        .collect();
    let doc = serde_json::json!({
        "schema": "grid-isle/1",
        "buses": (1..=n).map(|b| serde_json::json!({"id": b})).collect::<Vec<_>>(),
        "lines": lines, "generators": gens, "loads": loads,
    });
    let topo = grid::load_case_str(&doc.to_string()).expect("random case is valid");
    let anomalous = rng.gen_range(1..=n) as BusId;
    (topo, anomalous)
}

/// Best objective over every assignment of the binaries, each completed by
/// an LP with all binaries fixed.
fn enumerate(inst: &MilpInstance) -> Option<f64> {
    let cols: Vec<usize> = inst.h.iter().chain(&inst.w).chain(&inst.phi).copied().filter(|&j| inst.lp.col_lower[j] < inst.lp.col_upper[j]).collect();
    let mut best: Option<f64> = None;
    let mut lp = inst.lp.clone();
    for mask in 0u32..(1 << cols.len()) {
        for (bit, &j) in cols.iter().enumerate() {
            let v = f64::from((mask >> bit) & 1);
            lp.col_lower[j] = v;
            lp.col_upper[j] = v;
        }
        if let Ok(sol) = lp.solve() {
            let j = inst.objective(&sol.x);
            best = Some(best.map_or(j, |b: f64| b.max(j)));
        }
    }
    best
}

fn criterion_4(max_violation: &mut f64) -> Line {
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce97);
    let (mut compared, mut matched, mut infeasible_both, mut worst) = (0, 0, 0, 0.0_f64);
    let mut bnb_s = 0.0;
    let mut mismatches = Vec::new();
    for k in 0..24 {
        let (topo, bus) = random_case(&mut rng);
        let inst = islanding::build_milp(&topo, &BTreeSet::from([bus]), &IslandingConfig::default()).expect("builds");
        let started = Instant::now();
        let bnb = islanding::solve(&inst, &SolveOptions::default());
        bnb_s += started.elapsed().as_secs_f64();
        let oracle = enumerate(&inst);
        compared += 1;
        match (&bnb, oracle) {
            (Ok(sol), Some(j)) => {
                *max_violation = max_violation.max(islanding::validate_solution(&inst, sol).values().copied().fold(0.0, f64::max));
                let d = (sol.objective - j).abs();
                worst = worst.max(d);
                if d <= 1e-6 {
                    matched += 1;
                } else {
                    mismatches.push(format!("#{k}: B&B {:.9} vs {:.9}", sol.objective, j));
                }
            }
            (Err(IslandingError::Infeasible { .. }), None) => {
                matched += 1;
                infeasible_both += 1;
            }
            (b, o) => mismatches.push(format!("#{k}: B&B {:?} vs enumeration {o:?}", b.as_ref().map(|s| s.objective))),
        }
    }
    Line {
        id: 4,
        pass: compared >= 20 && matched == compared && bnb_s <= 5.0,
        detail: format!(
            "{matched}/{compared} instances agree ({infeasible_both} infeasible in both), worst |ΔJ| = {worst:.2e}, B&B total {bnb_s:.3} s{}",
            if mismatches.is_empty() { String::new() } else { format!("; mismatches: {}", mismatches.join(", ")) }
        ),
    }
}

// ---------------------------------------------------------------------------

fn scenario(name: &str) -> Scenario {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data/scenarios").join(format!("{name}.json"));
    serde_json::from_str(&std::fs::read_to_string(path).expect("scenario file")).expect("scenario parses")
}

fn run(bundle: &ModelBundle, name: &str) -> RunReport {
    let config = RunConfig::new(grid::rts24(), name, scenario(name), bundle.clone());
    pipeline::run(&config).expect("pipeline runs")
}

fn criterion_5(runs: &[(&str, u8, RunReport)]) -> Line {
    let mut correct = 0;
    let mut parts = Vec::new();
    let (mut rounds, mut ms) = (0usize, 0.0);
    for (name, want, r) in runs {
        let got = r.scenario_decision;
        if got == Some(*want) {
            correct += 1;
        }
        parts.push(format!("{name} → {}", got.map_or("none".into(), |d| d.to_string())));
        rounds += r.timing.rounds;
        ms += r.timing.mean_round_ms * r.timing.rounds as f64;
    }
    let forced = runs.iter().find(|(n, _, _)| *n == "load_alteration").is_some_and(|(_, _, r)| r.alarms.iter().any(|a| a.forced && (a.t - 0.77).abs() < 1e-9));
    let mean_ms = if rounds > 0 { ms / rounds as f64 } else { 0.0 };
    Line {
        id: 5,
        pass: correct == runs.len() && forced && mean_ms <= 22.0,
        detail: format!(
            "{correct}/{} correct ({}); forced alarm at 0.77 s {}; mean round {mean_ms:.4} ms over {rounds} rounds",
            runs.len(),
            parts.join(", "),
            if forced { "present" } else { "missing" }
        ),
    }
}

fn criterion_6() -> Line {
    // (votes, NR, expected label, rounds used, score)
    let traces: &[(&str, usize, u8, usize, usize)] = &[
        ("111 111 111", 5, 1, 3, 9),
        ("000 000 000", 5, 0, 3, 0),
        ("111 111 111 000 000", 5, 1, 3, 9),
        ("000 000 000 111 111", 5, 0, 3, 0),
        ("111 111 110 111 111", 5, 1, 5, 14),
        ("110 111 111 000 000", 5, 1, 5, 8),
        ("110 101 011 100 010", 5, 1, 5, 8),
        ("100 010 001 000 000", 5, 0, 5, 3),
        ("100 000 000 000 000", 5, 0, 5, 1),
        ("001 000 000 111 111", 5, 0, 5, 7),
        ("011 101 110 111 111", 5, 1, 5, 12),
        ("111 000 110 001", 4, 1, 4, 6),
        ("111 111 111 111 111 111 111", 7, 1, 3, 9),
    ];
    let mut ok = 0;
    let mut bad = Vec::new();
    for (k, &(text, rounds, label, used, score)) in traces.iter().enumerate() {
        let votes: Vec<Vec<u8>> = text.split(' ').map(|g| g.bytes().map(|c| c - b'0').collect()).collect();
        let config = VoteConfig { rounds, ..VoteConfig::default() };
        match detection::decide(votes.iter(), &config) {
            Ok(d) => {
                let cred = score as f64 / (used * 3) as f64;
                let trace_ok = d.trace.len() == used
                    && d.trace.iter().enumerate().all(|(i, c)| {
                        let s: usize = votes[..=i].iter().flatten().map(|&v| v as usize).sum();
                        (c - s as f64 / ((i + 1) * 3) as f64).abs() < 1e-12
                    });
                if d.label == label && d.rounds_used == used && d.score == score && (d.credibility - cred).abs() < 1e-12 && trace_ok {
                    ok += 1;
                } else {
                    bad.push(format!("#{k} `{text}`: got label {} after {} rounds, credibility {:.4}", d.label, d.rounds_used, d.credibility));
                }
            }
            Err(e) => bad.push(format!("#{k} `{text}`: {e}")),
        }
    }
    // a stream that ends early is an error, not a guess
    let short = matches!(detection::decide(["110", "100", "011", "101"].iter().map(|s| s.bytes().map(|c| c - b'0').collect::<Vec<u8>>()), &VoteConfig::default()), Err(DetectError::StreamExhausted { .. }));
    Line {
        id: 6,
        pass: ok == traces.len() && traces.len() >= 10 && short,
        detail: format!(
            "{ok}/{} hand traces agree; exhausted stream {}{}",
            traces.len(),
            if short { "rejected" } else { "NOT rejected" },
            if bad.is_empty() { String::new() } else { format!("; {}", bad.join("; ")) }
        ),
    }
}

fn criterion_7(nominal: &RunReport, attack: &RunReport) -> Line {
    let distinct: BTreeSet<(u64, usize)> = attack.sessions.iter().map(|s| (s.alarm.t.to_bits(), s.alarm.source)).collect();
    let one_each = attack.sessions.len() == attack.alarms.len() && distinct.len() == attack.alarms.len();
    Line {
        id: 7,
        pass: nominal.classifier_invocations == 0 && nominal.alarms.is_empty() && one_each && !attack.alarms.is_empty(),
        detail: format!(
            "nominal: {} alarms, {} classifier invocations; attack: {} alarms, {} sessions ({} distinct)",
            nominal.alarms.len(),
            nominal.classifier_invocations,
            attack.alarms.len(),
            attack.sessions.len(),
            distinct.len()
        ),
    }
}

fn criterion_8(max_violation: f64) -> Line {
    let r = skr::residual(&[3.0, 4.0], &[0.0, 0.0], &DMatrix::identity(2, 2)).expect("dimensions agree");
    let r2 = skr::residual(&[4.0, 6.0], &[1.0, 2.0], &DMatrix::identity(2, 2)).expect("dimensions agree");
    let residual_ok = r == 5.0 && r2 == 5.0;
    let monotone = (1..=12).all(|dof| {
        let qs: Vec<f64> = [0.5, 0.9, 0.95, 0.99, 0.999].iter().map(|&c| skr::chi2_quantile(c, dof)).collect();
        qs.windows(2).all(|w| w[0] < w[1])
    });
    let topo = grid::rts24();
    let additive = ["1,2,4-13,20,23", "2,4", "4", "1-12", "1-24"].iter().all(|u| {
        let part = Partition::from_unhealthy(&topo, buses(u)).unwrap();
        let s = grid::partition_capacities(&topo, &part);
        s.healthy.p_gen_max_mw + s.unhealthy.p_gen_max_mw == 3075.0 && s.healthy.p_dem_mw + s.unhealthy.p_dem_mw == 2850.0
    });
    Line {
        id: 8,
        pass: residual_ok && monotone && max_violation <= 1e-6 && additive,
        detail: format!(
            "residual 3-4-5 = {r} {}; χ² monotone {}; max MILP violation over accepted solutions {max_violation:.2e}; capacity additivity 3075/2850 {}",
            if residual_ok { "exact" } else { "inexact" },
            if monotone { "yes" } else { "no" },
            if additive { "exact" } else { "broken" }
        ),
    }
}

fn main() {
    let mut violation = 0.0;
    let mut lines = vec![criterion_1(&mut violation), criterion_2(&mut violation), criterion_3(&mut violation), criterion_4(&mut violation)];

    let bundle = pipeline::train_command(&TrainConfig::default()).expect("default training").0;
    let runs: Vec<(&str, u8, RunReport)> = [("three_phase_fault_pcc", 1), ("control_input_attack", 1), ("line_to_line_fault", 1), ("load_alteration", 0)]
        .into_iter()
        .map(|(n, want)| (n, want, run(&bundle, n)))
        .collect();
    for (_, _, r) in &runs {
        violation = r.steps.iter().map(|s| s.max_violation).fold(violation, f64::max);
    }
    lines.push(criterion_5(&runs));
    lines.push(criterion_6());
    let nominal = run(&bundle, "nominal");
    lines.push(criterion_7(&nominal, &runs[1].2));
    lines.push(criterion_8(violation));
    report(&lines);
}
