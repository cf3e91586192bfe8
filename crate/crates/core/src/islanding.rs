//! Controlled-islanding MILP: instance construction, branch-and-bound,
//! solution validation and island extraction.
//!
//! Binary `h_b` marks bus `b` healthy (1) or unhealthy (0), `w_l` closes line
//! `l`, `phi_g` keeps generator `g` online. The objective rewards served load
//! (fully on the healthy side, at weight `psi` on the unhealthy side) and
//! penalizes opened lines and tripped generators.

use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use web_time::Instant;

use crate::dispatch;
use crate::grid::{self, BusId, GridTopology};
use crate::lp::{Basis, LinearProgram, LpError, Simplex};

const INT_TOL: f64 = 1e-6;
/// Keep full tableaux on at most this many open nodes; the rest re-factor
/// from a stored basis.
const TABLEAU_CACHE: usize = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IslandingError {
    #[error("anomalous bus {0} is not in the topology")]
    UnknownBus(BusId),
    #[error("instance is infeasible; conflicting constraints: {}", constraints.join(", "))]
    Infeasible { constraints: Vec<String> },
    #[error("time limit reached before any feasible assignment was found")]
    TimeoutWithoutIncumbent,
    #[error("LP relaxation failed: {0}")]
    Lp(LpError),
    #[error("island mixes healthy and unhealthy buses: {0:?}")]
    MixedIsland(BTreeSet<BusId>),
}

/// Equation families of the formulation, used for naming and validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Family {
    /// Generator output window around the pre-event point (Eq. 8).
    Margin,
    /// Served fraction within `[theta, 1]` (Eq. 9).
    Service,
    /// Per-bus real-power balance (Eq. 10).
    Balance,
    /// Flow limits scaled by line status (Eq. 11).
    LineLimit,
    /// Uncertain lines open unless both ends are unhealthy (Eq. 14).
    Uncertain,
    /// Lines across the healthy/unhealthy cut are open (Eq. 15).
    Cut,
    /// Anomalous buses are unhealthy.
    Anchor,
    /// Exact linearization of `z = beta * h`.
    Product,
    /// Binary variables take 0/1 values.
    Integrality,
}

impl Family {
    pub fn label(self) -> &'static str {
        match self {
            Family::Margin => "eq8_margin",
            Family::Service => "eq9_service",
            Family::Balance => "eq10_balance",
            Family::LineLimit => "eq11_line_limit",
            Family::Uncertain => "eq14_uncertain",
            Family::Cut => "eq15_cut",
            Family::Anchor => "anchor",
            Family::Product => "product",
            Family::Integrality => "integrality",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarKind {
    Bus,
    Line,
    Gen,
    Output,
    Flow,
    Beta,
    Product,
}

impl VarKind {
    fn is_binary(self) -> bool {
        matches!(self, VarKind::Bus | VarKind::Line | VarKind::Gen)
    }

    /// Branching tie-break rank: h before w before phi.
    fn rank(self) -> u8 {
        match self {
            VarKind::Bus => 0,
            VarKind::Line => 1,
            VarKind::Gen => 2,
            _ => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub kind: VarKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub name: String,
    pub family: Family,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IslandingConfig {
    /// Objective weights `(lambda1, lambda2, lambda3)`.
    pub lambda: [f64; 3],
    /// Per-load overrides of `psi`.
    pub psi: BTreeMap<String, f64>,
    /// Explicit uncertain-line set; replaces the default rule when given.
    pub uncertain: Option<BTreeSet<String>>,
    /// Loading ratio at which a line joins the uncertain set by default.
    pub congestion_ratio: f64,
}

impl Default for IslandingConfig {
    fn default() -> Self {
        IslandingConfig { lambda: [1.0, 1.0, 1.0], psi: BTreeMap::new(), uncertain: None, congestion_ratio: 0.95 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MilpInstance {
    /// Relaxation in minimization form: `min -J + constant`.
    pub lp: LinearProgram,
    pub vars: Vec<Variable>,
    pub constraints: Vec<Constraint>,
    pub lambda: [f64; 3],
    pub anomalous: BTreeSet<BusId>,
    pub uncertain: BTreeSet<String>,
    /// `J = -(lp objective) - objective_offset`.
    pub objective_offset: f64,
    pub bus_ids: Vec<BusId>,
    pub line_ids: Vec<String>,
    pub gen_ids: Vec<String>,
    pub load_ids: Vec<String>,
    pub h: Vec<usize>,
    pub w: Vec<usize>,
    pub phi: Vec<usize>,
    pub p: Vec<usize>,
    pub flow: Vec<usize>,
    pub beta: Vec<usize>,
    pub z: Vec<usize>,
    /// `h` column of each load's bus.
    pub load_h: Vec<usize>,
}

impl MilpInstance {
    pub fn num_binaries(&self) -> usize {
        self.vars.iter().filter(|v| v.kind.is_binary()).count()
    }

    /// Objective `J` of a full column vector.
    pub fn objective(&self, x: &[f64]) -> f64 {
        -x.iter().zip(&self.lp.cost).map(|(a, c)| a * c).sum::<f64>() - self.objective_offset
    }

    fn binary_cols(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.vars.len()).filter(|&j| self.vars[j].kind.is_binary())
    }

    /// LP-style text listing of the instance.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let name = |j: usize| sanitize(&self.vars[j].name);
        let term = |out: &mut String, first: bool, coef: f64, j: usize| {
            let sign = if coef < 0.0 { "-" } else if first { "" } else { "+" };
            let mag = coef.abs();
            if (mag - 1.0).abs() < 1e-15 {
                let _ = write!(out, " {sign} {}", name(j));
            } else {
                let _ = write!(out, " {sign} {} {}", fmt_num(mag), name(j));
            }
        };
        let _ = writeln!(out, "\\ controlled islanding instance");
        let _ = writeln!(
            out,
            "\\ lambda = ({}, {}, {}); anomalous buses {:?}; uncertain lines {:?}",
            self.lambda[0], self.lambda[1], self.lambda[2], self.anomalous, self.uncertain
        );
        let _ = writeln!(out, "\\ objective constant {}", fmt_num(-self.objective_offset));
        let _ = writeln!(out, "Maximize");
        let _ = write!(out, " J:");
        let mut first = true;
        for (j, &c) in self.lp.cost.iter().enumerate() {
            if c != 0.0 {
                term(&mut out, first, -c, j);
                first = false;
            }
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "Subject To");
        for (row, con) in self.lp.rows.iter().zip(&self.constraints) {
            let mut body = String::new();
            for (k, &(j, a)) in row.coeffs.iter().enumerate() {
                term(&mut body, k == 0, a, j);
            }
            let label = sanitize(&con.name);
            if row.lower == row.upper {
                let _ = writeln!(out, " {label}:{body} = {}", fmt_num(row.lower));
            } else {
                if row.lower.is_finite() {
                    let _ = writeln!(out, " {label}:{body} >= {}", fmt_num(row.lower));
                }
                if row.upper.is_finite() {
                    let suffix = if row.lower.is_finite() { "_u" } else { "" };
                    let _ = writeln!(out, " {label}{suffix}:{body} <= {}", fmt_num(row.upper));
                }
            }
        }
        let _ = writeln!(out, "Bounds");
        for j in 0..self.vars.len() {
            if self.vars[j].kind.is_binary() && self.lp.col_lower[j] == 0.0 && self.lp.col_upper[j] == 1.0 {
                continue;
            }
            let (lo, hi) = (self.lp.col_lower[j], self.lp.col_upper[j]);
            if lo == hi {
                let _ = writeln!(out, " {} = {}", name(j), fmt_num(lo));
            } else {
                let _ = writeln!(out, " {} <= {} <= {}", fmt_num(lo), name(j), fmt_num(hi));
            }
        }
        let _ = writeln!(out, "Binaries");
        for j in self.binary_cols() {
            let _ = writeln!(out, " {}", name(j));
        }
        let _ = writeln!(out, "End");
        out
    }
}

fn sanitize(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' }).collect()
}

fn fmt_num(v: f64) -> String {
    let r = (v * 1e9).round() / 1e9;
    if r == r.trunc() && r.abs() < 1e15 {
        format!("{}", r as i64)
    } else {
        format!("{r}")
    }
}

/// Default uncertain-line set: lines touching an anomalous bus, lines loaded
/// at or above `ratio` of their rating in the pre-event flow, and lines the
/// case flags as uncertain.
pub fn default_uncertain_lines(
    topo: &GridTopology,
    anomalous: &BTreeSet<BusId>,
    ratio: f64,
) -> BTreeSet<String> {
    let mut set: BTreeSet<String> = topo
        .lines
        .iter()
        .filter(|l| l.uncertain || anomalous.iter().any(|&b| l.touches(b)))
        .map(|l| l.id.clone())
        .collect();
    let flows = pre_event_flows(topo);
    for l in &topo.lines {
        if let Some(&f) = flows.get(&l.id) {
            let limit = if f >= 0.0 { l.p_max } else { -l.p_min };
            if limit > 0.0 && f.abs() >= ratio * limit - 1e-9 {
                set.insert(l.id.clone());
            }
        }
    }
    set
}

/// Pre-event line flows: DC power flow of the `p0` operating point when every
/// line carries a reactance, otherwise the nominal dispatch's transport flows.
pub fn pre_event_flows(topo: &GridTopology) -> BTreeMap<String, f64> {
    if !topo.lines.is_empty() && topo.lines.iter().all(|l| l.reactance_pu.is_some_and(|x| x > 0.0)) {
        let mut inj: BTreeMap<BusId, f64> = topo.bus_ids().into_iter().map(|b| (b, 0.0)).collect();
        for g in &topo.generators {
            *inj.get_mut(&g.bus).unwrap() += g.p0;
        }
        for d in &topo.loads {
            *inj.get_mut(&d.bus).unwrap() -= d.p;
        }
        // DC flow uses per-unit angles; scale injections to a 100 MVA base and back
        let pu: BTreeMap<BusId, f64> = inj.iter().map(|(&b, &v)| (b, v / 100.0)).collect();
        return dispatch::dc_power_flow(topo, &pu).into_iter().map(|(k, v)| (k, v * 100.0)).collect();
    }
    match dispatch::nominal_dispatch(topo) {
        Ok(d) => d.flows,
        Err(_) => BTreeMap::new(),
    }
}

pub fn build_milp(
    topo: &GridTopology,
    anomalous: &BTreeSet<BusId>,
    config: &IslandingConfig,
) -> Result<MilpInstance, IslandingError> {
    for &b in anomalous {
        if !topo.has_bus(b) {
            return Err(IslandingError::UnknownBus(b));
        }
    }
    let uncertain = match &config.uncertain {
        Some(set) => set.clone(),
        None => default_uncertain_lines(topo, anomalous, config.congestion_ratio),
    };
    let [l1, l2, l3] = config.lambda;
    let mut lp = LinearProgram::new();
    let mut vars = Vec::new();
    let mut constraints = Vec::new();
    let mut add_var = |lp: &mut LinearProgram, name: String, kind: VarKind, lo: f64, hi: f64, gain: f64| {
        vars.push(Variable { name, kind });
        lp.add_col(lo, hi, -gain)
    };

    let h: Vec<usize> = topo
        .buses
        .iter()
        .map(|b| {
            let hi = if anomalous.contains(&b.id) { 0.0 } else { 1.0 };
            add_var(&mut lp, format!("h_{}", b.id), VarKind::Bus, 0.0, hi, 0.0)
        })
        .collect();
    let mut offset = 0.0;
    let w: Vec<usize> = topo
        .lines
        .iter()
        .map(|l| {
            let gain = if uncertain.contains(&l.id) { 0.0 } else { l2 * l.omega };
            offset += gain;
            add_var(&mut lp, format!("w_{}", l.id), VarKind::Line, 0.0, 1.0, gain)
        })
        .collect();
    let phi: Vec<usize> = topo
        .generators
        .iter()
        .map(|g| {
            offset += l3 * g.omega;
            add_var(&mut lp, format!("phi_{}", g.id), VarKind::Gen, 0.0, 1.0, l3 * g.omega)
        })
        .collect();
    let p: Vec<usize> = topo
        .generators
        .iter()
        .map(|g| {
            let (_, hi) = g.margin_bounds();
            add_var(&mut lp, format!("p_{}", g.id), VarKind::Output, 0.0, hi.max(0.0), 0.0)
        })
        .collect();
    let flow: Vec<usize> = topo
        .lines
        .iter()
        .map(|l| add_var(&mut lp, format!("f_{}", l.id), VarKind::Flow, l.p_min, l.p_max, 0.0))
        .collect();
    let psi_of = |d: &grid::Load| config.psi.get(&d.id).copied().unwrap_or(d.psi);
    let beta: Vec<usize> = topo
        .loads
        .iter()
        .map(|d| add_var(&mut lp, format!("beta_{}", d.id), VarKind::Beta, d.theta, 1.0, l1 * d.p * psi_of(d)))
        .collect();
    let z: Vec<usize> = topo
        .loads
        .iter()
        .map(|d| add_var(&mut lp, format!("z_{}", d.id), VarKind::Product, 0.0, 1.0, l1 * d.p * (1.0 - psi_of(d))))
        .collect();

    let mut row = |lp: &mut LinearProgram, name: String, family: Family, coeffs: Vec<(usize, f64)>, lo: f64, hi: f64| {
        constraints.push(Constraint { name, family });
        lp.add_row(coeffs, lo, hi);
    };

    for (k, g) in topo.generators.iter().enumerate() {
        let (lo, hi) = g.margin_bounds();
        row(&mut lp, format!("margin_lo_{}", g.id), Family::Margin, vec![(p[k], 1.0), (phi[k], -lo)], 0.0, f64::INFINITY);
        row(&mut lp, format!("margin_hi_{}", g.id), Family::Margin, vec![(p[k], 1.0), (phi[k], -hi)], f64::NEG_INFINITY, 0.0);
    }
    for b in &topo.buses {
        let mut coeffs = Vec::new();
        for (k, g) in topo.generators.iter().enumerate() {
            if g.bus == b.id {
                coeffs.push((p[k], 1.0));
            }
        }
        for (k, l) in topo.lines.iter().enumerate() {
            if l.to_bus == b.id {
                coeffs.push((flow[k], 1.0));
            } else if l.from_bus == b.id {
                coeffs.push((flow[k], -1.0));
            }
        }
        for (k, d) in topo.loads.iter().enumerate() {
            if d.bus == b.id {
                coeffs.push((beta[k], -d.p));
            }
        }
        row(&mut lp, format!("balance_{}", b.id), Family::Balance, coeffs, 0.0, 0.0);
    }
    let hpos = |bus: BusId| h[topo.bus_position(bus).unwrap()];
    for (k, l) in topo.lines.iter().enumerate() {
        row(&mut lp, format!("limit_lo_{}", l.id), Family::LineLimit, vec![(flow[k], 1.0), (w[k], -l.p_min)], 0.0, f64::INFINITY);
        row(&mut lp, format!("limit_hi_{}", l.id), Family::LineLimit, vec![(flow[k], 1.0), (w[k], -l.p_max)], f64::NEG_INFINITY, 0.0);
        let (hi, hj) = (hpos(l.from_bus), hpos(l.to_bus));
        if uncertain.contains(&l.id) {
            row(&mut lp, format!("uncertain_from_{}", l.id), Family::Uncertain, vec![(w[k], 1.0), (hi, 1.0)], f64::NEG_INFINITY, 1.0);
            row(&mut lp, format!("uncertain_to_{}", l.id), Family::Uncertain, vec![(w[k], 1.0), (hj, 1.0)], f64::NEG_INFINITY, 1.0);
        } else {
            row(&mut lp, format!("cut_a_{}", l.id), Family::Cut, vec![(w[k], 1.0), (hi, 1.0), (hj, -1.0)], f64::NEG_INFINITY, 1.0);
            row(&mut lp, format!("cut_b_{}", l.id), Family::Cut, vec![(w[k], 1.0), (hi, -1.0), (hj, 1.0)], f64::NEG_INFINITY, 1.0);
        }
    }
    for (k, d) in topo.loads.iter().enumerate() {
        let hb = hpos(d.bus);
        row(&mut lp, format!("product_h_{}", d.id), Family::Product, vec![(z[k], 1.0), (hb, -1.0)], f64::NEG_INFINITY, 0.0);
        row(&mut lp, format!("product_beta_{}", d.id), Family::Product, vec![(z[k], 1.0), (beta[k], -1.0)], f64::NEG_INFINITY, 0.0);
        row(&mut lp, format!("product_both_{}", d.id), Family::Product, vec![(z[k], 1.0), (beta[k], -1.0), (hb, -1.0)], -1.0, f64::INFINITY);
    }

    let load_h = topo.loads.iter().map(|d| hpos(d.bus)).collect();
    Ok(MilpInstance {
        lp,
        vars,
        constraints,
        lambda: config.lambda,
        anomalous: anomalous.clone(),
        uncertain,
        objective_offset: offset,
        bus_ids: topo.buses.iter().map(|b| b.id).collect(),
        line_ids: topo.lines.iter().map(|l| l.id.clone()).collect(),
        gen_ids: topo.generators.iter().map(|g| g.id.clone()).collect(),
        load_ids: topo.loads.iter().map(|d| d.id.clone()).collect(),
        h,
        w,
        phi,
        p,
        flow,
        beta,
        z,
        load_h,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub time_limit: Option<Duration>,
    /// Relative gap at which search stops.
    pub gap: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { time_limit: Some(Duration::from_secs(60)), gap: 1e-9 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    TimeLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IslandingSolution {
    pub h: BTreeMap<BusId, u8>,
    pub w: BTreeMap<String, u8>,
    pub phi: BTreeMap<String, u8>,
    pub p_mw: BTreeMap<String, f64>,
    pub beta: BTreeMap<String, f64>,
    pub flow_mw: BTreeMap<String, f64>,
    pub objective: f64,
    pub gap: f64,
    pub nodes: usize,
    pub status: SolveStatus,
    pub wall_time_s: f64,
    /// Largest LP bound seen at a node that was not pruned by its parent.
    #[serde(skip)]
    pub root_bound: f64,
}

impl IslandingSolution {
    pub fn unhealthy(&self) -> BTreeSet<BusId> {
        self.h.iter().filter(|(_, &v)| v == 0).map(|(&b, _)| b).collect()
    }

    pub fn healthy(&self) -> BTreeSet<BusId> {
        self.h.iter().filter(|(_, &v)| v == 1).map(|(&b, _)| b).collect()
    }

    pub fn open_lines(&self) -> Vec<String> {
        self.w.iter().filter(|(_, &v)| v == 0).map(|(k, _)| k.clone()).collect()
    }

    /// Full column vector for `inst`, with `z = beta * h`.
    pub fn to_columns(&self, inst: &MilpInstance) -> Vec<f64> {
        let mut x = vec![0.0; inst.vars.len()];
        for (k, b) in inst.bus_ids.iter().enumerate() {
            x[inst.h[k]] = self.h.get(b).copied().unwrap_or(0) as f64;
        }
        for (k, id) in inst.line_ids.iter().enumerate() {
            x[inst.w[k]] = self.w.get(id).copied().unwrap_or(0) as f64;
            x[inst.flow[k]] = self.flow_mw.get(id).copied().unwrap_or(0.0);
        }
        for (k, id) in inst.gen_ids.iter().enumerate() {
            x[inst.phi[k]] = self.phi.get(id).copied().unwrap_or(0) as f64;
            x[inst.p[k]] = self.p_mw.get(id).copied().unwrap_or(0.0);
        }
        for (k, id) in inst.load_ids.iter().enumerate() {
            x[inst.beta[k]] = self.beta.get(id).copied().unwrap_or(0.0);
            x[inst.z[k]] = x[inst.beta[k]] * x[inst.load_h[k]];
        }
        x
    }
}

fn round_binary(v: f64) -> u8 {
    if v >= 0.5 {
        1
    } else {
        0
    }
}

fn extract(inst: &MilpInstance, x: &[f64]) -> IslandingSolution {
    let clean = |v: f64| if v.abs() < 1e-12 { 0.0 } else { v };
    IslandingSolution {
        h: inst.bus_ids.iter().zip(&inst.h).map(|(&b, &j)| (b, round_binary(x[j]))).collect(),
        w: inst.line_ids.iter().zip(&inst.w).map(|(id, &j)| (id.clone(), round_binary(x[j]))).collect(),
        phi: inst.gen_ids.iter().zip(&inst.phi).map(|(id, &j)| (id.clone(), round_binary(x[j]))).collect(),
        p_mw: inst.gen_ids.iter().zip(&inst.p).map(|(id, &j)| (id.clone(), clean(x[j]))).collect(),
        beta: inst.load_ids.iter().zip(&inst.beta).map(|(id, &j)| (id.clone(), clean(x[j]))).collect(),
        flow_mw: inst.line_ids.iter().zip(&inst.flow).map(|(id, &j)| (id.clone(), clean(x[j]))).collect(),
        objective: inst.objective(x),
        gap: 0.0,
        nodes: 0,
        status: SolveStatus::Optimal,
        wall_time_s: 0.0,
        root_bound: f64::NAN,
    }
}

enum Warm {
    Tableau(Arc<Simplex>),
    Basis(Basis),
}

struct Node {
    id: usize,
    bound: f64,
    fixings: Vec<(usize, f64)>,
    warm: Warm,
}

impl PartialEq for Node {
    fn eq(&self, o: &Self) -> bool {
        self.id == o.id
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Node {
    /// Best bound first, then the older node.
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        self.bound.total_cmp(&o.bound).then_with(|| o.id.cmp(&self.id))
    }
}

/// Branch-and-bound with best-bound node selection. Deterministic: ties in
/// node order break by creation order, ties in branching by
/// (h, w, phi) then column index.
pub fn solve(inst: &MilpInstance, opts: &SolveOptions) -> Result<IslandingSolution, IslandingError> {
    let start = Instant::now();
    let mut root = Simplex::new(&inst.lp);
    if let Err(e) = root.solve() {
        return Err(map_lp_error(inst, e));
    }
    let root_bound = inst.objective(&full_x(&root, inst));
    let mut heap = BinaryHeap::new();
    let mut cached = 0usize;
    let mut next_id = 1usize;
    let mut nodes = 0usize;
    let mut incumbent: Option<(f64, Vec<f64>)> = dive(inst, &root);
    let mut last_infeasible: Option<LpError> = None;
    heap.push(Node { id: 0, bound: root_bound, fixings: Vec::new(), warm: Warm::Tableau(Arc::new(root)) });
    cached += 1;
    let mut timed_out = false;

    while let Some(node) = heap.pop() {
        if let Warm::Tableau(_) = node.warm {
            cached -= 1;
        }
        if let Some((best, _)) = &incumbent {
            if node.bound <= best + opts.gap * best.abs().max(1.0) {
                continue;
            }
        }
        if opts.time_limit.is_some_and(|t| start.elapsed() > t) {
            heap.push(node);
            timed_out = true;
            break;
        }
        nodes += 1;
        let mut s = match node.warm {
            Warm::Tableau(t) => Arc::try_unwrap(t).unwrap_or_else(|a| (*a).clone()),
            Warm::Basis(b) => match Simplex::from_basis(&inst.lp, &b) {
                Ok(s) => s,
                Err(_) => Simplex::new(&inst.lp),
            },
        };
        for &(j, v) in &node.fixings {
            s.set_col_bounds(j, v, v);
        }
        if let Err(e) = s.solve() {
            last_infeasible = Some(e);
            continue;
        }
        let x = full_x(&s, inst);
        let bound = inst.objective(&x);
        if let Some((best, _)) = &incumbent {
            if bound <= best + opts.gap * best.abs().max(1.0) {
                continue;
            }
        }
        match branch_column(inst, &x) {
            None => {
                if incumbent.as_ref().is_none_or(|(b, _)| bound > *b) {
                    incumbent = Some((bound, x));
                }
            }
            Some(j) => {
                let shared = Arc::new(s);
                for v in [0.0, 1.0] {
                    let mut fixings = node.fixings.clone();
                    fixings.push((j, v));
                    let warm = if cached < TABLEAU_CACHE {
                        cached += 1;
                        Warm::Tableau(Arc::clone(&shared))
                    } else {
                        Warm::Basis(shared.basis())
                    };
                    heap.push(Node { id: next_id, bound, fixings, warm });
                    next_id += 1;
                }
            }
        }
    }

    let Some((best, x)) = incumbent else {
        if timed_out {
            return Err(IslandingError::TimeoutWithoutIncumbent);
        }
        return Err(match last_infeasible {
            Some(e) => map_lp_error(inst, e),
            None => IslandingError::Infeasible { constraints: vec!["integrality".into()] },
        });
    };
    let open_bound = heap.iter().map(|n| n.bound).fold(best, f64::max);
    let mut sol = extract(inst, &x);
    sol.nodes = nodes;
    sol.status = if timed_out { SolveStatus::TimeLimit } else { SolveStatus::Optimal };
    sol.gap = if timed_out { (open_bound - best).max(0.0) / best.abs().max(1.0) } else { 0.0 };
    sol.wall_time_s = start.elapsed().as_secs_f64();
    sol.root_bound = root_bound;
    Ok(sol)
}

/// Rounding dive from the root relaxation: depth-first, nearest value
/// first, with a budget of LP solves. Gives an early incumbent so that a
/// time limit still has an answer; it never changes the optimum.
fn dive(inst: &MilpInstance, root: &Simplex) -> Option<(f64, Vec<f64>)> {
    fn go(inst: &MilpInstance, s: &Simplex, budget: &mut usize) -> Option<(f64, Vec<f64>)> {
        let x = full_x(s, inst);
        let Some(j) = branch_column(inst, &x) else {
            return Some((inst.objective(&x), x));
        };
        let first = f64::from(round_binary(x[j]));
        for v in [first, 1.0 - first] {
            if *budget == 0 {
                return None;
            }
            *budget -= 1;
            let mut t = s.clone();
            t.set_col_bounds(j, v, v);
            if t.solve().is_ok() {
                if let Some(found) = go(inst, &t, budget) {
                    return Some(found);
                }
            }
        }
        None
    }
    let mut budget = 4 * inst.num_binaries();
    go(inst, root, &mut budget)
}

fn full_x(s: &Simplex, inst: &MilpInstance) -> Vec<f64> {
    let mut x = s.values().to_vec();
    x.truncate(inst.vars.len());
    x
}

fn branch_column(inst: &MilpInstance, x: &[f64]) -> Option<usize> {
    let mut best: Option<(f64, u8, usize)> = None;
    for j in inst.binary_cols() {
        let frac = (x[j] - x[j].floor()).min(x[j].ceil() - x[j]);
        if frac <= INT_TOL {
            continue;
        }
        let key = (frac, inst.vars[j].kind.rank(), j);
        let better = match best {
            None => true,
            Some((bf, br, bj)) => {
                frac > bf + 1e-12 || ((frac - bf).abs() <= 1e-12 && (key.1, key.2) < (br, bj))
            }
        };
        if better {
            best = Some(key);
        }
    }
    best.map(|b| b.2)
}

fn map_lp_error(inst: &MilpInstance, e: LpError) -> IslandingError {
    match e {
        LpError::Infeasible { rows } => IslandingError::Infeasible {
            constraints: rows.iter().map(|&r| inst.constraints[r].name.clone()).collect(),
        },
        other => IslandingError::Lp(other),
    }
}

/// Largest violation per equation family.
pub fn validate_solution(inst: &MilpInstance, sol: &IslandingSolution) -> BTreeMap<Family, f64> {
    let x = sol.to_columns(inst);
    let mut report: BTreeMap<Family, f64> = BTreeMap::new();
    let mut bump = |f: Family, v: f64| {
        let e = report.entry(f).or_insert(0.0);
        *e = e.max(v.max(0.0));
    };
    for (row, con) in inst.lp.rows.iter().zip(&inst.constraints) {
        let act: f64 = row.coeffs.iter().map(|&(j, a)| a * x[j]).sum();
        bump(con.family, (row.lower - act).max(act - row.upper));
    }
    for (j, var) in inst.vars.iter().enumerate() {
        let (lo, hi) = (inst.lp.col_lower[j], inst.lp.col_upper[j]);
        let viol = (lo - x[j]).max(x[j] - hi);
        let fam = match var.kind {
            VarKind::Beta => Family::Service,
            VarKind::Output => Family::Margin,
            VarKind::Flow => Family::LineLimit,
            VarKind::Product => Family::Product,
            VarKind::Bus if hi == 0.0 => Family::Anchor,
            _ => Family::Integrality,
        };
        bump(fam, viol);
        if var.kind.is_binary() {
            bump(Family::Integrality, (x[j] - x[j].round()).abs());
        }
    }
    for &b in &inst.anomalous {
        bump(Family::Anchor, sol.h.get(&b).copied().unwrap_or(0) as f64);
    }
    report
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Island {
    pub buses: BTreeSet<BusId>,
    pub healthy: bool,
    pub contains_anomaly: bool,
}

/// Connected components over closed lines, tagged by their buses' `h`.
pub fn islands_of(
    sol: &IslandingSolution,
    topo: &GridTopology,
    anomalous: &BTreeSet<BusId>,
) -> Result<Vec<Island>, IslandingError> {
    let closed = topo
        .lines
        .iter()
        .filter(|l| sol.w.get(&l.id).copied().unwrap_or(0) == 1)
        .map(|l| (l.from_bus, l.to_bus));
    let comps = grid::components(&topo.bus_ids(), closed);
    comps
        .into_iter()
        .map(|buses| {
            let hs: BTreeSet<u8> = buses.iter().map(|b| sol.h.get(b).copied().unwrap_or(0)).collect();
            if hs.len() > 1 {
                return Err(IslandingError::MixedIsland(buses));
            }
            let contains_anomaly = buses.iter().any(|b| anomalous.contains(b));
            Ok(Island { healthy: hs.contains(&1), contains_anomaly, buses })
        })
        .collect()
}
