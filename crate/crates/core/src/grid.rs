//! Grid data model: case ingestion, validation and partition bookkeeping.
//!
//! A [`GridTopology`] is immutable once loaded. Weights are normalized at load
//! time and missing pre-event operating points are filled from a nominal
//! economic dispatch, so downstream stages never see a partial model.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dispatch;

/// Schema tag every case document must carry.
pub const CASE_SCHEMA: &str = "grid-isle/1";

pub type BusId = u32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CaseError {
    #[error("schema violation at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("dangling bus reference at `{path}`: bus {bus} does not exist")]
    DanglingBus { path: String, bus: BusId },
    #[error("duplicate id at `{path}`: {id}")]
    Duplicate { path: String, id: String },
    #[error("invalid value at `{path}`: {message}")]
    Invalid { path: String, message: String },
    #[error("non-convex cost curve at `{path}`: marginal cost drops from {prev} to {next} $/MWh")]
    NonConvexCost { path: String, prev: f64, next: f64 },
    #[error("nominal dispatch for missing p0 failed: {0}")]
    NominalDispatch(String),
}

impl CaseError {
    fn invalid(path: impl Into<String>, message: impl Into<String>) -> Self {
        CaseError::Invalid { path: path.into(), message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: BusId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_kv: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub id: String,
    pub from_bus: BusId,
    pub to_bus: BusId,
    /// Reverse-flow limit, MW (non-positive).
    pub p_min: f64,
    /// Forward-flow limit, MW (non-negative).
    pub p_max: f64,
    /// Disconnection weight, normalized so the largest is 1.
    pub omega: f64,
    /// Member of the must-open-near-healthy set.
    pub uncertain: bool,
    /// Series reactance in per unit, used only for the pre-event DC flow.
    pub reactance_pu: Option<f64>,
}

impl Line {
    /// `"i-j"` with the smaller bus first; parallel circuits share a label.
    pub fn bus_pair_label(&self) -> String {
        let (a, b) = if self.from_bus <= self.to_bus {
            (self.from_bus, self.to_bus)
        } else {
            (self.to_bus, self.from_bus)
        };
        format!("{a}-{b}")
    }

    pub fn touches(&self, bus: BusId) -> bool {
        self.from_bus == bus || self.to_bus == bus
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostSegment {
    pub mw_upto: f64,
    pub usd_per_mwh: f64,
}

/// Piecewise-linear production cost, integrated from zero output.
///
/// The block below `p_min` is a commitment block and may carry any average
/// price; above `p_min` marginal prices must be nondecreasing.
#[derive(Debug, Clone, PartialEq)]
pub struct CostCurve {
    pub segments: Vec<CostSegment>,
    pub startup_usd: f64,
    pub shutdown_usd: f64,
}

impl CostCurve {
    pub fn linear(usd_per_mwh: f64, p_max: f64) -> Self {
        CostCurve {
            segments: vec![CostSegment { mw_upto: p_max, usd_per_mwh }],
            startup_usd: 0.0,
            shutdown_usd: 0.0,
        }
    }

    /// Hourly cost at output `p` MW.
    pub fn cost_at(&self, p: f64) -> f64 {
        let mut cost = 0.0;
        let mut lo = 0.0;
        for seg in &self.segments {
            if p <= lo {
                break;
            }
            let hi = seg.mw_upto.min(p);
            cost += (hi - lo) * seg.usd_per_mwh;
            lo = seg.mw_upto;
        }
        // output past the last breakpoint is priced at the last marginal
        if let Some(last) = self.segments.last() {
            if p > last.mw_upto {
                cost += (p - last.mw_upto) * last.usd_per_mwh;
            }
        }
        cost
    }

    /// Marginal pieces over `(from, to]`, as `(width, price)` in increasing output.
    pub fn slices(&self, from: f64, to: f64) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        let mut lo: f64 = 0.0;
        for (k, seg) in self.segments.iter().enumerate() {
            let hi = if k + 1 == self.segments.len() { seg.mw_upto.max(to) } else { seg.mw_upto };
            let a = lo.max(from);
            let b = hi.min(to);
            if b > a + 1e-12 {
                out.push((b - a, seg.usd_per_mwh));
            }
            lo = seg.mw_upto;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub id: String,
    pub bus: BusId,
    pub p_min: f64,
    pub p_max: f64,
    /// Pre-event steady-state output, MW.
    pub p0: f64,
    /// Output growth-rate coefficient, 1/MW.
    pub chi: f64,
    pub omega: f64,
    /// Reactive capability, carried for reporting only.
    pub q_max: f64,
    pub kind: Option<String>,
    pub cost: CostCurve,
}

impl Generator {
    /// Output window around `p0` when the unit stays on, clipped to its ratings.
    pub fn margin_bounds(&self) -> (f64, f64) {
        let lo = self.p0 * (1.0 - self.chi * (self.p0 - self.p_min));
        let hi = self.p0 * (1.0 + self.chi * (self.p_max - self.p0));
        (lo.max(self.p_min), hi.min(self.p_max))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Load {
    pub id: String,
    pub bus: BusId,
    /// Aggregate real demand, MW.
    pub p: f64,
    /// Aggregate reactive demand, MVAr (reporting only).
    pub q: f64,
    /// Critical fraction that must always be served.
    pub theta: f64,
    /// Service weight for the load when stranded on the unhealthy side.
    pub psi: f64,
}

pub const DEFAULT_PSI: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct GridTopology {
    pub name: Option<String>,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub generators: Vec<Generator>,
    pub loads: Vec<Load>,
    bus_index: HashMap<BusId, usize>,
}

impl GridTopology {
    /// Assemble and validate a topology from parts. Weights are taken as given.
    pub fn new(
        name: Option<String>,
        buses: Vec<Bus>,
        lines: Vec<Line>,
        generators: Vec<Generator>,
        loads: Vec<Load>,
    ) -> Result<Self, CaseError> {
        let mut bus_index = HashMap::new();
        for (k, b) in buses.iter().enumerate() {
            if bus_index.insert(b.id, k).is_some() {
                return Err(CaseError::Duplicate { path: format!("buses[{k}].id"), id: b.id.to_string() });
            }
        }
        let topo = GridTopology { name, buses, lines, generators, loads, bus_index };
        topo.validate()?;
        Ok(topo)
    }

    fn validate(&self) -> Result<(), CaseError> {
        let mut seen = BTreeSet::new();
        for (k, l) in self.lines.iter().enumerate() {
            if !seen.insert(l.id.as_str()) {
                return Err(CaseError::Duplicate { path: format!("lines[{k}].id"), id: l.id.clone() });
            }
            for (field, bus) in [("from", l.from_bus), ("to", l.to_bus)] {
                if !self.has_bus(bus) {
                    return Err(CaseError::DanglingBus { path: format!("lines[{k}].{field}"), bus });
                }
            }
            if l.from_bus == l.to_bus {
                return Err(CaseError::invalid(format!("lines[{k}].to"), "self-loop"));
            }
            if !(l.p_min <= 0.0 && l.p_max >= 0.0) {
                return Err(CaseError::invalid(format!("lines[{k}]"), "requires p_min <= 0 <= p_max"));
            }
            if !(l.omega > 0.0 && l.omega <= 1.0) {
                return Err(CaseError::invalid(format!("lines[{k}].weight"), "must lie in (0, 1]"));
            }
        }
        let mut seen = BTreeSet::new();
        for (k, g) in self.generators.iter().enumerate() {
            if !seen.insert(g.id.as_str()) {
                return Err(CaseError::Duplicate { path: format!("generators[{k}].id"), id: g.id.clone() });
            }
            if !self.has_bus(g.bus) {
                return Err(CaseError::DanglingBus { path: format!("generators[{k}].bus"), bus: g.bus });
            }
            if !(0.0 <= g.p_min && g.p_min <= g.p_max) {
                return Err(CaseError::invalid(format!("generators[{k}]"), "requires 0 <= p_min <= p_max"));
            }
            if !(g.p_min - 1e-9 <= g.p0 && g.p0 <= g.p_max + 1e-9) {
                return Err(CaseError::invalid(format!("generators[{k}].p0_mw"), "must lie in [p_min, p_max]"));
            }
            if !(g.chi >= 0.0 && g.chi.is_finite()) {
                return Err(CaseError::invalid(format!("generators[{k}].chi_per_mw"), "must be finite and >= 0"));
            }
            if !(g.omega > 0.0 && g.omega <= 1.0) {
                return Err(CaseError::invalid(format!("generators[{k}].weight"), "must lie in (0, 1]"));
            }
            validate_cost(&g.cost, g.p_min, &format!("generators[{k}].cost_segments"))?;
        }
        let mut seen = BTreeSet::new();
        for (k, d) in self.loads.iter().enumerate() {
            if !seen.insert(d.id.as_str()) {
                return Err(CaseError::Duplicate { path: format!("loads[{k}].id"), id: d.id.clone() });
            }
            if !self.has_bus(d.bus) {
                return Err(CaseError::DanglingBus { path: format!("loads[{k}].bus"), bus: d.bus });
            }
            if !(d.p >= 0.0) {
                return Err(CaseError::invalid(format!("loads[{k}].p_mw"), "must be >= 0"));
            }
            if !(0.0..=1.0).contains(&d.theta) {
                return Err(CaseError::invalid(format!("loads[{k}].critical_fraction"), "must lie in [0, 1]"));
            }
            if !(0.0..=1.0).contains(&d.psi) {
                return Err(CaseError::invalid(format!("loads[{k}].psi"), "must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn has_bus(&self, bus: BusId) -> bool {
        self.bus_index.contains_key(&bus)
    }

    pub fn bus_position(&self, bus: BusId) -> Option<usize> {
        self.bus_index.get(&bus).copied()
    }

    pub fn bus_ids(&self) -> BTreeSet<BusId> {
        self.buses.iter().map(|b| b.id).collect()
    }

    pub fn line(&self, id: &str) -> Option<&Line> {
        self.lines.iter().find(|l| l.id == id)
    }

    pub fn total_p_gen_max(&self) -> f64 {
        self.generators.iter().map(|g| g.p_max).sum()
    }

    pub fn total_p_demand(&self) -> f64 {
        self.loads.iter().map(|d| d.p).sum()
    }

    /// The network induced by `buses`: lines with both ends inside, and the
    /// generators and loads attached there. Weights and parameters are kept.
    pub fn subnetwork(&self, buses: &BTreeSet<BusId>) -> GridTopology {
        let keep = |b: &BusId| buses.contains(b);
        let bus_list: Vec<Bus> = self.buses.iter().filter(|b| keep(&b.id)).cloned().collect();
        let bus_index = bus_list.iter().enumerate().map(|(k, b)| (b.id, k)).collect();
        GridTopology {
            name: self.name.as_ref().map(|n| format!("{n} (sub-network)")),
            buses: bus_list,
            lines: self
                .lines
                .iter()
                .filter(|l| keep(&l.from_bus) && keep(&l.to_bus))
                .cloned()
                .collect(),
            generators: self.generators.iter().filter(|g| keep(&g.bus)).cloned().collect(),
            loads: self.loads.iter().filter(|d| keep(&d.bus)).cloned().collect(),
            bus_index,
        }
    }

    /// Same network with every line's status-dependent data untouched but
    /// only the lines in `closed` kept.
    pub fn with_lines(&self, closed: &BTreeSet<String>) -> GridTopology {
        let mut t = self.clone();
        t.lines.retain(|l| closed.contains(&l.id));
        t
    }
}

fn validate_cost(curve: &CostCurve, p_min: f64, path: &str) -> Result<(), CaseError> {
    if curve.segments.is_empty() {
        return Err(CaseError::Schema { path: path.to_string(), message: "at least one segment required".into() });
    }
    let mut prev_upto = 0.0;
    for (k, s) in curve.segments.iter().enumerate() {
        if !(s.mw_upto > prev_upto) {
            return Err(CaseError::invalid(format!("{path}[{k}].mw_upto"), "breakpoints must increase"));
        }
        if !(s.usd_per_mwh >= 0.0 && s.usd_per_mwh.is_finite()) {
            return Err(CaseError::invalid(format!("{path}[{k}].usd_per_mwh"), "must be finite and >= 0"));
        }
        prev_upto = s.mw_upto;
    }
    // only the part above p_min is ever dispatched at the margin
    let mut prev: Option<f64> = None;
    for (k, s) in curve.segments.iter().enumerate() {
        if s.mw_upto > p_min + 1e-9 {
            if let Some(p) = prev {
                if s.usd_per_mwh < p - 1e-12 {
                    return Err(CaseError::NonConvexCost {
                        path: format!("{path}[{k}]"),
                        prev: p,
                        next: s.usd_per_mwh,
                    });
                }
            }
            prev = Some(s.usd_per_mwh);
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Case document

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseDocument {
    pub schema: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub buses: Vec<Bus>,
    pub lines: Vec<LineDoc>,
    pub generators: Vec<GeneratorDoc>,
    pub loads: Vec<LoadDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineDoc {
    pub id: String,
    pub from: BusId,
    pub to: BusId,
    pub p_min_mw: f64,
    pub p_max_mw: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uncertain: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reactance_pu: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorDoc {
    pub id: String,
    pub bus: BusId,
    pub p_min_mw: f64,
    pub p_max_mw: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p0_mw: Option<f64>,
    pub chi_per_mw: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
    pub cost_segments: Vec<CostSegment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub startup_usd: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shutdown_usd: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_max_mvar: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadDoc {
    pub id: String,
    pub bus: BusId,
    pub p_mw: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_mva: Option<f64>,
    pub critical_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi: Option<f64>,
}

/// Parse and validate a case document from JSON text.
pub fn load_case_str(text: &str) -> Result<GridTopology, CaseError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let doc: CaseDocument = serde_path_to_error::deserialize(de).map_err(|e| CaseError::Schema {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    load_case(&doc)
}

/// Validate a parsed case document and build the topology.
///
/// Missing line/generator weights are derived from ratings and normalized so
/// the largest is 1. Missing `p0_mw` values are filled from a nominal economic
/// dispatch of the whole network.
pub fn load_case(doc: &CaseDocument) -> Result<GridTopology, CaseError> {
    if doc.schema != CASE_SCHEMA {
        return Err(CaseError::Schema {
            path: "schema".into(),
            message: format!("expected \"{CASE_SCHEMA}\", found \"{}\"", doc.schema),
        });
    }
    if doc.buses.is_empty() {
        return Err(CaseError::Schema { path: "buses".into(), message: "at least one bus required".into() });
    }
    for (k, l) in doc.lines.iter().enumerate() {
        for (field, v) in [("p_min_mw", l.p_min_mw), ("p_max_mw", l.p_max_mw)] {
            if !v.is_finite() {
                return Err(CaseError::invalid(format!("lines[{k}].{field}"), "must be finite"));
            }
        }
    }

    let lines = normalize_weights(doc.lines.iter().map(|l| {
        let raw = l.weight.unwrap_or_else(|| l.p_max_mw.max(-l.p_min_mw));
        (raw, l)
    }))
    .into_iter()
    .map(|(omega, l)| Line {
        id: l.id.clone(),
        from_bus: l.from,
        to_bus: l.to,
        p_min: l.p_min_mw,
        p_max: l.p_max_mw,
        omega,
        uncertain: l.uncertain.unwrap_or(false),
        reactance_pu: l.reactance_pu,
    })
    .collect();

    let generators: Vec<Generator> = normalize_weights(
        doc.generators.iter().map(|g| (g.weight.unwrap_or(g.p_max_mw), g)),
    )
    .into_iter()
    .map(|(omega, g)| Generator {
        id: g.id.clone(),
        bus: g.bus,
        p_min: g.p_min_mw,
        p_max: g.p_max_mw,
        p0: g.p0_mw.unwrap_or(g.p_min_mw),
        chi: g.chi_per_mw,
        omega,
        q_max: g.q_max_mvar.unwrap_or(0.0),
        kind: g.kind.clone(),
        cost: CostCurve {
            segments: g.cost_segments.clone(),
            startup_usd: g.startup_usd.unwrap_or(0.0),
            shutdown_usd: g.shutdown_usd.unwrap_or(0.0),
        },
    })
    .collect();

    let loads = doc
        .loads
        .iter()
        .map(|d| Load {
            id: d.id.clone(),
            bus: d.bus,
            p: d.p_mw,
            q: d.q_mva.unwrap_or(0.0),
            theta: d.critical_fraction,
            psi: d.psi.unwrap_or(DEFAULT_PSI),
        })
        .collect();

    let mut topo = GridTopology::new(doc.name.clone(), doc.buses.clone(), lines, generators, loads)?;

    let missing: Vec<usize> =
        doc.generators.iter().enumerate().filter(|(_, g)| g.p0_mw.is_none()).map(|(k, _)| k).collect();
    if !missing.is_empty() {
        let nominal = dispatch::nominal_dispatch(&topo).map_err(|e| CaseError::NominalDispatch(e.to_string()))?;
        for k in missing {
            topo.generators[k].p0 = nominal.output(&topo.generators[k].id).unwrap_or(topo.generators[k].p_min);
        }
    }
    Ok(topo)
}

fn normalize_weights<'a, T>(items: impl Iterator<Item = (f64, &'a T)>) -> Vec<(f64, &'a T)> {
    let items: Vec<_> = items.collect();
    let max = items.iter().map(|(w, _)| *w).fold(0.0_f64, f64::max);
    items
        .into_iter()
        .map(|(w, t)| (if max > 0.0 { w / max } else { 1.0 }, t))
        .collect()
}

/// Serialize a topology back to a fully explicit case document.
pub fn emit_case(topo: &GridTopology) -> CaseDocument {
    CaseDocument {
        schema: CASE_SCHEMA.to_string(),
        name: topo.name.clone(),
        buses: topo.buses.clone(),
        lines: topo
            .lines
            .iter()
            .map(|l| LineDoc {
                id: l.id.clone(),
                from: l.from_bus,
                to: l.to_bus,
                p_min_mw: l.p_min,
                p_max_mw: l.p_max,
                weight: Some(l.omega),
                uncertain: Some(l.uncertain),
                reactance_pu: l.reactance_pu,
            })
            .collect(),
        generators: topo
            .generators
            .iter()
            .map(|g| GeneratorDoc {
                id: g.id.clone(),
                bus: g.bus,
                p_min_mw: g.p_min,
                p_max_mw: g.p_max,
                p0_mw: Some(g.p0),
                chi_per_mw: g.chi,
                weight: Some(g.omega),
                cost_segments: g.cost.segments.clone(),
                startup_usd: Some(g.cost.startup_usd),
                shutdown_usd: Some(g.cost.shutdown_usd),
                q_max_mvar: Some(g.q_max),
                kind: g.kind.clone(),
            })
            .collect(),
        loads: topo
            .loads
            .iter()
            .map(|d| LoadDoc {
                id: d.id.clone(),
                bus: d.bus,
                p_mw: d.p,
                q_mva: Some(d.q),
                critical_fraction: d.theta,
                psi: Some(d.psi),
            })
            .collect(),
    }
}

// ---------------------------------------------------------------------------
// Partitions

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub healthy: BTreeSet<BusId>,
    pub unhealthy: BTreeSet<BusId>,
}

impl Partition {
    pub fn new(
        topo: &GridTopology,
        healthy: BTreeSet<BusId>,
        unhealthy: BTreeSet<BusId>,
    ) -> Result<Self, CaseError> {
        if let Some(b) = healthy.intersection(&unhealthy).next() {
            return Err(CaseError::invalid("partition", format!("bus {b} on both sides")));
        }
        for b in healthy.iter().chain(unhealthy.iter()) {
            if !topo.has_bus(*b) {
                return Err(CaseError::DanglingBus { path: "partition".into(), bus: *b });
            }
        }
        if healthy.len() + unhealthy.len() != topo.buses.len() {
            return Err(CaseError::invalid("partition", "sides must cover every bus"));
        }
        Ok(Partition { healthy, unhealthy })
    }

    /// Everything not listed as unhealthy is healthy.
    pub fn from_unhealthy(topo: &GridTopology, unhealthy: BTreeSet<BusId>) -> Result<Self, CaseError> {
        let healthy = topo.bus_ids().difference(&unhealthy).copied().collect();
        Partition::new(topo, healthy, unhealthy)
    }

    pub fn swapped(&self) -> Partition {
        Partition { healthy: self.unhealthy.clone(), unhealthy: self.healthy.clone() }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Capacities {
    pub p_gen_max_mw: f64,
    pub p_dem_mw: f64,
    pub q_gen_max_mvar: f64,
    pub q_dem_mvar: f64,
}

impl std::ops::Add for Capacities {
    type Output = Capacities;
    fn add(self, o: Capacities) -> Capacities {
        Capacities {
            p_gen_max_mw: self.p_gen_max_mw + o.p_gen_max_mw,
            p_dem_mw: self.p_dem_mw + o.p_dem_mw,
            q_gen_max_mvar: self.q_gen_max_mvar + o.q_gen_max_mvar,
            q_dem_mvar: self.q_dem_mvar + o.q_dem_mvar,
        }
    }
}

/// Capacity and demand sums over the equipment attached to `buses`.
pub fn capacities(topo: &GridTopology, buses: &BTreeSet<BusId>) -> Capacities {
    let mut c = Capacities::default();
    for g in topo.generators.iter().filter(|g| buses.contains(&g.bus)) {
        c.p_gen_max_mw += g.p_max;
        c.q_gen_max_mvar += g.q_max;
    }
    for d in topo.loads.iter().filter(|d| buses.contains(&d.bus)) {
        c.p_dem_mw += d.p;
        c.q_dem_mvar += d.q;
    }
    c
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionSummary {
    pub healthy: Capacities,
    pub unhealthy: Capacities,
}

pub fn partition_capacities(topo: &GridTopology, partition: &Partition) -> PartitionSummary {
    PartitionSummary {
        healthy: capacities(topo, &partition.healthy),
        unhealthy: capacities(topo, &partition.unhealthy),
    }
}

/// Ids of the lines whose endpoints fall on different sides, in case order.
pub fn cut_set(topo: &GridTopology, partition: &Partition) -> Vec<String> {
    topo.lines
        .iter()
        .filter(|l| partition.healthy.contains(&l.from_bus) != partition.healthy.contains(&l.to_bus))
        .map(|l| l.id.clone())
        .collect()
}

/// Distinct `"i-j"` labels of a set of line ids (parallel circuits collapse).
pub fn bus_pair_labels(topo: &GridTopology, line_ids: &[String]) -> BTreeSet<String> {
    line_ids.iter().filter_map(|id| topo.line(id)).map(Line::bus_pair_label).collect()
}

/// Connected components of the network formed by `buses` and the closed lines.
pub fn components(
    buses: &BTreeSet<BusId>,
    closed_lines: impl IntoIterator<Item = (BusId, BusId)>,
) -> Vec<BTreeSet<BusId>> {
    let ids: Vec<BusId> = buses.iter().copied().collect();
    let pos: BTreeMap<BusId, usize> = ids.iter().enumerate().map(|(k, b)| (*b, k)).collect();
    let mut parent: Vec<usize> = (0..ids.len()).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for (a, b) in closed_lines {
        if let (Some(&i), Some(&j)) = (pos.get(&a), pos.get(&b)) {
            let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
            if ri != rj {
                parent[ri.max(rj)] = ri.min(rj);
            }
        }
    }
    let mut groups: BTreeMap<usize, BTreeSet<BusId>> = BTreeMap::new();
    for (k, b) in ids.iter().enumerate() {
        let r = find(&mut parent, k);
        groups.entry(r).or_default().insert(*b);
    }
    let mut out: Vec<_> = groups.into_values().collect();
    out.sort_by_key(|s| *s.iter().next().unwrap());
    out
}

/// The bundled 24-bus reliability test case.
pub const RTS24_JSON: &str = include_str!("../data/rts24.json");

pub fn rts24() -> GridTopology {
    load_case_str(RTS24_JSON).expect("bundled case is valid")
}

/// Parse `"1-3, 5, 7-9"` style bus lists.
pub fn parse_bus_list(text: &str) -> Result<BTreeSet<BusId>, String> {
    let mut out = BTreeSet::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let a: BusId = a.trim().parse().map_err(|_| format!("bad bus range `{part}`"))?;
                let b: BusId = b.trim().parse().map_err(|_| format!("bad bus range `{part}`"))?;
                if a > b {
                    return Err(format!("bad bus range `{part}`"));
                }
                out.extend(a..=b);
            }
            None => {
                out.insert(part.parse().map_err(|_| format!("bad bus id `{part}`"))?);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn two_bus() -> GridTopology {
        let text = r#"{
            "schema": "grid-isle/1",
            "buses": [{"id": 1}, {"id": 2}],
            "lines": [{"id": "L1", "from": 1, "to": 2, "p_min_mw": -100, "p_max_mw": 100}],
            "generators": [{"id": "G1", "bus": 1, "p_min_mw": 0, "p_max_mw": 50, "p0_mw": 10,
                            "chi_per_mw": 1.0, "cost_segments": [{"mw_upto": 50, "usd_per_mwh": 20}]}],
            "loads": [{"id": "D1", "bus": 2, "p_mw": 10, "critical_fraction": 0.5}]
        }"#;
        load_case_str(text).unwrap()
    }

    #[test]
    fn empty_document_is_schema_violation() {
        assert!(matches!(load_case_str("{}"), Err(CaseError::Schema { .. })));
        assert!(matches!(load_case_str(""), Err(CaseError::Schema { .. })));
    }

    #[test]
    fn schema_errors_carry_field_path() {
        let text = r#"{"schema": "grid-isle/1", "buses": [{"id": 1}], "lines": [{"id": "a", "from": 1}],
                       "generators": [], "loads": []}"#;
        match load_case_str(text) {
            Err(CaseError::Schema { path, .. }) => assert_eq!(path, "lines[0]"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn dangling_line_endpoint() {
        let text = r#"{"schema": "grid-isle/1", "buses": [{"id": 1}, {"id": 2}],
            "lines": [{"id": "a", "from": 1, "to": 99, "p_min_mw": -1, "p_max_mw": 1}],
            "generators": [], "loads": []}"#;
        assert_eq!(
            load_case_str(text),
            Err(CaseError::DanglingBus { path: "lines[0].to".into(), bus: 99 })
        );
    }

    #[test]
    fn non_convex_cost_rejected() {
        let text = r#"{"schema": "grid-isle/1", "buses": [{"id": 1}], "lines": [],
            "generators": [{"id": "g", "bus": 1, "p_min_mw": 0, "p_max_mw": 20, "p0_mw": 5, "chi_per_mw": 0,
               "cost_segments": [{"mw_upto": 10, "usd_per_mwh": 30}, {"mw_upto": 20, "usd_per_mwh": 10}]}],
            "loads": []}"#;
        assert!(matches!(load_case_str(text), Err(CaseError::NonConvexCost { .. })));
    }

    #[test]
    fn commitment_block_below_pmin_may_be_pricier() {
        let text = r#"{"schema": "grid-isle/1", "buses": [{"id": 1}], "lines": [],
            "generators": [{"id": "g", "bus": 1, "p_min_mw": 10, "p_max_mw": 20, "p0_mw": 10, "chi_per_mw": 0,
               "cost_segments": [{"mw_upto": 10, "usd_per_mwh": 30}, {"mw_upto": 20, "usd_per_mwh": 10}]}],
            "loads": []}"#;
        assert!(load_case_str(text).is_ok());
    }

    #[test]
    fn self_loop_and_duplicates() {
        let text = r#"{"schema": "grid-isle/1", "buses": [{"id": 1}, {"id": 1}], "lines": [],
            "generators": [], "loads": []}"#;
        assert!(matches!(load_case_str(text), Err(CaseError::Duplicate { .. })));
        let text = r#"{"schema": "grid-isle/1", "buses": [{"id": 1}],
            "lines": [{"id": "a", "from": 1, "to": 1, "p_min_mw": -1, "p_max_mw": 1}],
            "generators": [], "loads": []}"#;
        assert!(matches!(load_case_str(text), Err(CaseError::Invalid { .. })));
    }

    #[test]
    fn weights_default_to_normalized_ratings() {
        let text = r#"{"schema": "grid-isle/1", "buses": [{"id": 1}, {"id": 2}],
            "lines": [{"id": "a", "from": 1, "to": 2, "p_min_mw": -175, "p_max_mw": 175},
                      {"id": "b", "from": 1, "to": 2, "p_min_mw": -500, "p_max_mw": 500}],
            "generators": [], "loads": []}"#;
        let t = load_case_str(text).unwrap();
        assert_eq!(t.lines[0].omega, 0.35);
        assert_eq!(t.lines[1].omega, 1.0);
    }

    #[test]
    fn cut_set_two_bus() {
        let t = two_bus();
        let p = Partition::from_unhealthy(&t, [2].into()).unwrap();
        assert_eq!(cut_set(&t, &p), vec!["L1".to_string()]);
        let all = Partition::from_unhealthy(&t, BTreeSet::new()).unwrap();
        assert!(cut_set(&t, &all).is_empty());
        let caps = partition_capacities(&t, &all);
        assert_eq!(caps.unhealthy, Capacities::default());
    }

    #[test]
    fn round_trip_is_identity() {
        let t = two_bus();
        let doc = emit_case(&t);
        let text = serde_json::to_string(&doc).unwrap();
        assert_eq!(load_case_str(&text).unwrap(), t);
    }

    #[test]
    fn bus_lists() {
        assert_eq!(parse_bus_list("1, 2, 4-6").unwrap(), [1, 2, 4, 5, 6].into());
        assert!(parse_bus_list("3-1").is_err());
    }

    #[test]
    fn cost_curve_integrates_segments() {
        let c = CostCurve {
            segments: vec![
                CostSegment { mw_upto: 10.0, usd_per_mwh: 5.0 },
                CostSegment { mw_upto: 20.0, usd_per_mwh: 7.0 },
            ],
            startup_usd: 0.0,
            shutdown_usd: 0.0,
        };
        assert_eq!(c.cost_at(15.0), 50.0 + 35.0);
        assert_eq!(c.slices(5.0, 20.0), vec![(5.0, 5.0), (10.0, 7.0)]);
    }
}
