//! Event-triggered orchestration: simulator, residual trigger and detection
//! run in one stage; islanding and island economics run in a second stage.
//! The stages are threads joined by an ordered channel.
//!
//! Step 1 partitions the full network after the first islanding decision.
//! If sources inside the step-1 unhealthy island keep alarming (at least
//! `persistence_alarms` alarms within `persistence_s` of step 1), that
//! island is partitioned again (step 2).

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use web_time::Instant;

use crate::detection::{
    self, extract_features, Decision, DetectError, EnsembleDetector, FeatureLayout, Metrics, ModelBundle,
    RoundClassifier, TrainParams, TrainingMetadata, VoteConfig,
};
use crate::dispatch::{self, IslandReport};
use crate::dynamics::{self, DatasetConfig, DgModel, ModelSpec, Scenario, SensorSpec, SimError};
use crate::grid::{BusId, GridTopology};
use crate::islanding::{self, IslandingConfig, IslandingError, IslandingSolution, SolveOptions, SolveStatus};
use crate::skr::{self, AlarmEvent, SkrConfig, SkrError, SkrState};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("simulation: {0}")]
    Sim(#[from] SimError),
    #[error("detection: {0}")]
    Detect(#[from] DetectError),
    #[error("trigger: {0}")]
    Skr(#[from] SkrError),
    #[error("cannot write {path}: {message}")]
    Output { path: PathBuf, message: String },
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub topology: GridTopology,
    pub scenario_name: String,
    pub scenario: Scenario,
    pub bundle: ModelBundle,
    pub islanding: IslandingConfig,
    pub trigger: SkrConfig,
    pub votes: VoteConfig,
    pub persistence_s: f64,
    pub persistence_alarms: usize,
    pub solve: SolveOptions,
}

impl RunConfig {
    pub fn new(topology: GridTopology, scenario_name: impl Into<String>, scenario: Scenario, bundle: ModelBundle) -> Self {
        let votes = bundle.metadata.votes;
        RunConfig {
            topology,
            scenario_name: scenario_name.into(),
            scenario,
            bundle,
            islanding: IslandingConfig::default(),
            trigger: SkrConfig::default(),
            votes,
            persistence_s: 0.5,
            persistence_alarms: 3,
            solve: SolveOptions::default(),
        }
    }
}

/// A classifier wrapper counting invocations.
pub struct CountingClassifier<'a> {
    inner: &'a EnsembleDetector,
    pub calls: AtomicUsize,
}

impl RoundClassifier for CountingClassifier<'_> {
    fn classify_round(&self, x: &[f64]) -> Result<[u8; 3], DetectError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        detection::classify_round(self.inner, x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub alarm: AlarmEvent,
    pub decision: Option<Decision>,
    /// Time of the last frame used by the decision.
    pub decided_at_s: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IslandOutcome {
    pub name: String,
    pub buses: BTreeSet<BusId>,
    pub healthy: bool,
    pub contains_anomaly: bool,
    pub report: Option<IslandReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IslandingStep {
    pub step: usize,
    pub triggered_at_s: f64,
    pub anomalous_bus: BusId,
    /// Buses of the network that was partitioned.
    pub network: BTreeSet<BusId>,
    pub solution: IslandingSolution,
    pub cut_lines: Vec<String>,
    pub max_violation: f64,
    pub islands: Vec<IslandOutcome>,
    pub aggregate_cost_usd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageError {
    pub stage: String,
    pub t_s: Option<f64>,
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub t: f64,
    pub source: usize,
    pub residual: f64,
    pub threshold: f64,
}

/// Wall-clock measurements; excluded from reproducibility comparisons.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub rounds: usize,
    pub mean_round_ms: f64,
    pub max_round_ms: f64,
    pub milp_s: Vec<f64>,
    pub total_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub complete: bool,
    pub alarms: Vec<AlarmEvent>,
    pub sessions: Vec<Session>,
    pub classifier_invocations: usize,
    /// Label of the first completed session, if any alarm fired.
    pub scenario_decision: Option<u8>,
    /// Seconds from the first alarm to the first islanding decision.
    pub decision_latency_s: Option<f64>,
    pub nominal_cost_usd: Option<f64>,
    pub steps: Vec<IslandingStep>,
    pub errors: Vec<StageError>,
    pub residual_trace: Vec<TracePoint>,
    pub timing: Timing,
}

impl RunReport {
    pub fn solver_timed_out(&self) -> bool {
        self.steps.iter().any(|s| s.solution.status == SolveStatus::TimeLimit)
    }

    pub fn infeasible(&self) -> bool {
        self.errors.iter().any(|e| e.kind == "infeasible")
    }
}

enum Message {
    Alarm(AlarmEvent),
    Decision { alarm: AlarmEvent, decision: Decision, t: f64 },
    Done,
}

struct OpenSession {
    alarm: AlarmEvent,
    start: usize,
    votes: Vec<[u8; 3]>,
}

struct DetectionOutput {
    sessions: Vec<Session>,
    trace: Vec<TracePoint>,
    round_ms: Vec<f64>,
    errors: Vec<StageError>,
}

/// Stage 1: simulate, trigger, classify; forwards alarms and decisions.
fn detection_stage(
    config: &RunConfig,
    classifier: &CountingClassifier<'_>,
    tx: mpsc::Sender<Message>,
) -> Result<DetectionOutput, PipelineError> {
    let meta = &config.bundle.metadata;
    let model = DgModel::synthetic(&meta.model)?;
    let frames = dynamics::run_scenario(&model, &meta.sensors, &config.scenario)?;
    let layout = config.bundle.detector.layout;
    let n_dg = model.n_dg;
    let dof = dynamics::STATES_PER_DG;
    let trigger = SkrConfig { dof, ..config.trigger };
    let mut states: Vec<SkrState> = (0..n_dg).map(|j| SkrState::new(j, trigger)).collect::<Result<_, _>>()?;
    let w = meta.window_frames.max(1);
    let mut open: Vec<OpenSession> = Vec::new();
    let mut out = DetectionOutput { sessions: Vec::new(), trace: Vec::new(), round_ms: Vec::new(), errors: Vec::new() };
    let mut forced: Vec<_> = config.scenario.forced_alarms.clone();
    forced.sort_by(|a, b| a.t_s.total_cmp(&b.t_s));
    let mut forced = forced.into_iter().peekable();
    let send = |m: Message| {
        // the receiver only disappears if stage 2 panicked
        let _ = tx.send(m);
    };

    for (idx, f) in frames.iter().enumerate() {
        let mut new_alarms = Vec::new();
        for (j, st) in states.iter_mut().enumerate() {
            let comps: Vec<f64> = (0..dof).map(|k| f.y[j * dof + k] - f.y_est[j * dof + k]).collect();
            let (r, alarm) = skr::observe(st, f.t, &comps)?;
            out.trace.push(TracePoint { t: f.t, source: j, residual: r, threshold: st.threshold() });
            new_alarms.extend(alarm);
        }
        while forced.peek().is_some_and(|fa| fa.t_s <= f.t + 0.5 * config.scenario.dt_s) {
            let fa = forced.next().expect("peeked");
            new_alarms.push(skr::force_alarm(f.t, fa.source));
        }
        for a in new_alarms {
            send(Message::Alarm(a));
            open.push(OpenSession { alarm: a, start: idx + 1, votes: Vec::new() });
        }
        // advance sessions whose next window just completed
        let mut still_open = Vec::new();
        for mut s in open.drain(..) {
            let end = s.start + (s.votes.len() + 1) * w;
            if end != idx + 1 {
                still_open.push(s);
                continue;
            }
            let window = &frames[end - w..end];
            let started = Instant::now();
            let votes = extract_features(window, layout).and_then(|x| classifier.classify_round(&x));
            out.round_ms.push(started.elapsed().as_secs_f64() * 1e3);
            match votes {
                Err(e) => out.sessions.push(Session { alarm: s.alarm, decision: None, decided_at_s: None, error: Some(e.to_string()) }),
                Ok(v) => {
                    s.votes.push(v);
                    match detection::decide(s.votes.iter(), &config.votes) {
                        Ok(d) => {
                            send(Message::Decision { alarm: s.alarm, decision: d.clone(), t: f.t });
                            out.sessions.push(Session { alarm: s.alarm, decision: Some(d), decided_at_s: Some(f.t), error: None });
                        }
                        Err(DetectError::StreamExhausted { .. }) => still_open.push(s),
                        Err(e) => out.sessions.push(Session { alarm: s.alarm, decision: None, decided_at_s: None, error: Some(e.to_string()) }),
                    }
                }
            }
        }
        open = still_open;
    }
    let end_t = frames.last().map_or(0.0, |f| f.t);
    for s in open {
        let e = DetectError::StreamExhausted { rounds: s.votes.len(), needed: config.votes.rounds };
        out.errors.push(StageError { stage: "detection".into(), t_s: Some(end_t), kind: "stream_exhausted".into(), message: format!("session for alarm at {:.3} s: {e}", s.alarm.t) });
        out.sessions.push(Session { alarm: s.alarm, decision: None, decided_at_s: None, error: Some(e.to_string()) });
    }
    out.sessions.sort_by(|a, b| a.alarm.t.total_cmp(&b.alarm.t).then(a.alarm.source.cmp(&b.alarm.source)));
    send(Message::Done);
    Ok(out)
}

struct IslandingOutput {
    steps: Vec<IslandingStep>,
    errors: Vec<StageError>,
    nominal_cost: Option<f64>,
    milp_s: Vec<f64>,
}

/// Partition `network`, dispatch every resulting island.
pub fn islanding_step(
    step: usize,
    triggered_at_s: f64,
    network: &GridTopology,
    anomalous_bus: BusId,
    config: &IslandingConfig,
    opts: &SolveOptions,
) -> Result<IslandingStep, IslandingError> {
    let anomalous = BTreeSet::from([anomalous_bus]);
    let inst = islanding::build_milp(network, &anomalous, config)?;
    let solution = islanding::solve(&inst, opts)?;
    let max_violation = islanding::validate_solution(&inst, &solution).values().copied().fold(0.0, f64::max);
    let islands = islanding::islands_of(&solution, network, &anomalous)?;
    let cut_lines = solution.open_lines();
    let mut outcomes = Vec::new();
    let mut counters = [0usize; 2];
    for isl in islands {
        let side = usize::from(isl.healthy);
        counters[side] += 1;
        let name = format!("{}-{}-{}", step, if isl.healthy { "healthy" } else { "unhealthy" }, counters[side]);
        let (report, error) = match dispatch::island_report(network, name.clone(), &isl.buses, cut_lines.clone()) {
            Ok(r) => (Some(r), None),
            Err(e) => (None, Some(e.to_string())),
        };
        outcomes.push(IslandOutcome { name, buses: isl.buses, healthy: isl.healthy, contains_anomaly: isl.contains_anomaly, report, error });
    }
    let aggregate_cost_usd = outcomes.iter().filter_map(|o| o.report.as_ref()).map(|r| r.cost_usd).sum();
    Ok(IslandingStep {
        step,
        triggered_at_s,
        anomalous_bus,
        network: network.bus_ids(),
        solution,
        cut_lines,
        max_violation,
        islands: outcomes,
        aggregate_cost_usd,
    })
}

fn error_kind(e: &IslandingError) -> &'static str {
    match e {
        IslandingError::Infeasible { .. } => "infeasible",
        IslandingError::TimeoutWithoutIncumbent => "timeout",
        _ => "islanding",
    }
}

/// Stage 2: islanding and evaluation, driven by the ordered message stream.
fn islanding_stage(config: &RunConfig, rx: mpsc::Receiver<Message>) -> IslandingOutput {
    let mut out = IslandingOutput { steps: Vec::new(), errors: Vec::new(), nominal_cost: None, milp_s: Vec::new() };
    match dispatch::nominal_dispatch(&config.topology) {
        Ok(d) => out.nominal_cost = Some(d.cost_usd),
        Err(e) => out.errors.push(StageError { stage: "dispatch".into(), t_s: None, kind: "dispatch".into(), message: e.to_string() }),
    }
    // (time of step 1, anomalous bus, unhealthy network, alarms counted)
    let mut watch: Option<(f64, BusId, GridTopology, usize)> = None;
    let mut step1_done = false;
    let mut step2_done = false;
    for msg in rx {
        match msg {
            Message::Done => break,
            Message::Decision { alarm, decision, t } => {
                if step1_done || decision.label != 1 {
                    continue;
                }
                step1_done = true;
                let bus = config.scenario.bus_of(alarm.source);
                let started = Instant::now();
                let result = islanding_step(1, t, &config.topology, bus, &config.islanding, &config.solve);
                out.milp_s.push(started.elapsed().as_secs_f64());
                match result {
                    Ok(step) => {
                        if let Some(isl) = step.islands.iter().find(|i| i.contains_anomaly) {
                            let closed: BTreeSet<String> =
                                step.solution.w.iter().filter(|(_, &v)| v == 1).map(|(k, _)| k.clone()).collect();
                            let net = config.topology.with_lines(&closed).subnetwork(&isl.buses);
                            watch = Some((t, bus, net, 0));
                        }
                        out.steps.push(step);
                    }
                    Err(e) => out.errors.push(StageError { stage: "islanding".into(), t_s: Some(t), kind: error_kind(&e).into(), message: e.to_string() }),
                }
            }
            Message::Alarm(a) => {
                let Some((t1, bus, net, count)) = watch.as_mut() else { continue };
                if step2_done || a.t <= *t1 || a.t > *t1 + config.persistence_s {
                    continue;
                }
                if !net.has_bus(config.scenario.bus_of(a.source)) {
                    continue;
                }
                *count += 1;
                if *count < config.persistence_alarms {
                    continue;
                }
                step2_done = true;
                if net.buses.len() < 2 {
                    continue;
                }
                let started = Instant::now();
                let result = islanding_step(2, a.t, net, *bus, &config.islanding, &config.solve);
                out.milp_s.push(started.elapsed().as_secs_f64());
                match result {
                    Ok(step) => out.steps.push(step),
                    Err(e) => out.errors.push(StageError { stage: "islanding".into(), t_s: Some(a.t), kind: error_kind(&e).into(), message: e.to_string() }),
                }
            }
        }
    }
    out
}

/// Run the full event-triggered pipeline for one scenario.
pub fn run(config: &RunConfig) -> Result<RunReport, PipelineError> {
    config.votes.validate()?;
    config.scenario.validate(config.bundle.metadata.model.n_dg)?;
    for j in 0..config.bundle.metadata.model.n_dg {
        let b = config.scenario.bus_of(j);
        if !config.topology.has_bus(b) {
            return Err(PipelineError::Config(format!("DG {j} is mapped to bus {b}, which is not in the case")));
        }
    }
    let started = Instant::now();
    let classifier = CountingClassifier { inner: &config.bundle.detector, calls: AtomicUsize::new(0) };
    let (tx, rx) = mpsc::channel();
    let (det, isl) = std::thread::scope(|s| {
        let det = s.spawn(|| detection_stage(config, &classifier, tx));
        let isl = s.spawn(|| islanding_stage(config, rx));
        (det.join().expect("detection stage panicked"), isl.join().expect("islanding stage panicked"))
    });
    let det = det?;
    let alarms: Vec<AlarmEvent> = det.sessions.iter().map(|s| s.alarm).collect();
    let first_alarm = alarms.first().map(|a| a.t);
    let scenario_decision = det.sessions.iter().find_map(|s| s.decision.as_ref().map(|d| d.label));
    let first_islanding = det.sessions.iter().filter(|s| s.decision.as_ref().is_some_and(|d| d.label == 1)).filter_map(|s| s.decided_at_s).reduce(f64::min);
    let mut errors = det.errors;
    errors.extend(isl.errors);
    let rounds = det.round_ms.len();
    let complete = errors.is_empty() && !isl.steps.iter().any(|s| s.solution.status == SolveStatus::TimeLimit);
    Ok(RunReport {
        scenario: config.scenario_name.clone(),
        complete,
        alarms,
        sessions: det.sessions,
        classifier_invocations: classifier.calls.load(Ordering::Relaxed),
        scenario_decision,
        decision_latency_s: first_islanding.zip(first_alarm).map(|(d, a)| d - a),
        nominal_cost_usd: isl.nominal_cost,
        steps: isl.steps,
        errors,
        residual_trace: det.trace,
        timing: Timing {
            rounds,
            mean_round_ms: if rounds > 0 { det.round_ms.iter().sum::<f64>() / rounds as f64 } else { 0.0 },
            max_round_ms: det.round_ms.iter().copied().fold(0.0, f64::max),
            milp_s: isl.milp_s,
            total_s: started.elapsed().as_secs_f64(),
        },
    })
}

// ---------------------------------------------------------------------------
// Training

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub model: ModelSpec,
    pub sensors: SensorSpec,
    pub scenarios: Vec<(String, Scenario)>,
    pub data_seeds: Vec<u64>,
    pub dataset: DatasetConfig,
    pub params: TrainParams,
    pub votes: VoteConfig,
    /// Every k-th sample is held out for evaluation.
    pub holdout_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelSpec::default(),
            sensors: SensorSpec::default(),
            scenarios: Scenario::standard_suite(1),
            data_seeds: (1..=10).collect(),
            dataset: DatasetConfig::default(),
            params: TrainParams::default(),
            votes: VoteConfig::default(),
            holdout_every: 5,
        }
    }
}

/// Simulate, train the three classifiers, evaluate on a holdout split and
/// package the result. Identical configs give identical bundles.
pub fn train_command(config: &TrainConfig) -> Result<(ModelBundle, Metrics, Option<String>), PipelineError> {
    config.votes.validate()?;
    let model = DgModel::synthetic(&config.model)?;
    let scenarios: Vec<Scenario> = config.scenarios.iter().map(|(_, s)| s.clone()).collect();
    let set = dynamics::make_training_set(&model, &config.sensors, &scenarios, &config.data_seeds, &config.dataset)?;
    let (zeros, ones) = set.data.class_counts();
    if zeros == 0 || ones == 0 {
        return Err(PipelineError::Detect(DetectError::SingleClass));
    }
    let (train, holdout) = set.data.split_every(config.holdout_every, 0);
    let layout = FeatureLayout { k_buses: config.sensors.k_buses, n_dg: config.model.n_dg };
    let detector = EnsembleDetector::train(layout, &train, &config.params)?;
    let measured = if holdout.is_empty() { detection::evaluate(&detector, &train)? } else { detection::evaluate(&detector, &holdout)? };
    let stored = Metrics { mean_round_ms: 0.0, max_round_ms: 0.0, ..measured };
    let bundle = ModelBundle {
        format: detection::BUNDLE_FORMAT.into(),
        detector,
        metadata: TrainingMetadata {
            seed: config.params.seed,
            model: config.model,
            sensors: config.sensors,
            scenarios: config.scenarios.iter().map(|(n, _)| n.clone()).collect(),
            data_seeds: config.data_seeds.clone(),
            window_frames: config.dataset.window_frames,
            train_samples: train.len(),
            holdout_samples: holdout.len(),
            votes: config.votes,
            holdout: stored,
        },
    };
    Ok((bundle, measured, set.warning))
}

// ---------------------------------------------------------------------------
// Report emission

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Csv,
}

impl std::str::FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            other => Err(format!("unknown format {other:?} (expected json or csv)")),
        }
    }
}

fn join_buses(b: &BTreeSet<BusId>) -> String {
    b.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

/// Rows shaped like the step tables: one per island.
pub fn island_rows(report: &RunReport) -> (Vec<&'static str>, Vec<Vec<String>>) {
    let header = vec![
        "step", "island", "buses", "p_gen_max_mw", "p_dem_mw", "q_gen_max_mvar", "q_dem_mvar", "disconnected_lines", "shed_pct", "shed_bound_pct", "cost_usd", "error",
    ];
    let mut rows = Vec::new();
    for s in &report.steps {
        for i in &s.islands {
            let mut row = vec![s.step.to_string(), i.name.clone(), join_buses(&i.buses)];
            match &i.report {
                Some(r) => row.extend([
                    format!("{}", r.capacities.p_gen_max_mw),
                    format!("{}", r.capacities.p_dem_mw),
                    format!("{}", r.capacities.q_gen_max_mvar),
                    format!("{}", r.capacities.q_dem_mvar),
                    s.cut_lines.join(" "),
                    format!("{:.4}", 100.0 * r.shed_fraction),
                    format!("{:.4}", 100.0 * r.shed_lower_bound),
                    format!("{:.2}", r.cost_usd),
                    String::new(),
                ]),
                None => {
                    row.extend(std::iter::repeat_n(String::new(), 4));
                    row.extend([s.cut_lines.join(" "), String::new(), String::new(), String::new(), i.error.clone().unwrap_or_default()]);
                }
            }
            rows.push(row);
        }
    }
    (header, rows)
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), PipelineError> {
    let err = |e: csv::Error| PipelineError::Output { path: path.to_path_buf(), message: e.to_string() };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    w.flush().map_err(|e| PipelineError::Output { path: path.to_path_buf(), message: e.to_string() })
}

fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    std::fs::write(path, text).map_err(|e| PipelineError::Output { path: path.to_path_buf(), message: e.to_string() })
}

/// Credibility after each round of each session, for plotting.
pub fn credibility_rows(report: &RunReport) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for (k, s) in report.sessions.iter().enumerate() {
        if let Some(d) = &s.decision {
            for (r, c) in d.trace.iter().enumerate() {
                rows.push(vec![k.to_string(), format!("{}", s.alarm.t), s.alarm.source.to_string(), (r + 1).to_string(), format!("{c}")]);
            }
        }
    }
    rows
}

/// Write the report and its plot data into `dir`; returns the files written.
pub fn emit_report(report: &RunReport, formats: &[Format], dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    std::fs::create_dir_all(dir).map_err(|e| PipelineError::Output { path: dir.to_path_buf(), message: e.to_string() })?;
    let mut written = Vec::new();
    for f in formats {
        match f {
            Format::Json => {
                let p = dir.join("report.json");
                write_text(&p, &serde_json::to_string_pretty(report).expect("report serializes"))?;
                written.push(p);
            }
            Format::Csv => {
                let p = dir.join("summary.csv");
                let step_cost = |k: usize| report.steps.iter().find(|s| s.step == k).map(|s| format!("{:.2}", s.aggregate_cost_usd)).unwrap_or_default();
                let row = vec![
                    report.scenario.clone(),
                    report.complete.to_string(),
                    report.alarms.len().to_string(),
                    report.sessions.len().to_string(),
                    report.classifier_invocations.to_string(),
                    report.scenario_decision.map(|d| d.to_string()).unwrap_or_default(),
                    report.nominal_cost_usd.map(|c| format!("{c:.2}")).unwrap_or_default(),
                    step_cost(1),
                    step_cost(2),
                    report.steps.iter().map(|s| format!("{:.3e}", s.solution.gap)).collect::<Vec<_>>().join(" "),
                ];
                write_csv(
                    &p,
                    &["scenario", "complete", "alarms", "sessions", "classifier_invocations", "decision", "nominal_cost_usd", "step1_cost_usd", "step2_cost_usd", "gaps"],
                    [row],
                )?;
                written.push(p);
                let p = dir.join("islands.csv");
                let (h, rows) = island_rows(report);
                write_csv(&p, &h, rows)?;
                written.push(p);
                let p = dir.join("alarms.csv");
                write_csv(
                    &p,
                    &["t", "source", "residual", "threshold", "forced"],
                    report.alarms.iter().map(|a| vec![format!("{}", a.t), a.source.to_string(), format!("{}", a.residual), format!("{}", a.threshold), a.forced.to_string()]),
                )?;
                written.push(p);
                let p = dir.join("errors.csv");
                write_csv(
                    &p,
                    &["stage", "t", "kind", "message"],
                    report.errors.iter().map(|e| vec![e.stage.clone(), e.t_s.map(|t| t.to_string()).unwrap_or_default(), e.kind.clone(), e.message.clone()]),
                )?;
                written.push(p);
            }
        }
    }
    // plot data is columnar regardless of the report format
    let p = dir.join("residual_trace.csv");
    write_csv(
        &p,
        &["t", "source", "residual", "threshold"],
        report.residual_trace.iter().map(|t| vec![format!("{}", t.t), t.source.to_string(), format!("{}", t.residual), format!("{}", t.threshold)]),
    )?;
    written.push(p);
    let p = dir.join("credibility_trace.csv");
    write_csv(&p, &["session", "alarm_t", "source", "round", "credibility"], credibility_rows(report))?;
    written.push(p);
    Ok(written)
}
