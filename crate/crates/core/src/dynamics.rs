//! Discrete-time small-signal simulation of inverter-interfaced DGs with
//! injectable faults and attacks.
//!
//! The concrete plant matrices of a real feeder are not available, so the
//! model is a seeded synthetic one: each DG contributes four deviation states
//! (voltage, angle, frequency, current) that are measured directly, and the
//! DGs are coupled through the state matrix. The open-loop matrix is built as
//! `S - (a I + R R^T)` with `S` skew-symmetric, and the feedback is
//! `K = -g B_c^T`, so the closed loop has a negative-definite symmetric part
//! and the discretized state norm decays monotonically.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// States (and monitored outputs) per DG: dv, d_delta, df, di.
pub const STATES_PER_DG: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("state diverged (non-finite) at t = {t:.4} s")]
    Diverged { t: f64 },
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("unstable discretization: spectral radius {0:.6} >= 1")]
    Unstable(f64),
    #[error("empty dataset: no scenarios given")]
    EmptyDataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Discretization {
    #[default]
    Exact,
    ForwardEuler,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DgModel {
    /// Closed-loop continuous-time state matrix.
    pub a_tilde: DMatrix<f64>,
    /// Input matrix; columns `0..N` are control inputs, `N..2N` demand inputs.
    pub b_mat: DMatrix<f64>,
    pub c_mat: DMatrix<f64>,
    pub k_mat: DMatrix<f64>,
    pub dt: f64,
    pub discretization: Discretization,
    pub n_dg: usize,
    ad: DMatrix<f64>,
    bd: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub n_dg: usize,
    pub dt: f64,
    pub seed: u64,
    pub discretization: Discretization,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec { n_dg: 4, dt: 1e-3, seed: 7, discretization: Discretization::Exact }
    }
}

impl DgModel {
    /// Seeded synthetic model. Feedback gain is halved until the discretized
    /// closed loop is a strict contraction.
    pub fn synthetic(spec: &ModelSpec) -> Result<Self, SimError> {
        let n_dg = spec.n_dg;
        let m = STATES_PER_DG * n_dg;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut normal = |scale: f64| -> f64 {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * scale
        };
        let mut s = DMatrix::<f64>::zeros(m, m);
        for i in 0..m {
            for j in i + 1..m {
                // stronger rotation inside a DG block than across DGs
                let same = i / STATES_PER_DG == j / STATES_PER_DG;
                let v = normal(if same { 25.0 } else { 4.0 });
                s[(i, j)] = v;
                s[(j, i)] = -v;
            }
        }
        let r = DMatrix::<f64>::from_fn(m, m, |_, _| normal(1.5));
        let alpha = 30.0;
        let a_open = &s - (DMatrix::<f64>::identity(m, m) * alpha + &r * r.transpose());

        let mut b = DMatrix::<f64>::zeros(m, 2 * n_dg);
        // control input acts mostly on voltage and current of its own DG
        let control_pattern = [40.0, 8.0, 4.0, 25.0];
        // demand input lowers voltage and frequency and raises current
        let demand_pattern = [-18.0, -6.0, -10.0, 35.0];
        for j in 0..n_dg {
            for k in 0..STATES_PER_DG {
                b[(j * STATES_PER_DG + k, j)] = control_pattern[k] * (1.0 + 0.1 * normal(1.0));
                b[(j * STATES_PER_DG + k, n_dg + j)] = demand_pattern[k] * (1.0 + 0.1 * normal(1.0));
            }
        }
        let c = DMatrix::<f64>::identity(m, m);
        let bc = b.columns(0, n_dg).into_owned();

        let mut gain = 0.05;
        for _ in 0..20 {
            let k = -(bc.transpose()) * gain;
            let a_tilde = &a_open + &bc * &k * &c;
            let (ad, bd) = discretize(&a_tilde, &b, spec.dt, spec.discretization);
            let norm = ad.clone().svd(false, false).singular_values.max();
            if norm < 1.0 {
                return Ok(DgModel {
                    a_tilde,
                    b_mat: b,
                    c_mat: c,
                    k_mat: k,
                    dt: spec.dt,
                    discretization: spec.discretization,
                    n_dg,
                    ad,
                    bd,
                });
            }
            gain *= 0.5;
        }
        let (ad, _) = discretize(&a_open, &b, spec.dt, spec.discretization);
        Err(SimError::Unstable(spectral_radius(&ad)))
    }

    pub fn state_dim(&self) -> usize {
        self.a_tilde.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.c_mat.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b_mat.ncols()
    }

    pub fn discrete_a(&self) -> &DMatrix<f64> {
        &self.ad
    }

    pub fn discrete_b(&self) -> &DMatrix<f64> {
        &self.bd
    }

    /// Largest eigenvalue magnitude of the discretized state matrix.
    pub fn spectral_radius(&self) -> f64 {
        spectral_radius(&self.ad)
    }
}

fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn discretize(a: &DMatrix<f64>, b: &DMatrix<f64>, dt: f64, how: Discretization) -> (DMatrix<f64>, DMatrix<f64>) {
    let m = a.nrows();
    let p = b.ncols();
    match how {
        Discretization::ForwardEuler => (DMatrix::identity(m, m) + a * dt, b * dt),
        Discretization::Exact => {
            // exp([[A, B], [0, 0]] dt) = [[Ad, Bd], [0, I]]
            let mut aug = DMatrix::<f64>::zeros(m + p, m + p);
            aug.view_mut((0, 0), (m, m)).copy_from(&(a * dt));
            aug.view_mut((0, m), (m, p)).copy_from(&(b * dt));
            let e = aug.exp();
            (e.view((0, 0), (m, m)).into_owned(), e.view((0, m), (m, p)).into_owned())
        }
    }
}

/// One discrete step: `x' = Ad x + Bd u`, `y = C x'`.
pub fn step(model: &DgModel, state: &DVector<f64>, u: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>), SimError> {
    if state.len() != model.state_dim() {
        return Err(SimError::Dimension(format!("state has {} entries, model has {}", state.len(), model.state_dim())));
    }
    if u.len() != model.input_dim() {
        return Err(SimError::Dimension(format!("input has {} entries, model has {}", u.len(), model.input_dim())));
    }
    let next = &model.ad * state + &model.bd * u;
    let y = &model.c_mat * &next;
    Ok((next, y))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioLabel {
    Nominal,
    ThreePhaseFaultPcc,
    ControlInputAttack,
    LineToLineFault,
    LoadAlteration,
}

impl ScenarioLabel {
    /// Class used for training: faults and attacks are abnormal, a load
    /// change is ordinary operation.
    pub fn abnormal(self) -> bool {
        matches!(self, ScenarioLabel::ThreePhaseFaultPcc | ScenarioLabel::ControlInputAttack | ScenarioLabel::LineToLineFault)
    }

    pub fn name(self) -> &'static str {
        match self {
            ScenarioLabel::Nominal => "nominal",
            ScenarioLabel::ThreePhaseFaultPcc => "three_phase_fault_pcc",
            ScenarioLabel::ControlInputAttack => "control_input_attack",
            ScenarioLabel::LineToLineFault => "line_to_line_fault",
            ScenarioLabel::LoadAlteration => "load_alteration",
        }
    }
}

/// One disturbance on the timeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioEvent {
    pub label: ScenarioLabel,
    pub start_s: f64,
    pub end_s: f64,
    /// Fault depth, attack bias or load fraction, depending on `label`.
    pub magnitude: f64,
    /// Target DG index (0-based).
    #[serde(default)]
    pub target: usize,
}

impl ScenarioEvent {
    pub fn active(&self, t: f64) -> bool {
        t >= self.start_s && t < self.end_s
    }
}

/// Scenario file: a timeline of events on one simulated horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub horizon_s: f64,
    pub dt_s: f64,
    pub seed: u64,
    #[serde(default)]
    pub events: Vec<ScenarioEvent>,
    /// Forced alarms `(t, DG index)` injected into the trigger stage.
    #[serde(default)]
    pub forced_alarms: Vec<ForcedAlarm>,
    /// Grid bus each DG is attached to; defaults to bus 4 for every DG.
    #[serde(default)]
    pub dg_bus: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForcedAlarm {
    pub t_s: f64,
    pub source: usize,
}

impl Scenario {
    pub fn nominal(horizon_s: f64, seed: u64) -> Self {
        Scenario { horizon_s, dt_s: 1e-3, seed, events: Vec::new(), forced_alarms: Vec::new(), dg_bus: Vec::new() }
    }

    pub fn with_event(mut self, label: ScenarioLabel, start_s: f64, end_s: f64, magnitude: f64, target: usize) -> Self {
        self.events.push(ScenarioEvent { label, start_s, end_s, magnitude, target });
        self
    }

    /// The timeline of the four disturbances studied on the feeder, each in
    /// its own scenario: PCC fault, control attack, line-to-line fault and a
    /// 50% load alteration (the last with a forced alarm at 0.77 s).
    pub fn standard_suite(seed: u64) -> Vec<(String, Scenario)> {
        vec![
            ("three_phase_fault_pcc".into(), Scenario::nominal(1.0, seed).with_event(ScenarioLabel::ThreePhaseFaultPcc, 0.10, 0.15, 0.5, 0)),
            ("control_input_attack".into(), Scenario::nominal(1.0, seed).with_event(ScenarioLabel::ControlInputAttack, 0.25, 0.40, 0.02, 1)),
            ("line_to_line_fault".into(), Scenario::nominal(1.0, seed).with_event(ScenarioLabel::LineToLineFault, 0.50, 0.65, 0.4, 2)),
            ("load_alteration".into(), {
                let mut s = Scenario::nominal(1.0, seed).with_event(ScenarioLabel::LoadAlteration, 0.75, 0.95, 0.5, 0);
                s.forced_alarms.push(ForcedAlarm { t_s: 0.77, source: 0 });
                s
            }),
        ]
    }

    pub fn validate(&self, n_dg: usize) -> Result<(), SimError> {
        if !(self.dt_s > 0.0 && self.horizon_s > 0.0) {
            return Err(SimError::InvalidScenario("horizon_s and dt_s must be positive".into()));
        }
        for (k, e) in self.events.iter().enumerate() {
            if !(0.0 <= e.start_s && e.start_s < e.end_s && e.end_s <= self.horizon_s + 1e-12) {
                return Err(SimError::InvalidScenario(format!("events[{k}]: need 0 <= start < end <= horizon")));
            }
            if e.target >= n_dg {
                return Err(SimError::InvalidScenario(format!("events[{k}]: target DG {} out of range", e.target)));
            }
        }
        for (k, f) in self.forced_alarms.iter().enumerate() {
            if f.source >= n_dg || !(0.0..=self.horizon_s).contains(&f.t_s) {
                return Err(SimError::InvalidScenario(format!("forced_alarms[{k}] out of range")));
            }
        }
        if !self.dg_bus.is_empty() && self.dg_bus.len() != n_dg {
            return Err(SimError::InvalidScenario(format!("dg_bus must list {n_dg} buses")));
        }
        Ok(())
    }

    pub fn bus_of(&self, dg: usize) -> u32 {
        self.dg_bus.get(dg).copied().unwrap_or(4)
    }

    pub fn label_at(&self, t: f64) -> u8 {
        u8::from(self.events.iter().any(|e| e.active(t) && e.label.abnormal()))
    }
}

/// Per-DG three-phase channels in per unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgChannels {
    pub v_abc: [f64; 3],
    pub i_abc: [f64; 3],
    pub thd_abc: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementFrame {
    pub t: f64,
    /// Measured outputs `C x + noise + distortion`.
    pub y: Vec<f64>,
    /// Noise-free model prediction `C x_est` using only known inputs.
    pub y_est: Vec<f64>,
    pub v_pu: Vec<f64>,
    pub delta: Vec<f64>,
    pub freq: Vec<f64>,
    pub dg: Vec<DgChannels>,
    /// 1 while an abnormal event is active.
    pub label: u8,
}

/// Measurement-side configuration: bus count and sensor noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorSpec {
    /// Buses observed for voltage, angle and frequency (K).
    pub k_buses: usize,
    /// Half-width of the bounded uniform sensor noise on each output.
    pub noise: f64,
    pub f_nominal_hz: f64,
}

impl Default for SensorSpec {
    fn default() -> Self {
        SensorSpec { k_buses: 6, noise: 1e-3, f_nominal_hz: 60.0 }
    }
}

/// Simulate `scenario` and return its measurement stream.
///
/// The true state sees every disturbance; the estimate runs the same model
/// on the known inputs only (demand changes), so residuals stay at noise
/// level unless something unexpected happens.
pub fn run_scenario(
    model: &DgModel,
    sensors: &SensorSpec,
    scenario: &Scenario,
) -> Result<Vec<MeasurementFrame>, SimError> {
    scenario.validate(model.n_dg)?;
    let n_dg = model.n_dg;
    let m = model.state_dim();
    let steps = (scenario.horizon_s / scenario.dt_s).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    // fixed bus-coupling weights, a property of the feeder not of the run
    let mut coupling_rng = ChaCha8Rng::seed_from_u64(0x6b75_7331);
    let coupling: Vec<Vec<f64>> = (0..sensors.k_buses)
        .map(|_| {
            let w: Vec<f64> = (0..n_dg).map(|_| coupling_rng.gen_range(0.1..1.0)).collect();
            let s: f64 = w.iter().sum();
            w.into_iter().map(|v| v / s).collect()
        })
        .collect();

    let mut x = DVector::<f64>::zeros(m);
    let mut x_est = DVector::<f64>::zeros(m);
    let mut thd_state = vec![[0.0f64; 3]; n_dg];
    let mut frames = Vec::with_capacity(steps);
    let mut started = vec![false; scenario.events.len()];
    for k in 0..steps {
        let t = k as f64 * scenario.dt_s;
        let mut u = DVector::<f64>::zeros(2 * n_dg);
        let mut u_known = DVector::<f64>::zeros(2 * n_dg);
        let mut v_dist = vec![[0.0f64; 3]; n_dg];
        let mut i_dist = vec![[0.0f64; 3]; n_dg];
        let mut thd_gain = vec![1.0f64; n_dg];
        for (e_idx, e) in scenario.events.iter().enumerate() {
            if !e.active(t) {
                continue;
            }
            let first = !started[e_idx];
            started[e_idx] = true;
            match e.label {
                ScenarioLabel::Nominal => {}
                ScenarioLabel::ControlInputAttack => u[e.target] += e.magnitude,
                ScenarioLabel::LoadAlteration => {
                    for j in 0..n_dg {
                        u[n_dg + j] += 0.01 * e.magnitude;
                        u_known[n_dg + j] += 0.01 * e.magnitude;
                    }
                }
                ScenarioLabel::ThreePhaseFaultPcc => {
                    for j in 0..n_dg {
                        v_dist[j] = [-e.magnitude; 3];
                        i_dist[j] = [1.5 * e.magnitude; 3];
                        thd_gain[j] = 6.0;
                    }
                    if first {
                        for j in 0..n_dg {
                            x[j * STATES_PER_DG] -= 0.02 * e.magnitude;
                            x[j * STATES_PER_DG + 3] += 0.05 * e.magnitude;
                        }
                    }
                }
                ScenarioLabel::LineToLineFault => {
                    let j = e.target;
                    v_dist[j] = [-e.magnitude, -0.6 * e.magnitude, 0.1 * e.magnitude];
                    i_dist[j] = [1.8 * e.magnitude, 1.8 * e.magnitude, 0.0];
                    thd_gain[j] = 8.0;
                    if first {
                        x[j * STATES_PER_DG] -= 0.03 * e.magnitude;
                        x[j * STATES_PER_DG + 3] += 0.06 * e.magnitude;
                    }
                }
            }
        }
        let (nx, y_clean) = step(model, &x, &u)?;
        let (nxe, y_pred) = step(model, &x_est, &u_known)?;
        x = nx;
        x_est = nxe;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SimError::Diverged { t });
        }

        let mut y: Vec<f64> = y_clean.iter().map(|v| v + rng.gen_range(-sensors.noise..=sensors.noise)).collect();
        // faults also distort what the sensors report directly
        for j in 0..n_dg {
            let mean_v = v_dist[j].iter().sum::<f64>() / 3.0;
            let mean_i = i_dist[j].iter().sum::<f64>() / 3.0;
            y[j * STATES_PER_DG] += mean_v;
            y[j * STATES_PER_DG + 3] += mean_i;
        }
        let dg: Vec<DgChannels> = (0..n_dg)
            .map(|j| {
                let base = j * STATES_PER_DG;
                let mut ch = DgChannels { v_abc: [0.0; 3], i_abc: [0.0; 3], thd_abc: [0.0; 3] };
                for p in 0..3 {
                    let jitter = 0.2 * sensors.noise;
                    ch.v_abc[p] = 1.0 + y_clean[base] + v_dist[j][p] + rng.gen_range(-jitter..=jitter);
                    ch.i_abc[p] = 0.6 + y_clean[base + 3] + i_dist[j][p] + rng.gen_range(-jitter..=jitter);
                    let z: f64 = StandardNormal.sample(&mut rng);
                    thd_state[j][p] = 0.9 * thd_state[j][p] + 0.1 * z * 0.004 * thd_gain[j];
                    ch.thd_abc[p] = 0.02 + thd_state[j][p].abs() * thd_gain[j];
                }
                ch
            })
            .collect();
        let per_bus = |offset: usize, scale: f64, base: f64| -> Vec<f64> {
            coupling.iter().map(|w| base + scale * (0..n_dg).map(|j| w[j] * y[j * STATES_PER_DG + offset]).sum::<f64>()).collect()
        };
        frames.push(MeasurementFrame {
            t,
            y_est: y_pred.iter().copied().collect(),
            v_pu: per_bus(0, 1.0, 1.0),
            delta: per_bus(1, 1.0, 0.0),
            freq: per_bus(2, sensors.f_nominal_hz, sensors.f_nominal_hz),
            dg,
            label: scenario.label_at(t),
            y,
        });
    }
    Ok(frames)
}

/// Header and rows of the columnar stream export.
pub fn stream_table(frames: &[MeasurementFrame]) -> (Vec<String>, Vec<Vec<f64>>) {
    let Some(first) = frames.first() else { return (Vec::new(), Vec::new()) };
    let mut header = vec!["t".to_string()];
    header.extend((0..first.y.len()).map(|i| format!("y{i}")));
    header.extend((0..first.v_pu.len()).map(|k| format!("v_pu_{k}")));
    header.extend((0..first.delta.len()).map(|k| format!("delta_{k}")));
    header.extend((0..first.freq.len()).map(|k| format!("f_{k}")));
    for j in 0..first.dg.len() {
        for q in ["v", "i", "thd"] {
            for p in ["a", "b", "c"] {
                header.push(format!("dg{j}_{q}_{p}"));
            }
        }
    }
    header.push("label".into());
    let rows = frames
        .iter()
        .map(|f| {
            let mut r = vec![f.t];
            r.extend(&f.y);
            r.extend(&f.v_pu);
            r.extend(&f.delta);
            r.extend(&f.freq);
            for d in &f.dg {
                r.extend(d.v_abc);
                r.extend(d.i_abc);
                r.extend(d.thd_abc);
            }
            r.push(f.label as f64);
            r
        })
        .collect();
    (header, rows)
}

/// How windows are cut from simulated streams for training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    /// Frames per feature window.
    pub window_frames: usize,
    pub stride_frames: usize,
    /// Downsample the majority class to the minority count.
    pub balance: bool,
    /// Cap on the total sample count (0 = no cap).
    pub max_samples: usize,
    /// Randomize event magnitudes (x0.6..1.4) and targets per seed.
    pub jitter: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig { window_frames: 10, stride_frames: 5, balance: true, max_samples: 1500, jitter: true }
    }
}

/// Result of `make_training_set`; `warning` is set for single-class data.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub data: crate::detection::Dataset,
    pub warning: Option<String>,
}

/// Simulate every scenario once per seed and cut labelled feature windows.
/// A window is abnormal when at least half of its frames are.
pub fn make_training_set(
    model: &DgModel,
    sensors: &SensorSpec,
    scenarios: &[Scenario],
    seeds: &[u64],
    config: &DatasetConfig,
) -> Result<TrainingSet, SimError> {
    use crate::detection::{extract_features, Dataset, FeatureLayout};
    if scenarios.is_empty() || seeds.is_empty() {
        return Err(SimError::EmptyDataset);
    }
    let layout = FeatureLayout { k_buses: sensors.k_buses, n_dg: model.n_dg };
    let mut data = Dataset::default();
    for (s_idx, base) in scenarios.iter().enumerate() {
        for &seed in seeds {
            let mut sc = base.clone();
            sc.seed = seed.wrapping_mul(1_000_003).wrapping_add(s_idx as u64);
            if config.jitter {
                let mut rng = ChaCha8Rng::seed_from_u64(sc.seed ^ 0x5eed);
                for e in &mut sc.events {
                    e.magnitude *= rng.gen_range(0.6..1.4);
                    if matches!(e.label, ScenarioLabel::ControlInputAttack | ScenarioLabel::LineToLineFault) {
                        e.target = rng.gen_range(0..model.n_dg);
                    }
                }
            }
            let frames = run_scenario(model, sensors, &sc)?;
            let w = config.window_frames.max(1);
            let mut start = 0;
            while start + w <= frames.len() {
                let window = &frames[start..start + w];
                let x = extract_features(window, layout).map_err(|e| SimError::InvalidScenario(e.to_string()))?;
                let abnormal = window.iter().filter(|f| f.label == 1).count();
                data.x.push(x);
                data.y.push(u8::from(2 * abnormal >= w));
                start += config.stride_frames.max(1);
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seeds[0] ^ 0xba1a);
    let mut keep: Vec<usize> = (0..data.len()).collect();
    let (zeros, ones) = data.class_counts();
    if config.balance && zeros > 0 && ones > 0 {
        let target = zeros.min(ones);
        let mut pick = |class: u8| -> Vec<usize> {
            let mut idx: Vec<usize> = (0..data.len()).filter(|&i| data.y[i] == class).collect();
            let mut chosen = rand::seq::index::sample(&mut rng, idx.len(), target).into_vec();
            chosen.sort_unstable();
            idx = chosen.into_iter().map(|k| idx[k]).collect();
            idx
        };
        keep = pick(0);
        keep.extend(pick(1));
        keep.sort_unstable();
    }
    if config.max_samples > 0 && keep.len() > config.max_samples {
        let mut chosen = rand::seq::index::sample(&mut rng, keep.len(), config.max_samples).into_vec();
        chosen.sort_unstable();
        keep = chosen.into_iter().map(|k| keep[k]).collect();
    }
    let data = Dataset { x: keep.iter().map(|&i| data.x[i].clone()).collect(), y: keep.iter().map(|&i| data.y[i]).collect() };
    let (zeros, ones) = data.class_counts();
    let warning = (zeros == 0 || ones == 0).then(|| format!("single-class dataset ({zeros} nominal, {ones} abnormal samples)"));
    Ok(TrainingSet { data, warning })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> DgModel {
        DgModel::synthetic(&ModelSpec::default()).unwrap()
    }

    #[test]
    fn zero_is_a_fixed_point() {
        let m = model();
        let (x, y) = step(&m, &DVector::zeros(16), &DVector::zeros(8)).unwrap();
        assert!(x.iter().all(|&v| v == 0.0) && y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn discretized_closed_loop_is_contractive() {
        for disc in [Discretization::Exact, Discretization::ForwardEuler] {
            let m = DgModel::synthetic(&ModelSpec { discretization: disc, ..Default::default() }).unwrap();
            assert!(m.spectral_radius() < 1.0);
            let mut x = DVector::from_fn(16, |i, _| (i as f64 * 0.37).sin());
            let mut prev = x.norm();
            for _ in 0..500 {
                x = step(&m, &x, &DVector::zeros(8)).unwrap().0;
                let n = x.norm();
                assert!(n < prev, "norm rose from {prev} to {n}");
                prev = n;
            }
        }
    }

    #[test]
    fn superposition_holds() {
        let m = model();
        let s1 = DVector::from_fn(16, |i, _| (i as f64).cos());
        let s2 = DVector::from_fn(16, |i, _| 0.3 * i as f64);
        let u1 = DVector::from_fn(8, |i, _| 0.1 * i as f64);
        let u2 = DVector::from_fn(8, |i, _| -0.05 * (i as f64).sin());
        let (a, _) = step(&m, &(&s1 + &s2), &(&u1 + &u2)).unwrap();
        let (b1, _) = step(&m, &s1, &u1).unwrap();
        let (b2, _) = step(&m, &s2, &u2).unwrap();
        let diff = (&a - (&b1 + &b2)).norm();
        assert!(diff <= 1e-9 * a.norm().max(1.0));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let m = model();
        assert!(matches!(step(&m, &DVector::zeros(3), &DVector::zeros(8)), Err(SimError::Dimension(_))));
    }

    #[test]
    fn runs_are_deterministic_and_local() {
        let m = model();
        let s = SensorSpec::default();
        let nominal = run_scenario(&m, &s, &Scenario::nominal(0.6, 3)).unwrap();
        let attacked = Scenario::nominal(0.6, 3).with_event(ScenarioLabel::ControlInputAttack, 0.25, 0.4, 0.004, 1);
        let a1 = run_scenario(&m, &s, &attacked).unwrap();
        let a2 = run_scenario(&m, &s, &attacked).unwrap();
        assert_eq!(a1, a2);
        // before the attack the stream is identical to nominal
        for (f, g) in nominal.iter().zip(&a1).take(250) {
            assert_eq!(f.y, g.y);
            assert_eq!(f.label, 0);
        }
        assert!(a1[300].label == 1 && a1[450].label == 0);
    }

    #[test]
    fn load_alteration_stays_in_envelope() {
        let m = model();
        let sc = Scenario::nominal(1.0, 5).with_event(ScenarioLabel::LoadAlteration, 0.75, 0.95, 0.5, 0);
        let frames = run_scenario(&m, &SensorSpec::default(), &sc).unwrap();
        for f in &frames {
            assert!(f.v_pu.iter().all(|v| (v - 1.0).abs() < 0.1));
            assert!(f.freq.iter().all(|v| (v - 60.0).abs() < 1.0));
            assert_eq!(f.label, 0);
        }
    }

    #[test]
    fn invalid_window_rejected() {
        let m = model();
        let sc = Scenario::nominal(1.0, 5).with_event(ScenarioLabel::LineToLineFault, 0.7, 1.5, 0.4, 0);
        assert!(matches!(run_scenario(&m, &SensorSpec::default(), &sc), Err(SimError::InvalidScenario(_))));
    }

    #[test]
    fn training_set_has_both_classes_and_is_reproducible() {
        let m = model();
        let s = SensorSpec::default();
        let suite: Vec<Scenario> = Scenario::standard_suite(1).into_iter().map(|(_, s)| s).collect();
        let seeds: Vec<u64> = (1..=10).collect();
        let a = make_training_set(&m, &s, &suite, &seeds, &DatasetConfig::default()).unwrap();
        assert!(a.warning.is_none());
        let (zeros, ones) = a.data.class_counts();
        assert!(zeros > 0 && zeros == ones);
        assert_eq!(a.data.x[0].len(), 54);
        assert_eq!(a, make_training_set(&m, &s, &suite, &seeds, &DatasetConfig::default()).unwrap());
    }

    #[test]
    fn training_set_degenerate_inputs() {
        let m = model();
        let s = SensorSpec::default();
        assert_eq!(make_training_set(&m, &s, &[], &[1], &DatasetConfig::default()), Err(SimError::EmptyDataset));
        let nominal = make_training_set(&m, &s, &[Scenario::nominal(0.2, 1)], &[1, 2], &DatasetConfig::default()).unwrap();
        assert!(nominal.warning.is_some());
    }
}
