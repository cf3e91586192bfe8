//! Event classification: window features, three independently trained
//! classifiers (bagged trees, cubic SVM, fine Gaussian SVM) and the
//! multi-round credibility vote that turns their labels into a decision.

pub mod svm;
pub mod tree;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use web_time::Instant;

use crate::dynamics::MeasurementFrame;
pub use svm::{train_svm, Kernel, SvmModel, SvmParams};
pub use tree::{train_bagged_trees, BaggedTreesModel, DecisionTree};

pub const BUNDLE_FORMAT: &str = "grid-isle-model/1";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("dataset has a single class")]
    SingleClass,
    #[error("SMO did not converge within {iterations} iterations")]
    NoConvergence { iterations: usize },
    #[error("missing channel {0}")]
    MissingChannel(String),
    #[error("feature layout mismatch: model expects {expected} features, got {got}")]
    Layout { expected: usize, got: usize },
    #[error("vote stream ended after {rounds} of {needed} rounds")]
    StreamExhausted { rounds: usize, needed: usize },
    #[error("invalid voting configuration: {0}")]
    Config(String),
    #[error("model bundle: {0}")]
    Bundle(String),
}

/// Channel counts: K observed buses and N DGs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub k_buses: usize,
    pub n_dg: usize,
}

impl FeatureLayout {
    pub fn len(&self) -> usize {
        3 * self.k_buses + 9 * self.n_dg
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.len());
        for q in ["v_pu", "delta", "f"] {
            out.extend((0..self.k_buses).map(|k| format!("{q}_{k}")));
        }
        for j in 0..self.n_dg {
            for q in ["v", "i", "thd"] {
                for p in ["a", "b", "c"] {
                    out.push(format!("dg{j}_{q}_{p}"));
                }
            }
        }
        out
    }
}

/// Window means of every channel, in the fixed layout
/// `[v_pu(K), delta(K), f(K), per DG: v_abc, i_abc, thd_abc]`.
pub fn extract_features(window: &[MeasurementFrame], layout: FeatureLayout) -> Result<Vec<f64>, DetectError> {
    if window.is_empty() {
        return Err(DetectError::MissingChannel("(empty window)".into()));
    }
    let mut acc = vec![0.0; layout.len()];
    for f in window {
        let checks = [("v_pu", f.v_pu.len(), layout.k_buses), ("delta", f.delta.len(), layout.k_buses), ("f", f.freq.len(), layout.k_buses), ("dg", f.dg.len(), layout.n_dg)];
        for (name, got, want) in checks {
            if got < want {
                return Err(DetectError::MissingChannel(format!("{name}_{got} at t = {:.4}", f.t)));
            }
        }
        let k = layout.k_buses;
        for i in 0..k {
            acc[i] += f.v_pu[i];
            acc[k + i] += f.delta[i];
            acc[2 * k + i] += f.freq[i];
        }
        for j in 0..layout.n_dg {
            let base = 3 * k + 9 * j;
            let d = &f.dg[j];
            for p in 0..3 {
                acc[base + p] += d.v_abc[p];
                acc[base + 3 + p] += d.i_abc[p];
                acc[base + 6 + p] += d.thd_abc[p];
            }
        }
    }
    let n = window.len() as f64;
    Ok(acc.into_iter().map(|v| v / n).collect())
}

/// Per-feature standardization fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &[Vec<f64>]) -> Result<Self, DetectError> {
        let d = x.first().ok_or(DetectError::EmptyDataset)?.len();
        let n = x.len() as f64;
        let mean: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let std = (0..d)
            .map(|j| {
                let v = x.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
                if v > 0.0 { v.sqrt() } else { 1.0 }
            })
            .collect();
        Ok(Standardizer { mean, std })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(self.mean.iter().zip(&self.std)).map(|(v, (m, s))| (v - m) / s).collect()
    }
}

/// A labelled feature dataset (1 = abnormal / islanding).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<u8>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn class_counts(&self) -> (usize, usize) {
        let ones = self.y.iter().filter(|&&v| v == 1).count();
        (self.y.len() - ones, ones)
    }

    /// Every `k`-th sample (offset `phase`) goes to the holdout set.
    pub fn split_every(&self, k: usize, phase: usize) -> (Dataset, Dataset) {
        let (mut train, mut hold) = (Dataset::default(), Dataset::default());
        for (i, (x, y)) in self.x.iter().zip(&self.y).enumerate() {
            let target = if k > 0 && i % k == phase { &mut hold } else { &mut train };
            target.x.push(x.clone());
            target.y.push(*y);
        }
        (train, hold)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub n_learners: usize,
    pub max_splits: usize,
    pub svm: SvmParams,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams { n_learners: 30, max_splits: 200_000, svm: SvmParams::default(), seed: 1 }
    }
}

/// The three trained classifiers with their input scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleDetector {
    pub layout: FeatureLayout,
    pub scaler: Standardizer,
    pub trees: BaggedTreesModel,
    pub cubic: SvmModel,
    pub gaussian: SvmModel,
}

impl EnsembleDetector {
    /// Trains the three learners on independent threads.
    pub fn train(layout: FeatureLayout, data: &Dataset, params: &TrainParams) -> Result<Self, DetectError> {
        if data.is_empty() {
            return Err(DetectError::EmptyDataset);
        }
        if let Some(r) = data.x.iter().find(|r| r.len() != layout.len()) {
            return Err(DetectError::Layout { expected: layout.len(), got: r.len() });
        }
        let scaler = Standardizer::fit(&data.x)?;
        let xs: Vec<Vec<f64>> = data.x.iter().map(|r| scaler.apply(r)).collect();
        let (xs, y) = (&xs, &data.y);
        let (trees, cubic, gaussian) = std::thread::scope(|s| {
            let t = s.spawn(|| train_bagged_trees(xs, y, params.n_learners, params.max_splits, params.seed));
            let c = s.spawn(|| train_svm(xs, y, Kernel::cubic(), &params.svm));
            let g = s.spawn(|| train_svm(xs, y, Kernel::fine_gaussian(), &params.svm));
            (t.join().expect("tree thread"), c.join().expect("svm thread"), g.join().expect("svm thread"))
        });
        Ok(EnsembleDetector { layout, scaler, trees: trees?, cubic: cubic?, gaussian: gaussian? })
    }
}

/// Something that labels one feature vector three times.
pub trait RoundClassifier {
    fn classify_round(&self, x: &[f64]) -> Result<[u8; 3], DetectError>;
}

impl RoundClassifier for EnsembleDetector {
    fn classify_round(&self, x: &[f64]) -> Result<[u8; 3], DetectError> {
        classify_round(self, x)
    }
}

/// Labels in fixed order (trees, cubic SVM, Gaussian SVM) for a raw feature
/// vector.
pub fn classify_round(models: &EnsembleDetector, x: &[f64]) -> Result<[u8; 3], DetectError> {
    if x.len() != models.layout.len() {
        return Err(DetectError::Layout { expected: models.layout.len(), got: x.len() });
    }
    let z = models.scaler.apply(x);
    Ok([models.trees.predict(&z), models.cubic.predict(&z), models.gaussian.predict(&z)])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoteConfig {
    /// Total rounds NR.
    pub rounds: usize,
    /// Classifiers per round NC.
    pub classifiers: usize,
    /// Round at which an early decision may be taken.
    pub early_round: usize,
    /// Early-exit band: credibility <= low or >= high.
    pub low: f64,
    pub high: f64,
}

impl Default for VoteConfig {
    fn default() -> Self {
        VoteConfig { rounds: 5, classifiers: 3, early_round: 3, low: 0.1, high: 0.9 }
    }
}

impl VoteConfig {
    pub fn validate(&self) -> Result<(), DetectError> {
        if self.classifiers == 0 || self.early_round == 0 || self.rounds < self.early_round {
            return Err(DetectError::Config(format!(
                "need classifiers >= 1 and rounds ({}) >= early round ({})",
                self.rounds, self.early_round
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    /// 1 = islanding, 0 = no islanding.
    pub label: u8,
    pub credibility: f64,
    pub rounds_used: usize,
    pub score: usize,
    pub votes: Vec<Vec<u8>>,
    /// Credibility after each round (for plotting).
    pub trace: Vec<f64>,
}

/// Rounds to label with half-up rounding (0.5 decides islanding).
fn round_half_up(c: f64) -> u8 {
    u8::from(c >= 0.5)
}

/// Accumulate votes round by round; stop early at `early_round` when the
/// credibility is decisive, otherwise use all `rounds`.
pub fn decide<I>(votes: I, config: &VoteConfig) -> Result<Decision, DetectError>
where
    I: IntoIterator,
    I::Item: AsRef<[u8]>,
{
    config.validate()?;
    let mut score = 0usize;
    let mut rounds = Vec::new();
    let mut trace = Vec::new();
    let mut iter = votes.into_iter();
    for round in 1..=config.rounds {
        let Some(v) = iter.next() else {
            return Err(DetectError::StreamExhausted { rounds: round - 1, needed: config.rounds });
        };
        let v = v.as_ref();
        if v.len() != config.classifiers {
            return Err(DetectError::Config(format!("round {round} has {} votes, expected {}", v.len(), config.classifiers)));
        }
        score += v.iter().filter(|&&b| b != 0).count();
        rounds.push(v.iter().map(|&b| u8::from(b != 0)).collect());
        let cred = score as f64 / (round * config.classifiers) as f64;
        trace.push(cred);
        let decisive = cred <= config.low || cred >= config.high;
        if (round == config.early_round && decisive) || round == config.rounds {
            return Ok(Decision { label: round_half_up(cred), credibility: cred, rounds_used: round, score, votes: rounds, trace });
        }
    }
    unreachable!("loop returns at round == rounds")
}

/// Run one decision session, pulling feature vectors on demand.
pub fn decide_session<C, F>(models: &C, mut next_window: F, config: &VoteConfig) -> Result<(Decision, Vec<f64>), DetectError>
where
    C: RoundClassifier,
    F: FnMut(usize) -> Option<Vec<f64>>,
{
    let mut times = Vec::new();
    let mut failure = None;
    let votes = std::iter::from_fn(|| {
        if failure.is_some() {
            return None;
        }
        let x = next_window(times.len())?;
        let start = Instant::now();
        let v = models.classify_round(&x);
        times.push(start.elapsed().as_secs_f64() * 1e3);
        match v {
            Ok(v) => Some(v),
            Err(e) => {
                failure = Some(e);
                None
            }
        }
    });
    let d = decide(votes, config);
    if let Some(e) = failure {
        return Err(e);
    }
    Ok((d?, times))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub mean_round_ms: f64,
    pub max_round_ms: f64,
}

/// Per-sample majority of the three classifiers against the labels.
pub fn evaluate<C: RoundClassifier>(models: &C, test: &Dataset) -> Result<Metrics, DetectError> {
    if test.is_empty() {
        return Err(DetectError::EmptyDataset);
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    let (mut total, mut worst) = (0.0f64, 0.0f64);
    for (x, &y) in test.x.iter().zip(&test.y) {
        let start = Instant::now();
        let v = models.classify_round(x)?;
        let ms = start.elapsed().as_secs_f64() * 1e3;
        total += ms;
        worst = worst.max(ms);
        let pred = u8::from(2 * v.iter().map(|&b| b as usize).sum::<usize>() > v.len());
        match (pred, y) {
            (1, 1) => tp += 1,
            (1, _) => fp += 1,
            (0, 0) => tn += 1,
            _ => fn_ += 1,
        }
    }
    let n = test.len();
    Ok(Metrics { accuracy: (tp + tn) as f64 / n as f64, tp, fp, tn, fn_, mean_round_ms: total / n as f64, max_round_ms: worst })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub seed: u64,
    /// Simulator the training data came from; runs rebuild it from here.
    pub model: crate::dynamics::ModelSpec,
    pub sensors: crate::dynamics::SensorSpec,
    pub scenarios: Vec<String>,
    pub data_seeds: Vec<u64>,
    pub window_frames: usize,
    pub train_samples: usize,
    pub holdout_samples: usize,
    pub votes: VoteConfig,
    /// Timing fields are zeroed so bundle bytes depend only on the seed.
    pub holdout: Metrics,
}

/// Versioned container for a trained detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub format: String,
    pub detector: EnsembleDetector,
    pub metadata: TrainingMetadata,
}

impl ModelBundle {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("bundle serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, DetectError> {
        let b: ModelBundle = serde_json::from_str(s).map_err(|e| DetectError::Bundle(e.to_string()))?;
        if b.format != BUNDLE_FORMAT {
            return Err(DetectError::Bundle(format!("unsupported format {:?}, expected {BUNDLE_FORMAT:?}", b.format)));
        }
        Ok(b)
    }
}
