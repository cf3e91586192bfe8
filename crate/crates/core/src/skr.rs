//! Residual trigger: compares measured outputs against the model prediction
//! and raises an alarm when the residual norm exceeds a chi-square threshold
//! scaled by a robust running noise estimate.
//!
//! Threshold law: `xi = 1.4826 * MAD(window) * sqrt(chi2_q(confidence, dof))`,
//! where the window holds the last `W` residual component vectors that did
//! not alarm, and the MAD is pooled over all their components. Alarms are
//! suppressed until `W / 2` vectors have been seen.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

/// Consistency constant making the MAD an unbiased sigma for normal noise.
const MAD_TO_SIGMA: f64 = 1.4826;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SkrError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid trigger configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkrConfig {
    /// Degrees of freedom (monitored outputs per source).
    pub dof: usize,
    /// 0.95 or 0.99.
    pub confidence: f64,
    /// Window length W.
    pub window: usize,
    /// Lower bound on the noise scale, keeps the threshold positive when the
    /// window is exactly constant.
    pub min_scale: f64,
}

impl Default for SkrConfig {
    fn default() -> Self {
        SkrConfig { dof: 4, confidence: 0.99, window: 100, min_scale: 1e-12 }
    }
}

impl SkrConfig {
    pub fn validate(&self) -> Result<(), SkrError> {
        if self.dof == 0 {
            return Err(SkrError::Config("dof must be positive".into()));
        }
        if !(self.confidence == 0.95 || self.confidence == 0.99) {
            return Err(SkrError::Config(format!("confidence must be 0.95 or 0.99, got {}", self.confidence)));
        }
        if self.window < 2 {
            return Err(SkrError::Config("window must hold at least 2 samples".into()));
        }
        Ok(())
    }
}

/// One threshold crossing (or an injected alarm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlarmEvent {
    pub t: f64,
    pub source: usize,
    pub residual: f64,
    pub threshold: f64,
    /// Injected by `force_alarm` rather than raised by a crossing.
    #[serde(default)]
    pub forced: bool,
}

/// Chi-square quantile.
pub fn chi2_quantile(confidence: f64, dof: usize) -> f64 {
    ChiSquared::new(dof as f64).expect("dof > 0").inverse_cdf(confidence)
}

/// `r = || y - C x_est ||_2`.
pub fn residual(y: &[f64], x_est: &[f64], c_mat: &DMatrix<f64>) -> Result<f64, SkrError> {
    if c_mat.ncols() != x_est.len() || c_mat.nrows() != y.len() {
        return Err(SkrError::Dimension(format!(
            "C is {}x{}, y has {} entries, x_est has {}",
            c_mat.nrows(),
            c_mat.ncols(),
            y.len(),
            x_est.len()
        )));
    }
    let mut sum = 0.0;
    for i in 0..y.len() {
        let pred: f64 = (0..x_est.len()).map(|j| c_mat[(i, j)] * x_est[j]).sum();
        let d = y[i] - pred;
        sum += d * d;
    }
    Ok(sum.sqrt())
}

/// Trigger state for one monitored source.
#[derive(Debug, Clone, PartialEq)]
pub struct SkrState {
    pub source: usize,
    pub config: SkrConfig,
    window: VecDeque<Vec<f64>>,
    xi_t: f64,
    chi_root: f64,
    pub last_alarm: Option<f64>,
}

impl SkrState {
    pub fn new(source: usize, config: SkrConfig) -> Result<Self, SkrError> {
        config.validate()?;
        Ok(SkrState {
            source,
            config,
            window: VecDeque::with_capacity(config.window),
            xi_t: 0.0,
            chi_root: chi2_quantile(config.confidence, config.dof).sqrt(),
            last_alarm: None,
        })
    }

    pub fn threshold(&self) -> f64 {
        self.xi_t
    }

    pub fn window_len(&self) -> usize {
        self.window.len()
    }

    pub fn warmed_up(&self) -> bool {
        self.window.len() >= self.config.window.div_ceil(2)
    }

    /// Pooled MAD noise scale of the current window.
    pub fn scale(&self) -> f64 {
        let mut values: Vec<f64> = self.window.iter().flatten().copied().collect();
        if values.is_empty() {
            return self.config.min_scale;
        }
        let med = median(&mut values);
        let mut dev: Vec<f64> = values.iter().map(|v| (v - med).abs()).collect();
        (MAD_TO_SIGMA * median(&mut dev)).max(self.config.min_scale)
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Push one residual component vector into the window and recompute the
/// threshold.
pub fn update_threshold(state: &mut SkrState, components: &[f64]) -> Result<f64, SkrError> {
    if components.len() != state.config.dof {
        return Err(SkrError::Dimension(format!("expected {} residual components, got {}", state.config.dof, components.len())));
    }
    if state.window.len() == state.config.window {
        state.window.pop_front();
    }
    state.window.push_back(components.to_vec());
    state.xi_t = state.scale() * state.chi_root;
    Ok(state.xi_t)
}

/// Alarm iff warmed up and `r > xi_t` (strict).
pub fn check(state: &mut SkrState, t: f64, r: f64) -> Option<AlarmEvent> {
    if !state.warmed_up() || r <= state.xi_t {
        return None;
    }
    state.last_alarm = Some(t);
    Some(AlarmEvent { t, source: state.source, residual: r, threshold: state.xi_t, forced: false })
}

/// Check the new sample against the current threshold, then learn from it
/// only if it did not alarm, so outliers never inflate the noise scale.
pub fn observe(state: &mut SkrState, t: f64, components: &[f64]) -> Result<(f64, Option<AlarmEvent>), SkrError> {
    if components.len() != state.config.dof {
        return Err(SkrError::Dimension(format!("expected {} residual components, got {}", state.config.dof, components.len())));
    }
    let r = components.iter().map(|c| c * c).sum::<f64>().sqrt();
    let alarm = check(state, t, r);
    if alarm.is_none() {
        update_threshold(state, components)?;
    }
    Ok((r, alarm))
}

/// An externally injected alarm, handled downstream like a real one.
pub fn force_alarm(t: f64, source: usize) -> AlarmEvent {
    AlarmEvent { t, source, residual: 0.0, threshold: 0.0, forced: true }
}
