//! Soft-margin SVM trained by sequential minimal optimization with
//! second-order working-set selection.

use serde::{Deserialize, Serialize};

use super::DetectError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Kernel {
    /// `(1 + <x/s, z/s>)^3`
    Cubic { scale: f64 },
    /// `exp(-|x - z|^2 / (2 s^2))`
    Gaussian { scale: f64 },
}

impl Kernel {
    pub fn cubic() -> Self {
        Kernel::Cubic { scale: 1.0 }
    }

    pub fn fine_gaussian() -> Self {
        Kernel::Gaussian { scale: 1.8 }
    }

    pub fn eval(&self, x: &[f64], z: &[f64]) -> f64 {
        match *self {
            Kernel::Cubic { scale } => {
                let dot: f64 = x.iter().zip(z).map(|(a, b)| a * b).sum();
                (1.0 + dot / (scale * scale)).powi(3)
            }
            Kernel::Gaussian { scale } => {
                let d2: f64 = x.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
                (-d2 / (2.0 * scale * scale)).exp()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub box_c: f64,
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams { box_c: 1.0, tolerance: 1e-3, max_iter: 1_000_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub kernel: Kernel,
    pub support_vectors: Vec<Vec<f64>>,
    /// `alpha_i * y_i` for each support vector.
    pub coef: Vec<f64>,
    pub bias: f64,
    /// Maximal KKT violation at termination.
    pub kkt_gap: f64,
    pub iterations: usize,
}

impl SvmModel {
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.support_vectors.iter().zip(&self.coef).map(|(sv, c)| c * self.kernel.eval(sv, x)).sum::<f64>() + self.bias
    }

    /// Class 1 on a non-negative decision value.
    pub fn predict(&self, x: &[f64]) -> u8 {
        u8::from(self.decision(x) >= 0.0)
    }
}

/// Train on labels in {0, 1}. Uses a precomputed kernel matrix, so memory
/// is quadratic in the sample count.
pub fn train_svm(x: &[Vec<f64>], labels: &[u8], kernel: Kernel, params: &SvmParams) -> Result<SvmModel, DetectError> {
    let n = x.len();
    if n == 0 || n != labels.len() {
        return Err(DetectError::EmptyDataset);
    }
    let ones = labels.iter().filter(|&&l| l == 1).count();
    if ones == 0 || ones == n {
        return Err(DetectError::SingleClass);
    }
    let y: Vec<f64> = labels.iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }).collect();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = kernel.eval(&x[i], &x[j]);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    let c = params.box_c;
    let mut alpha = vec![0.0; n];
    // gradient of 1/2 a'Qa - e'a
    let mut grad = vec![-1.0; n];
    let in_up = |a: f64, yt: f64| (yt > 0.0 && a < c) || (yt < 0.0 && a > 0.0);
    let in_low = |a: f64, yt: f64| (yt > 0.0 && a > 0.0) || (yt < 0.0 && a < c);
    const TAU: f64 = 1e-12;
    let mut iterations = 0;
    let gap;
    loop {
        // i: maximal violating index in I_up
        let mut g_max = f64::NEG_INFINITY;
        let mut i_sel = usize::MAX;
        for t in 0..n {
            if in_up(alpha[t], y[t]) && -y[t] * grad[t] > g_max {
                g_max = -y[t] * grad[t];
                i_sel = t;
            }
        }
        let mut g_min = f64::INFINITY;
        let mut j_sel = usize::MAX;
        let mut best = f64::INFINITY;
        for t in 0..n {
            if !in_low(alpha[t], y[t]) {
                continue;
            }
            let v = -y[t] * grad[t];
            g_min = g_min.min(v);
            if i_sel != usize::MAX && v < g_max {
                let b = g_max - v;
                let a = k[i_sel * n + i_sel] + k[t * n + t] - 2.0 * k[i_sel * n + t];
                let obj = -(b * b) / if a > 0.0 { a } else { TAU };
                if obj < best {
                    best = obj;
                    j_sel = t;
                }
            }
        }
        if i_sel == usize::MAX || j_sel == usize::MAX || g_max - g_min < params.tolerance {
            gap = (g_max - g_min).max(0.0);
            break;
        }
        if iterations >= params.max_iter {
            return Err(DetectError::NoConvergence { iterations });
        }
        iterations += 1;
        let (i, j) = (i_sel, j_sel);
        let (old_ai, old_aj) = (alpha[i], alpha[j]);
        let quad = (k[i * n + i] + k[j * n + j] - 2.0 * k[i * n + j]).max(TAU);
        // move along y_i d_i = -y_j d_j, clipped to the box
        if y[i] != y[j] {
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_ai, alpha[j] - old_aj);
        for t in 0..n {
            grad[t] += y[t] * (y[i] * k[i * n + t] * di + y[j] * k[j * n + t] * dj);
        }
    }

    // bias: average over free vectors, midpoint of the feasible range otherwise
    let (mut sum, mut free) = (0.0, 0usize);
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] > 0.0 && alpha[t] < c {
            sum += yg;
            free += 1;
        } else if (alpha[t] >= c && y[t] < 0.0) || (alpha[t] <= 0.0 && y[t] > 0.0) {
            ub = ub.min(yg);
        } else {
            lb = lb.max(yg);
        }
    }
    let rho = if free > 0 { sum / free as f64 } else { 0.5 * (ub + lb) };

    let mut support_vectors = Vec::new();
    let mut coef = Vec::new();
    for t in 0..n {
        if alpha[t] > 0.0 {
            support_vectors.push(x[t].clone());
            coef.push(alpha[t] * y[t]);
        }
    }
    Ok(SvmModel { kernel, support_vectors, coef, bias: -rho, kkt_gap: gap, iterations })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent dual solver for tiny problems: projected gradient ascent
    /// on the dual with the equality constraint handled by projection onto
    /// `{a : sum a_i y_i = 0, 0 <= a <= C}` (bisection on the multiplier).
    fn dual_oracle(x: &[Vec<f64>], y: &[f64], kernel: Kernel, c: f64) -> (Vec<f64>, f64) {
        let n = x.len();
        let q: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| y[i] * y[j] * kernel.eval(&x[i], &x[j])).collect()).collect();
        let project = |v: &[f64]| -> Vec<f64> {
            let clip = |mu: f64| -> Vec<f64> { v.iter().zip(y).map(|(a, yi)| (a - mu * yi).clamp(0.0, c)).collect() };
            let (mut lo, mut hi) = (-1e3, 1e3);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                let s: f64 = clip(mid).iter().zip(y).map(|(a, yi)| a * yi).sum();
                if s > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            clip(0.5 * (lo + hi))
        };
        let mut a = vec![0.0; n];
        for _ in 0..200_000 {
            let g: Vec<f64> = (0..n).map(|i| 1.0 - (0..n).map(|j| q[i][j] * a[j]).sum::<f64>()).collect();
            let step: Vec<f64> = a.iter().zip(&g).map(|(ai, gi)| ai + 0.05 * gi).collect();
            a = project(&step);
        }
        let dual = a.iter().sum::<f64>() - 0.5 * (0..n).map(|i| (0..n).map(|j| a[i] * q[i][j] * a[j]).sum::<f64>()).sum::<f64>();
        (a, dual)
    }

    fn xor() -> (Vec<Vec<f64>>, Vec<u8>) {
        (vec![vec![1.0, 1.0], vec![-1.0, -1.0], vec![1.0, -1.0], vec![-1.0, 1.0]], vec![1, 1, 0, 0])
    }

    #[test]
    fn cubic_kernel_of_orthogonal_vectors_is_one() {
        assert_eq!(Kernel::cubic().eval(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]), 1.0);
        assert_eq!(Kernel::cubic().eval(&[1.0, 0.0], &[1.0, 0.0]), 8.0);
        assert_eq!(Kernel::fine_gaussian().eval(&[0.3, 2.0], &[0.3, 2.0]), 1.0);
    }

    #[test]
    fn opposite_points_are_separated_with_margin() {
        let x = vec![vec![1.0, 0.0], vec![-1.0, 0.0]];
        for kernel in [Kernel::cubic(), Kernel::fine_gaussian()] {
            let m = train_svm(&x, &[1, 0], kernel, &SvmParams::default()).unwrap();
            assert!(m.decision(&x[0]) > 0.0 && m.decision(&x[1]) < 0.0);
        }
    }

    #[test]
    fn xor_matches_independent_dual_oracle() {
        let (x, labels) = xor();
        let kernel = Kernel::fine_gaussian();
        let params = SvmParams { tolerance: 1e-9, ..Default::default() };
        let m = train_svm(&x, &labels, kernel, &params).unwrap();
        assert!(x.iter().zip(&labels).all(|(p, &l)| m.predict(p) == l));
        let y: Vec<f64> = labels.iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }).collect();
        let (a, _) = dual_oracle(&x, &y, kernel, 1.0);
        let oracle = |p: &[f64]| -> f64 { (0..4).map(|i| a[i] * y[i] * kernel.eval(&x[i], p)).sum::<f64>() };
        // by symmetry the oracle bias is zero; compare decision values
        for p in [vec![0.5, 0.9], vec![-2.0, 0.3], vec![1.0, 1.0], vec![0.0, -1.0]] {
            assert!((m.decision(&p) - oracle(&p)).abs() < 1e-6, "{} vs {}", m.decision(&p), oracle(&p));
        }
    }

    #[test]
    fn duplicated_support_vector_keeps_decision() {
        let (x, labels) = xor();
        let m = train_svm(&x, &labels, Kernel::cubic(), &SvmParams::default()).unwrap();
        let mut dup = m.clone();
        let half = dup.coef[0] / 2.0;
        dup.coef[0] = half;
        dup.support_vectors.push(dup.support_vectors[0].clone());
        dup.coef.push(half);
        for p in [vec![0.2, -0.7], vec![3.0, 1.0], vec![-0.5, -0.5]] {
            assert!((m.decision(&p) - dup.decision(&p)).abs() < 1e-9);
        }
    }

    #[test]
    fn kkt_gap_within_tolerance() {
        let x: Vec<Vec<f64>> = (0..60).map(|i| vec![(i as f64 * 0.37).sin(), (i as f64 * 0.91).cos()]).collect();
        let y: Vec<u8> = x.iter().map(|p| u8::from(p[0] + 0.3 * p[1] > 0.1)).collect();
        for kernel in [Kernel::cubic(), Kernel::fine_gaussian()] {
            let m = train_svm(&x, &y, kernel, &SvmParams::default()).unwrap();
            assert!(m.kkt_gap < 1e-3);
            assert!(m.coef.iter().all(|c| c.abs() <= 1.0 + 1e-12));
        }
    }

    #[test]
    fn errors() {
        let x = vec![vec![0.0], vec![1.0]];
        assert!(matches!(train_svm(&x, &[1, 1], Kernel::cubic(), &SvmParams::default()), Err(DetectError::SingleClass)));
        assert!(matches!(train_svm(&[], &[], Kernel::cubic(), &SvmParams::default()), Err(DetectError::EmptyDataset)));
        let (x, y) = xor();
        let capped = SvmParams { max_iter: 0, ..Default::default() };
        assert!(matches!(train_svm(&x, &y, Kernel::cubic(), &capped), Err(DetectError::NoConvergence { .. })));
    }
}
