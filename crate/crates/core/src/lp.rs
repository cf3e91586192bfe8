//! Dense bounded-variable dual simplex.
//!
//! Problems are stated as `min c·x` subject to `row_lo <= A x <= row_hi` and
//! `col_lo <= x <= col_hi`. Every row gets a logical column `s = A x` so the
//! working form is `[A | -I] (x, s) = 0` with bounds on all columns. Starting
//! from the all-logical basis with each structural column parked at the bound
//! its cost prefers, the basis is dual feasible and the dual simplex runs from
//! there. The same property makes bound changes (branching) cheap to
//! re-optimize from a stored basis.

use thiserror::Error;

/// Columns whose preferred bound is infinite are parked on this artificial box.
const BIG: f64 = 1e7;
const PRIMAL_TOL: f64 = 1e-9;
const DUAL_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-9;
const REFACTOR_EVERY: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    /// No feasible point. `rows` are the constraints combined by the failing
    /// tableau row (a Farkas-style certificate).
    #[error("infeasible: constraint rows {rows:?} cannot be satisfied together")]
    Infeasible { rows: Vec<usize> },
    #[error("unbounded objective")]
    Unbounded,
    #[error("iteration limit reached after {0} pivots")]
    IterationLimit(usize),
    #[error("singular basis during refactorization")]
    Singular,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub coeffs: Vec<(usize, f64)>,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinearProgram {
    pub col_lower: Vec<f64>,
    pub col_upper: Vec<f64>,
    pub cost: Vec<f64>,
    pub rows: Vec<Row>,
}

impl LinearProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_cols(&self) -> usize {
        self.cost.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn add_col(&mut self, lower: f64, upper: f64, cost: f64) -> usize {
        self.col_lower.push(lower);
        self.col_upper.push(upper);
        self.cost.push(cost);
        self.cost.len() - 1
    }

    pub fn add_row(&mut self, coeffs: Vec<(usize, f64)>, lower: f64, upper: f64) -> usize {
        self.rows.push(Row { coeffs, lower, upper });
        self.rows.len() - 1
    }

    pub fn solve(&self) -> Result<LpSolution, LpError> {
        let mut s = Simplex::new(self);
        s.solve()?;
        Ok(s.solution())
    }

    /// Row activities `A x`.
    pub fn activities(&self, x: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|r| r.coeffs.iter().map(|&(j, a)| a * x[j]).sum()).collect()
    }

    /// Largest bound or row violation of `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut v: f64 = 0.0;
        for (j, &xj) in x.iter().enumerate() {
            v = v.max(self.col_lower[j] - xj).max(xj - self.col_upper[j]);
        }
        for (r, act) in self.rows.iter().zip(self.activities(x)) {
            v = v.max(r.lower - act).max(act - r.upper);
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

/// Snapshot of a basis, enough to rebuild a tableau later.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Basis {
    basic: Vec<usize>,
    at_upper: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct Simplex {
    m: usize,
    n: usize,
    nt: usize,
    /// Original structural matrix, row-major `m x n`.
    a: Vec<f64>,
    cost: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    artificial: Vec<bool>,
    /// Columns with no finite bound at all; they may move either way.
    free: Vec<bool>,
    /// `B^-1 [A | -I]`, row-major `m x nt`.
    t: Vec<f64>,
    d: Vec<f64>,
    basis: Vec<usize>,
    pos: Vec<Option<usize>>,
    at_upper: Vec<bool>,
    x: Vec<f64>,
    iterations: usize,
    since_refactor: usize,
}

impl Simplex {
    pub fn new(lp: &LinearProgram) -> Self {
        let m = lp.rows.len();
        let n = lp.cost.len();
        let nt = n + m;
        let mut a = vec![0.0; m * n];
        for (i, row) in lp.rows.iter().enumerate() {
            for &(j, v) in &row.coeffs {
                a[i * n + j] += v;
            }
        }
        let mut cost = lp.cost.clone();
        cost.resize(nt, 0.0);
        let mut lo = lp.col_lower.clone();
        let mut hi = lp.col_upper.clone();
        lo.extend(lp.rows.iter().map(|r| r.lower));
        hi.extend(lp.rows.iter().map(|r| r.upper));

        let mut t = vec![0.0; m * nt];
        for i in 0..m {
            for j in 0..n {
                t[i * nt + j] = -a[i * n + j];
            }
            t[i * nt + n + i] = 1.0;
        }
        let mut s = Simplex {
            m,
            n,
            nt,
            a,
            d: cost.clone(),
            cost,
            lo,
            hi,
            artificial: vec![false; nt],
            free: (0..nt).map(|j| j < n && !lp.col_lower[j].is_finite() && !lp.col_upper[j].is_finite()).collect(),
            t,
            basis: (n..nt).collect(),
            pos: (0..nt).map(|j| if j >= n { Some(j - n) } else { None }).collect(),
            at_upper: vec![false; nt],
            x: vec![0.0; nt],
            iterations: 0,
            since_refactor: 0,
        };
        for j in 0..n {
            s.park(j);
        }
        s.recompute_basics();
        s
    }

    /// Rebuild a solver for `lp` around a previously stored basis.
    pub fn from_basis(lp: &LinearProgram, basis: &Basis) -> Result<Self, LpError> {
        let mut s = Simplex::new(lp);
        s.basis = basis.basic.clone();
        s.pos = vec![None; s.nt];
        for (i, &j) in s.basis.iter().enumerate() {
            s.pos[j] = Some(i);
        }
        s.at_upper = basis.at_upper.clone();
        s.refactor()?;
        for j in 0..s.nt {
            if s.pos[j].is_none() {
                s.park(j);
            }
        }
        s.recompute_basics();
        Ok(s)
    }

    pub fn basis(&self) -> Basis {
        Basis { basic: self.basis.clone(), at_upper: self.at_upper.clone() }
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Place nonbasic column `j` on the bound that keeps its reduced cost
    /// dual feasible, inventing a finite bound where the needed one is missing.
    fn park(&mut self, j: usize) {
        let (lo, hi) = (self.lo[j], self.hi[j]);
        if lo == hi {
            self.at_upper[j] = false;
            self.x[j] = lo;
            return;
        }
        let want_upper = if self.d[j] < -DUAL_TOL {
            true
        } else if self.d[j] > DUAL_TOL {
            false
        } else {
            // zero reduced cost: keep the previous side when it exists
            if self.at_upper[j] { hi.is_finite() || !lo.is_finite() } else { !lo.is_finite() && hi.is_finite() }
        };
        if want_upper {
            if !hi.is_finite() {
                self.hi[j] = BIG.max(lo + BIG);
                self.artificial[j] = true;
            }
            self.at_upper[j] = true;
            self.x[j] = self.hi[j];
        } else {
            if !lo.is_finite() {
                if self.d[j].abs() <= DUAL_TOL && !hi.is_finite() {
                    // free column with zero cost: rest at zero on an artificial lower bound
                    self.lo[j] = -BIG;
                    self.artificial[j] = true;
                    self.at_upper[j] = false;
                    self.x[j] = 0.0;
                    return;
                }
                self.lo[j] = (-BIG).min(hi - BIG);
                self.artificial[j] = true;
            }
            self.at_upper[j] = false;
            self.x[j] = self.lo[j];
        }
    }

    /// Change the bounds of a structural column ahead of a re-solve.
    ///
    /// Fixing (`lower == upper`) always preserves dual feasibility, which is
    /// all branching needs.
    pub fn set_col_bounds(&mut self, j: usize, lower: f64, upper: f64) {
        assert!(j < self.n);
        self.lo[j] = lower;
        self.hi[j] = upper;
        self.artificial[j] = false;
        self.free[j] = !lower.is_finite() && !upper.is_finite();
        if self.pos[j].is_none() {
            self.park(j);
        }
        self.recompute_basics();
    }

    fn recompute_basics(&mut self) {
        let nt = self.nt;
        let nz: Vec<(usize, f64)> =
            (0..nt).filter(|&j| self.pos[j].is_none() && self.x[j] != 0.0).map(|j| (j, self.x[j])).collect();
        for i in 0..self.m {
            let row = &self.t[i * nt..(i + 1) * nt];
            let v: f64 = nz.iter().map(|&(j, xj)| row[j] * xj).sum();
            self.x[self.basis[i]] = -v;
        }
    }

    fn refactor(&mut self) -> Result<(), LpError> {
        let (m, n, nt) = (self.m, self.n, self.nt);
        // B, then Gauss-Jordan to B^-1
        let mut b = vec![0.0; m * m];
        for (k, &j) in self.basis.iter().enumerate() {
            if j < n {
                for i in 0..m {
                    b[i * m + k] = self.a[i * n + j];
                }
            } else {
                b[(j - n) * m + k] = -1.0;
            }
        }
        let inv = invert(&mut b, m).ok_or(LpError::Singular)?;
        let mut t = vec![0.0; m * nt];
        for i in 0..m {
            let inv_row = &inv[i * m..(i + 1) * m];
            let trow = &mut t[i * nt..(i + 1) * nt];
            for (k, &v) in inv_row.iter().enumerate() {
                if v == 0.0 {
                    continue;
                }
                let arow = &self.a[k * n..(k + 1) * n];
                for j in 0..n {
                    trow[j] += v * arow[j];
                }
                trow[n + k] = -v;
            }
        }
        self.t = t;
        self.d = self.cost.clone();
        for i in 0..m {
            let cb = self.cost[self.basis[i]];
            if cb != 0.0 {
                let row = &self.t[i * nt..(i + 1) * nt];
                for j in 0..nt {
                    self.d[j] -= cb * row[j];
                }
            }
        }
        for &j in &self.basis {
            self.d[j] = 0.0;
        }
        self.since_refactor = 0;
        Ok(())
    }

    fn pivot(&mut self, r: usize, e: usize) {
        let nt = self.nt;
        let piv = self.t[r * nt + e];
        {
            let row = &mut self.t[r * nt..(r + 1) * nt];
            for v in row.iter_mut() {
                *v /= piv;
            }
        }
        let prow: Vec<f64> = self.t[r * nt..(r + 1) * nt].to_vec();
        let nzcols: Vec<usize> = (0..nt).filter(|&j| prow[j] != 0.0).collect();
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.t[i * nt + e];
            if f == 0.0 {
                continue;
            }
            let row = &mut self.t[i * nt..(i + 1) * nt];
            for &j in &nzcols {
                row[j] -= f * prow[j];
            }
            row[e] = 0.0;
        }
        let de = self.d[e];
        if de != 0.0 {
            for &j in &nzcols {
                self.d[j] -= de * prow[j];
            }
        }
        self.d[e] = 0.0;
        let leaving = self.basis[r];
        self.pos[leaving] = None;
        self.basis[r] = e;
        self.pos[e] = Some(r);
        self.since_refactor += 1;
    }

    /// Run the dual simplex to optimality from the current (dual feasible) basis.
    pub fn solve(&mut self) -> Result<(), LpError> {
        let limit = 50 * (self.m + self.n) + 1000;
        let nt = self.nt;
        let mut local = 0usize;
        loop {
            if local > limit {
                return Err(LpError::IterationLimit(self.iterations));
            }
            // leaving row: largest bound violation, lowest row on ties
            let mut leave: Option<(usize, bool)> = None;
            let mut worst = PRIMAL_TOL;
            for i in 0..self.m {
                let q = self.basis[i];
                let v = self.x[q];
                let (viol, to_lower) = if v < self.lo[q] {
                    (self.lo[q] - v, true)
                } else if v > self.hi[q] {
                    (v - self.hi[q], false)
                } else {
                    continue;
                };
                let scaled = viol / (1.0 + self.lo[q].abs().min(self.hi[q].abs()).min(1e3));
                if scaled > worst {
                    worst = scaled;
                    leave = Some((i, to_lower));
                }
            }
            let Some((r, to_lower)) = leave else { break };

            // entering column, Harris two-pass ratio test
            let row = &self.t[r * nt..(r + 1) * nt];
            let eligible = |j: usize| -> Option<f64> {
                if self.pos[j].is_some() || self.lo[j] == self.hi[j] {
                    return None;
                }
                let a = row[j];
                if a.abs() < PIVOT_TOL {
                    return None;
                }
                let ok = self.free[j]
                    || if self.at_upper[j] { (a > 0.0) == to_lower } else { (a < 0.0) == to_lower };
                ok.then_some(a)
            };
            let mut bound = f64::INFINITY;
            for j in 0..nt {
                if let Some(a) = eligible(j) {
                    bound = bound.min((self.d[j].abs() + DUAL_TOL) / a.abs());
                }
            }
            if !bound.is_finite() {
                return Err(LpError::Infeasible { rows: self.certificate_rows(r) });
            }
            let mut enter: Option<usize> = None;
            let mut best_a = 0.0;
            for j in 0..nt {
                if let Some(a) = eligible(j) {
                    if self.d[j].abs() / a.abs() <= bound && a.abs() > best_a {
                        best_a = a.abs();
                        enter = Some(j);
                    }
                }
            }
            let e = enter.expect("ratio bound implies a candidate");

            let q = self.basis[r];
            self.pivot(r, e);
            self.iterations += 1;
            local += 1;
            self.at_upper[q] = !to_lower;
            self.x[q] = if to_lower { self.lo[q] } else { self.hi[q] };
            // Harris may leave tiny wrong-signed reduced costs; clamp them
            for j in 0..nt {
                if self.pos[j].is_some() || self.lo[j] == self.hi[j] {
                    continue;
                }
                let dj = self.d[j];
                if self.at_upper[j] && dj > 0.0 && dj < 10.0 * DUAL_TOL
                    || !self.at_upper[j] && dj < 0.0 && dj > -10.0 * DUAL_TOL
                {
                    self.d[j] = 0.0;
                }
            }
            if self.since_refactor >= REFACTOR_EVERY {
                self.refactor()?;
                for j in 0..nt {
                    if self.pos[j].is_none() {
                        self.repark_after_refactor(j);
                    }
                }
            }
            self.recompute_basics();
        }
        for j in 0..nt {
            if self.artificial[j]
                && ((self.x[j] - self.lo[j]).abs() < 1e-6 || (self.x[j] - self.hi[j]).abs() < 1e-6)
            {
                return Err(LpError::Unbounded);
            }
        }
        Ok(())
    }

    /// After refactorization reduced costs are recomputed from scratch; a
    /// nonbasic column whose sign flipped by round-off is moved to the side it
    /// now prefers.
    fn repark_after_refactor(&mut self, j: usize) {
        if self.lo[j] == self.hi[j] {
            return;
        }
        let dj = self.d[j];
        if (self.at_upper[j] && dj > DUAL_TOL) || (!self.at_upper[j] && dj < -DUAL_TOL) {
            self.park(j);
        }
    }

    fn certificate_rows(&self, r: usize) -> Vec<usize> {
        let nt = self.nt;
        let mut rows: Vec<usize> = (0..self.m).filter(|&i| self.t[r * nt + self.n + i].abs() > PIVOT_TOL).collect();
        let q = self.basis[r];
        if q >= self.n && !rows.contains(&(q - self.n)) {
            rows.push(q - self.n);
        }
        rows.sort_unstable();
        rows
    }

    pub fn objective(&self) -> f64 {
        (0..self.n).map(|j| self.cost[j] * self.x[j]).sum()
    }

    pub fn values(&self) -> &[f64] {
        &self.x[..self.n]
    }

    pub fn solution(&self) -> LpSolution {
        LpSolution { x: self.values().to_vec(), objective: self.objective(), iterations: self.iterations }
    }
}

/// In-place Gauss-Jordan with partial pivoting; returns the inverse.
fn invert(b: &mut [f64], m: usize) -> Option<Vec<f64>> {
    let mut inv = vec![0.0; m * m];
    for i in 0..m {
        inv[i * m + i] = 1.0;
    }
    for c in 0..m {
        let p = (c..m).max_by(|&i, &k| b[i * m + c].abs().total_cmp(&b[k * m + c].abs()))?;
        if b[p * m + c].abs() < 1e-12 {
            return None;
        }
        if p != c {
            for j in 0..m {
                b.swap(p * m + j, c * m + j);
                inv.swap(p * m + j, c * m + j);
            }
        }
        let piv = b[c * m + c];
        for j in 0..m {
            b[c * m + j] /= piv;
            inv[c * m + j] /= piv;
        }
        let brow: Vec<f64> = b[c * m..(c + 1) * m].to_vec();
        let irow: Vec<f64> = inv[c * m..(c + 1) * m].to_vec();
        for i in 0..m {
            if i == c {
                continue;
            }
            let f = b[i * m + c];
            if f == 0.0 {
                continue;
            }
            for j in 0..m {
                b[i * m + j] -= f * brow[j];
                inv[i * m + j] -= f * irow[j];
            }
        }
    }
    Some(inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;

    /// Vertex enumeration: every choice of `n` tight constraints (rows or
    /// bounds) gives a candidate point; keep the best feasible one.
    fn brute_force(lp: &LinearProgram) -> Option<f64> {
        let n = lp.num_cols();
        let mut planes: Vec<(Vec<f64>, f64)> = Vec::new();
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            for b in [lp.col_lower[j], lp.col_upper[j]] {
                if b.is_finite() {
                    planes.push((e.clone(), b));
                }
            }
        }
        for r in &lp.rows {
            let mut a = vec![0.0; n];
            for &(j, v) in &r.coeffs {
                a[j] += v;
            }
            for b in [r.lower, r.upper] {
                if b.is_finite() {
                    planes.push((a.clone(), b));
                }
            }
        }
        let mut best: Option<f64> = None;
        let k = planes.len();
        let mut idx: Vec<usize> = (0..n).collect();
        if k < n {
            return None;
        }
        loop {
            let mat = DMatrix::from_fn(n, n, |i, j| planes[idx[i]].0[j]);
            let rhs = DVector::from_fn(n, |i, _| planes[idx[i]].1);
            if let Some(sol) = mat.lu().solve(&rhs) {
                let x: Vec<f64> = sol.iter().copied().collect();
                if x.iter().all(|v| v.is_finite()) && lp.max_violation(&x) < 1e-7 {
                    let obj: f64 = x.iter().zip(&lp.cost).map(|(a, b)| a * b).sum();
                    best = Some(best.map_or(obj, |b: f64| b.min(obj)));
                }
            }
            // next combination
            let mut i = n;
            loop {
                if i == 0 {
                    return best;
                }
                i -= 1;
                if idx[i] < k - n + i {
                    idx[i] += 1;
                    for t in i + 1..n {
                        idx[t] = idx[t - 1] + 1;
                    }
                    break;
                }
            }
        }
    }

    #[test]
    fn textbook_max_problem() {
        // max 3x + 5y st x <= 4, 2y <= 12, 3x + 2y <= 18  ->  36 at (2, 6)
        let mut lp = LinearProgram::new();
        let x = lp.add_col(0.0, f64::INFINITY, -3.0);
        let y = lp.add_col(0.0, f64::INFINITY, -5.0);
        lp.add_row(vec![(x, 1.0)], f64::NEG_INFINITY, 4.0);
        lp.add_row(vec![(y, 2.0)], f64::NEG_INFINITY, 12.0);
        lp.add_row(vec![(x, 3.0), (y, 2.0)], f64::NEG_INFINITY, 18.0);
        let s = lp.solve().unwrap();
        assert!((s.objective + 36.0).abs() < 1e-9);
        assert!((s.x[0] - 2.0).abs() < 1e-9 && (s.x[1] - 6.0).abs() < 1e-9);
    }

    #[test]
    fn equality_rows_and_free_columns() {
        // min x + y st x - y = 1, x + y >= 3, y free
        let mut lp = LinearProgram::new();
        let x = lp.add_col(0.0, 10.0, 1.0);
        let y = lp.add_col(f64::NEG_INFINITY, f64::INFINITY, 1.0);
        lp.add_row(vec![(x, 1.0), (y, -1.0)], 1.0, 1.0);
        lp.add_row(vec![(x, 1.0), (y, 1.0)], 3.0, f64::INFINITY);
        let s = lp.solve().unwrap();
        assert!((s.objective - 3.0).abs() < 1e-9, "{s:?}");
        assert!(lp.max_violation(&s.x) < 1e-9);
    }

    #[test]
    fn infeasible_reports_rows() {
        let mut lp = LinearProgram::new();
        let x = lp.add_col(0.0, 1.0, 1.0);
        let y = lp.add_col(0.0, 1.0, 1.0);
        lp.add_row(vec![(x, 1.0), (y, 1.0)], 3.0, f64::INFINITY);
        match lp.solve() {
            Err(LpError::Infeasible { rows }) => assert_eq!(rows, vec![0]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unbounded_detected() {
        let mut lp = LinearProgram::new();
        let x = lp.add_col(0.0, f64::INFINITY, -1.0);
        lp.add_row(vec![(x, 1.0)], 1.0, f64::INFINITY);
        assert_eq!(lp.solve(), Err(LpError::Unbounded));
    }

    #[test]
    fn warm_start_after_fixing() {
        let mut lp = LinearProgram::new();
        let x = lp.add_col(0.0, 1.0, -1.0);
        let y = lp.add_col(0.0, 1.0, -1.0);
        lp.add_row(vec![(x, 1.0), (y, 1.0)], f64::NEG_INFINITY, 1.5);
        let mut s = Simplex::new(&lp);
        s.solve().unwrap();
        assert!((s.objective() + 1.5).abs() < 1e-9);
        let basis = s.basis();
        s.set_col_bounds(x, 0.0, 0.0);
        s.solve().unwrap();
        assert!((s.objective() + 1.0).abs() < 1e-9);
        let mut r = Simplex::from_basis(&lp, &basis).unwrap();
        r.set_col_bounds(y, 1.0, 1.0);
        r.solve().unwrap();
        assert!((r.objective() + 1.5).abs() < 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn matches_vertex_enumeration(
            costs in prop::collection::vec(-5.0..5.0f64, 3),
            rows in prop::collection::vec((prop::collection::vec(-3.0..3.0f64, 3), -4.0..6.0f64), 1..4),
        ) {
            let mut lp = LinearProgram::new();
            for c in &costs {
                lp.add_col(-2.0, 3.0, *c);
            }
            for (coef, ub) in &rows {
                lp.add_row(coef.iter().copied().enumerate().collect(), f64::NEG_INFINITY, *ub);
            }
            let oracle = brute_force(&lp);
            match (lp.solve(), oracle) {
                (Ok(s), Some(o)) => {
                    prop_assert!((s.objective - o).abs() < 1e-6, "{} vs {}", s.objective, o);
                    prop_assert!(lp.max_violation(&s.x) < 1e-7);
                }
                (Err(LpError::Infeasible { .. }), None) => {}
                (got, o) => prop_assert!(false, "solver {:?} oracle {:?}", got, o),
            }
        }
    }
}
