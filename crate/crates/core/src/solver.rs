//! The inner maximization over the Lagrange multiplier,
//!
//! ```text
//! f_n(lambda) = (1/n) sum_i log(1 + lambda' g_i) - sum_j P_nu(|lambda_j|),
//! ```
//!
//! over `{lambda : 1 + lambda' g_i >= floor for all i}`.
//!
//! The penalized problem is solved by alternating a coordinate sweep (one
//! proximal Newton step per coordinate, exact thresholding at zero) with a
//! Newton step on the current active set. Every accepted step passes a
//! backtracking line search that keeps all `1 + lambda' g_i` above the
//! feasibility floor and increases the objective, so the objective sequence
//! is non-decreasing.
//!
//! The un-penalized problem (plain empirical likelihood) uses damped Newton
//! on all coordinates. When `r >= n` and the moment matrix has full row rank
//! there is a `lambda` with `G lambda = 1`, so the supremum is infinite; this
//! is detected up front.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::penalty::PenaltySpec;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default, deny_unknown_fields))]
pub struct SolverOptions {
    /// KKT residual tolerance.
    pub tol: f64,
    pub max_iter: usize,
    /// Smallest admissible value of `1 + lambda' g_i`.
    pub feasibility_floor: f64,
    /// `|lambda_j|` cutoff for the reported support.
    pub support_threshold: f64,
    /// `|lambda|_2` beyond which the un-penalized problem is declared unbounded.
    pub divergence_bound: f64,
    /// Keep the objective value after every outer iteration.
    pub record_trace: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 10_000,
            feasibility_floor: 1e-10,
            support_threshold: 1e-6,
            divergence_bound: 1e8,
            record_trace: false,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let ok = self.tol > 0.0
            && self.tol < 1.0
            && self.max_iter > 0
            && self.feasibility_floor > 0.0
            && self.feasibility_floor < 1.0
            && self.support_threshold > 0.0
            && self.divergence_bound > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(alloc::format!("invalid solver options: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    MaxIter,
    /// The un-penalized dual diverges: the origin is outside the convex hull
    /// of the moment vectors and `EL(theta) = 0`.
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LagrangeSolution {
    pub lambda: Vec<f64>,
    /// `{j : |lambda_j| > support_threshold}`, ascending.
    pub support: Vec<usize>,
    /// Score-equation subgradients: `nu rho'(|lambda_j|) sgn(lambda_j)` where
    /// `lambda_j != 0`, the clipped score otherwise.
    pub eta: Vec<f64>,
    /// `f_n(lambda)`; `+inf` when unbounded.
    pub objective: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    /// KKT residual at the returned multiplier.
    pub kkt: f64,
    /// Objective after each outer iteration (only with `record_trace`).
    pub trace: Vec<f64>,
}

impl LagrangeSolution {
    pub fn is_zero(&self) -> bool {
        self.lambda.iter().all(|l| *l == 0.0)
    }
}

/// `f_n(lambda)`; errors when `lambda` is outside the log domain.
pub fn inner_objective(g: &DMatrix<f64>, penalty: &PenaltySpec, lambda: &[f64]) -> Result<f64> {
    Ok(smooth_objective(g, lambda)? - penalty.value(lambda))
}

/// `(1/n) sum_i log(1 + lambda' g_i)`.
pub fn smooth_objective(g: &DMatrix<f64>, lambda: &[f64]) -> Result<f64> {
    check_len(g, lambda)?;
    let t = g * DVector::from_column_slice(lambda);
    let min = t.iter().fold(f64::INFINITY, |m, v| m.min(1.0 + v));
    if !(min > 0.0) {
        return Err(Error::Infeasible { min_margin: min });
    }
    Ok(t.iter().map(|v| libm::log1p(*v)).sum::<f64>() / g.nrows() as f64)
}

fn check_len(g: &DMatrix<f64>, lambda: &[f64]) -> Result<()> {
    if lambda.len() == g.ncols() {
        Ok(())
    } else {
        Err(Error::Dimension(alloc::format!(
            "lambda has length {}, moment matrix has {} columns",
            lambda.len(),
            g.ncols()
        )))
    }
}

/// `(1/n) sum_i g_ij / (1 + lambda' g_i)` for every `j`.
fn scores(g: &DMatrix<f64>, w: &[f64]) -> Vec<f64> {
    let inv_n = 1.0 / g.nrows() as f64;
    g.column_iter()
        .map(|c| dot(c.as_slice(), w) * inv_n)
        .collect()
}

/// Largest distance from the score vector to the penalty subdifferential.
pub fn kkt_residual(g: &DMatrix<f64>, penalty: &PenaltySpec, sol: &LagrangeSolution) -> Result<f64> {
    check_len(g, &sol.lambda)?;
    let w = weights_for(g, &sol.lambda)?;
    Ok(residual_from_scores(&scores(g, &w), &sol.lambda, Some(penalty)))
}

fn weights_for(g: &DMatrix<f64>, lambda: &[f64]) -> Result<Vec<f64>> {
    let t = g * DVector::from_column_slice(lambda);
    let mut w = Vec::with_capacity(t.len());
    for v in t.iter() {
        let m = 1.0 + v;
        if !(m > 0.0) {
            return Err(Error::Infeasible { min_margin: m });
        }
        w.push(1.0 / m);
    }
    Ok(w)
}

fn residual_from_scores(s: &[f64], lambda: &[f64], penalty: Option<&PenaltySpec>) -> f64 {
    match penalty {
        None => s.iter().fold(0.0, |m, v| m.max(v.abs())),
        Some(p) => s
            .iter()
            .zip(lambda)
            .fold(0.0, |m, (sj, lj)| m.max(p.subgradient_interval(*lj).distance(*sj))),
    }
}

fn eta_from_scores(s: &[f64], lambda: &[f64], penalty: &PenaltySpec) -> Vec<f64> {
    s.iter()
        .zip(lambda)
        .map(|(sj, lj)| {
            let iv = penalty.subgradient_interval(*lj);
            if *lj == 0.0 {
                iv.clamp(*sj)
            } else {
                iv.lo
            }
        })
        .collect()
}

fn support_of(lambda: &[f64], threshold: f64) -> Vec<usize> {
    lambda
        .iter()
        .enumerate()
        .filter(|(_, l)| l.abs() > threshold)
        .map(|(j, _)| j)
        .collect()
}

const NEWTON_STEPS_PER_SWEEP: usize = 3;

/// Iterate state: `t_i = lambda' g_i` and `w_i = 1 / (1 + t_i)`.
struct State<'a> {
    g: &'a DMatrix<f64>,
    n: usize,
    inv_n: f64,
    lambda: Vec<f64>,
    t: Vec<f64>,
    w: Vec<f64>,
}

impl<'a> State<'a> {
    fn zero(g: &'a DMatrix<f64>) -> Self {
        let n = g.nrows();
        Self {
            g,
            n,
            inv_n: 1.0 / n as f64,
            lambda: vec![0.0; g.ncols()],
            t: vec![0.0; n],
            w: vec![1.0; n],
        }
    }

    #[inline]
    fn column(&self, j: usize) -> &'a [f64] {
        &self.g.as_slice()[j * self.n..(j + 1) * self.n]
    }

    fn set_lambda(&mut self, lambda: &[f64]) {
        self.lambda.copy_from_slice(lambda);
        self.t.fill(0.0);
        for (j, l) in lambda.iter().enumerate() {
            if *l != 0.0 {
                let col = self.column(j);
                for (ti, c) in self.t.iter_mut().zip(col) {
                    *ti += l * c;
                }
            }
        }
        self.refresh_weights();
    }

    fn refresh_weights(&mut self) {
        for (wi, ti) in self.w.iter_mut().zip(&self.t) {
            *wi = 1.0 / (1.0 + ti);
        }
    }

    fn min_margin(&self) -> f64 {
        self.t.iter().fold(f64::INFINITY, |m, v| m.min(1.0 + v))
    }

    fn smooth(&self) -> f64 {
        self.t.iter().map(|v| libm::log1p(*v)).sum::<f64>() * self.inv_n
    }

    fn score(&self, j: usize) -> f64 {
        let col = self.column(j);
        dot(col, &self.w) * self.inv_n
    }

    /// KKT residual restricted to the nonzero coordinates.
    fn active_residual(&self, penalty: &PenaltySpec) -> f64 {
        let mut res: f64 = 0.0;
        for (j, lam) in self.lambda.iter().enumerate() {
            if *lam != 0.0 {
                let target = penalty.nu() * penalty.rho_prime(lam.abs()) * lam.signum();
                res = res.max((self.score(j) - target).abs());
            }
        }
        res
    }

    fn score_and_curvature(&self, j: usize) -> (f64, f64) {
        let col = self.column(j);
        let (mut s, mut h) = (0.0, 0.0);
        for (c, w) in col.iter().zip(&self.w) {
            let cw = c * w;
            s += cw;
            h += cw * cw;
        }
        (s * self.inv_n, h * self.inv_n)
    }

    /// One proximal Newton update of coordinate `j`. Returns the objective gain.
    fn coordinate_step(&mut self, j: usize, penalty: &PenaltySpec, floor: f64) -> Result<f64> {
        let (s, h) = self.score_and_curvature(j);
        if !(s.is_finite() && h.is_finite()) {
            return Err(Error::SolverBreakdown {
                iteration: 0,
                reason: "non-finite score in coordinate step",
            });
        }
        let lam = self.lambda[j];
        let nu = penalty.nu();
        let delta = if lam == 0.0 {
            let thr = penalty.threshold();
            if s.abs() <= thr {
                return Ok(0.0);
            }
            let sign = s.signum();
            (s - sign * thr) / (h + nu * penalty.rho_second(0.0))
        } else {
            let a = lam.abs();
            let grad = s - nu * penalty.rho_prime(a) * lam.signum();
            let mut d = grad / (h + nu * penalty.rho_second(a));
            if (lam + d) * lam <= 0.0 {
                d = -lam;
            }
            d
        };
        if !(delta.is_finite()) || delta == 0.0 {
            return Ok(0.0);
        }
        let col = self.column(j);
        let pen_old = penalty.coordinate_value(lam);
        let mut step = delta;
        for _ in 0..60 {
            let new_lam = if step == -lam { 0.0 } else { lam + step };
            let feasible = col.iter().zip(&self.t).all(|(c, t)| 1.0 + t + step * c >= floor);
            if feasible {
                let gain_smooth = col
                    .iter()
                    .zip(&self.w)
                    .map(|(c, w)| libm::log1p(step * c * w))
                    .sum::<f64>()
                    * self.inv_n;
                let pen_new = penalty.coordinate_value(new_lam);
                let gain = gain_smooth - (pen_new - pen_old);
                let predicted = s * step - (pen_new - pen_old);
                if predicted <= 0.0 {
                    return Ok(0.0);
                }
                if gain >= 1e-4 * predicted {
                    let applied = new_lam - lam;
                    self.lambda[j] = new_lam;
                    for ((ti, wi), c) in self.t.iter_mut().zip(self.w.iter_mut()).zip(col) {
                        *ti += applied * c;
                        *wi = 1.0 / (1.0 + *ti);
                    }
                    return Ok(gain);
                }
            }
            step *= 0.5;
            if step.abs() < 1e-300 {
                break;
            }
        }
        Ok(0.0)
    }

    /// Newton step on the active set with sign-preserving truncation.
    fn active_newton_step(&mut self, penalty: &PenaltySpec, floor: f64) -> Result<f64> {
        let active: Vec<usize> = (0..self.lambda.len()).filter(|j| self.lambda[*j] != 0.0).collect();
        let m = active.len();
        if m == 0 {
            return Ok(0.0);
        }
        let nu = penalty.nu();
        let n = self.n;
        // columns scaled by w, stored contiguously
        let mut scaled = vec![0.0; n * m];
        let mut grad = DVector::<f64>::zeros(m);
        for (a, &j) in active.iter().enumerate() {
            let col = self.column(j);
            let out = &mut scaled[a * n..(a + 1) * n];
            let mut s = 0.0;
            for ((o, c), w) in out.iter_mut().zip(col).zip(&self.w) {
                *o = c * w;
                s += *o;
            }
            let lam = self.lambda[j];
            grad[a] = s * self.inv_n - nu * penalty.rho_prime(lam.abs()) * lam.signum();
        }
        let mut hess = gram(&scaled, n, m, self.inv_n);
        for (a, &j) in active.iter().enumerate() {
            hess[(a, a)] += nu * penalty.rho_second(self.lambda[j].abs());
        }
        if !grad.iter().all(|v| v.is_finite()) || !hess.iter().all(|v| v.is_finite()) {
            return Err(Error::SolverBreakdown {
                iteration: 0,
                reason: "non-finite Newton system",
            });
        }
        let dir = match solve_spd(&hess, &grad) {
            Some(d) => d,
            None => return Ok(0.0),
        };
        let slope = grad.dot(&dir);
        if !(slope > 0.0) {
            return Ok(0.0);
        }
        // Largest step before some coordinate changes sign.
        let mut max_step = 1.0;
        let mut hits: Vec<usize> = Vec::new();
        for (a, &j) in active.iter().enumerate() {
            let lam = self.lambda[j];
            if dir[a] * lam < 0.0 {
                let s = -lam / dir[a];
                if s < max_step {
                    max_step = s;
                    hits.clear();
                    hits.push(a);
                } else if s == max_step {
                    hits.push(a);
                }
            }
        }
        // direction in t-space: G_A dir
        let mut gd = vec![0.0; n];
        for (a, &j) in active.iter().enumerate() {
            let col = self.column(j);
            for (v, c) in gd.iter_mut().zip(col) {
                *v += dir[a] * c;
            }
        }
        let pen_old: f64 = active.iter().map(|j| penalty.coordinate_value(self.lambda[*j])).sum();
        let mut step = max_step;
        let mut truncated = !hits.is_empty();
        for _ in 0..60 {
            let feasible = gd.iter().zip(&self.t).all(|(d, t)| 1.0 + t + step * d >= floor);
            if feasible {
                let mut new_vals: Vec<f64> = active
                    .iter()
                    .enumerate()
                    .map(|(a, j)| self.lambda[*j] + step * dir[a])
                    .collect();
                if truncated {
                    for a in &hits {
                        new_vals[*a] = 0.0;
                    }
                }
                let gain_smooth = gd
                    .iter()
                    .zip(&self.w)
                    .map(|(d, w)| libm::log1p(step * d * w))
                    .sum::<f64>()
                    * self.inv_n;
                let pen_new: f64 = new_vals.iter().map(|v| penalty.coordinate_value(*v)).sum();
                let gain = gain_smooth - (pen_new - pen_old);
                if gain >= 1e-4 * step * slope {
                    for (a, &j) in active.iter().enumerate() {
                        self.lambda[j] = new_vals[a];
                    }
                    if truncated {
                        // exact zeros: rebuild t from lambda to avoid drift
                        let lam = self.lambda.clone();
                        self.set_lambda(&lam);
                    } else {
                        for ((ti, wi), d) in self.t.iter_mut().zip(self.w.iter_mut()).zip(&gd) {
                            *ti += step * d;
                            *wi = 1.0 / (1.0 + *ti);
                        }
                    }
                    return Ok(gain);
                }
            }
            step *= 0.5;
            truncated = false;
            if step < 1e-300 {
                break;
            }
        }
        Ok(0.0)
    }
}

/// Dot product with independent partial sums, which lets the compiler
/// vectorize the loop.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `scale * C' C` for the column-major `n x m` matrix `C`.
fn gram(cols: &[f64], n: usize, m: usize, scale: f64) -> DMatrix<f64> {
    let mut h = DMatrix::zeros(m, m);
    for a in 0..m {
        let ca = &cols[a * n..(a + 1) * n];
        for b in 0..=a {
            let cb = &cols[b * n..(b + 1) * n];
            let v = dot(ca, cb) * scale;
            h[(a, b)] = v;
            h[(b, a)] = v;
        }
    }
    h
}

/// Solves `H x = b` for symmetric positive (semi)definite `H`, adding a
/// growing ridge when the plain Cholesky factorization fails.
fn solve_spd(h: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let m = h.nrows();
    let scale = (h.trace() / m as f64).abs().max(1e-300);
    let mut ridge = 0.0;
    for _ in 0..12 {
        let mut a = h.clone();
        if ridge > 0.0 {
            for k in 0..m {
                a[(k, k)] += ridge;
            }
        }
        if let Some(ch) = a.cholesky() {
            let x = ch.solve(b);
            if x.iter().all(|v| v.is_finite()) {
                return Some(x);
            }
        }
        ridge = if ridge == 0.0 { 1e-12 * scale } else { ridge * 100.0 };
    }
    None
}

/// Stateful solver carrying a warm start between nearby problems.
#[derive(Debug, Clone)]
pub struct InnerSolver {
    opts: SolverOptions,
    warm: Option<Vec<f64>>,
}

impl InnerSolver {
    pub fn new(opts: SolverOptions) -> Self {
        Self { opts, warm: None }
    }

    pub fn options(&self) -> &SolverOptions {
        &self.opts
    }

    pub fn reset(&mut self) {
        self.warm = None;
    }

    /// Maximizes the penalized objective.
    pub fn solve(&mut self, g: &DMatrix<f64>, penalty: &PenaltySpec) -> Result<LagrangeSolution> {
        let r = g.ncols();
        let opts = &self.opts;
        if g.nrows() == 0 {
            return Err(Error::Dimension(alloc::string::String::from("moment matrix has no rows")));
        }
        if !g.iter().all(|v| v.is_finite()) {
            return Err(Error::SolverBreakdown {
                iteration: 0,
                reason: "non-finite moment matrix",
            });
        }
        let mut st = State::zero(g);
        // Zero is optimal iff every mean moment lies inside the subdifferential at 0.
        let gbar = scores(g, &st.w);
        let thr = penalty.threshold();
        if gbar.iter().all(|v| v.abs() <= thr) {
            let sol = LagrangeSolution {
                lambda: vec![0.0; r],
                support: Vec::new(),
                eta: gbar,
                objective: 0.0,
                status: SolveStatus::Converged,
                iterations: 0,
                kkt: 0.0,
                trace: Vec::new(),
            };
            self.warm = Some(sol.lambda.clone());
            return Ok(sol);
        }
        let mut objective = 0.0;
        if let Some(w) = self.warm.as_ref().filter(|w| w.len() == r && w.iter().any(|v| *v != 0.0)) {
            let w = w.clone();
            st.set_lambda(&w);
            let usable = st.min_margin() >= opts.feasibility_floor;
            let f0 = if usable { st.smooth() - penalty.value(&st.lambda) } else { f64::NEG_INFINITY };
            if f0 > 0.0 {
                objective = f0;
            } else {
                st = State::zero(g);
            }
        }
        let mut trace = Vec::new();
        let mut status = SolveStatus::MaxIter;
        let mut iterations = 0;
        let mut kkt = f64::INFINITY;
        let mut stalled = 0;
        for iter in 1..=opts.max_iter {
            iterations = iter;
            let mut gain = 0.0;
            // A coordinate sweep moves the active set; Newton steps then
            // polish the multiplier on it.
            for j in 0..r {
                gain += st
                    .coordinate_step(j, penalty, opts.feasibility_floor)
                    .map_err(|e| with_iteration(e, iter))?;
            }
            for _ in 0..NEWTON_STEPS_PER_SWEEP {
                let step_gain = st
                    .active_newton_step(penalty, opts.feasibility_floor)
                    .map_err(|e| with_iteration(e, iter))?;
                gain += step_gain;
                if step_gain <= 0.0 || st.active_residual(penalty) <= 0.1 * opts.tol {
                    break;
                }
            }
            let s = scores(g, &st.w);
            kkt = residual_from_scores(&s, &st.lambda, Some(penalty));
            let new_obj = st.smooth() - penalty.value(&st.lambda);
            if !new_obj.is_finite() || !kkt.is_finite() {
                return Err(Error::SolverBreakdown {
                    iteration: iter,
                    reason: "non-finite objective",
                });
            }
            objective = objective.max(new_obj);
            if opts.record_trace {
                trace.push(new_obj);
            }
            if kkt <= opts.tol {
                status = SolveStatus::Converged;
                break;
            }
            if gain <= 0.0 {
                stalled += 1;
                if stalled >= 3 {
                    break;
                }
            } else {
                stalled = 0;
            }
        }
        let s = scores(g, &st.w);
        let eta = eta_from_scores(&s, &st.lambda, penalty);
        let objective = st.smooth() - penalty.value(&st.lambda);
        self.warm = Some(st.lambda.clone());
        Ok(LagrangeSolution {
            support: support_of(&st.lambda, opts.support_threshold),
            lambda: st.lambda,
            eta,
            objective,
            status,
            iterations,
            kkt,
            trace,
        })
    }

    /// Maximizes `(1/n) sum_i log(1 + lambda' g_i)` without penalty.
    pub fn solve_unpenalized(&mut self, g: &DMatrix<f64>) -> Result<LagrangeSolution> {
        let (n, r) = g.shape();
        let opts = &self.opts;
        if n == 0 {
            return Err(Error::Dimension(alloc::string::String::from("moment matrix has no rows")));
        }
        if !g.iter().all(|v| v.is_finite()) {
            return Err(Error::SolverBreakdown {
                iteration: 0,
                reason: "non-finite moment matrix",
            });
        }
        let unbounded = |lambda: Vec<f64>, iterations: usize, trace: Vec<f64>| LagrangeSolution {
            support: support_of(&lambda, opts.support_threshold),
            eta: vec![0.0; lambda.len()],
            lambda,
            objective: f64::INFINITY,
            status: SolveStatus::Unbounded,
            iterations,
            kkt: f64::INFINITY,
            trace,
        };
        if r >= n && has_full_row_rank(g) {
            return Ok(unbounded(vec![0.0; r], 0, Vec::new()));
        }
        let mut st = State::zero(g);
        let log_cap = 50.0 * libm::log(n.max(2) as f64);
        let mut trace = Vec::new();
        let mut status = SolveStatus::MaxIter;
        let mut iterations = 0;
        let mut kkt;
        let mut objective = 0.0;
        let mut stalled = 0;
        loop {
            let s = scores(g, &st.w);
            kkt = residual_from_scores(&s, &st.lambda, None);
            if !kkt.is_finite() {
                return Err(Error::SolverBreakdown {
                    iteration: iterations,
                    reason: "non-finite score",
                });
            }
            if kkt <= opts.tol {
                status = SolveStatus::Converged;
                break;
            }
            if iterations >= opts.max_iter {
                break;
            }
            iterations += 1;
            let mut scaled = g.as_slice().to_vec();
            for col in scaled.chunks_exact_mut(n) {
                for (v, w) in col.iter_mut().zip(&st.w) {
                    *v *= w;
                }
            }
            let hess = gram(&scaled, n, r, 1.0 / n as f64);
            let grad = DVector::from_vec(s);
            let dir = match solve_spd(&hess, &grad) {
                Some(d) => d,
                None => break,
            };
            let slope = grad.dot(&dir);
            let gd = g * &dir;
            let mut step = 1.0;
            let mut accepted = false;
            for _ in 0..80 {
                let feasible = gd.iter().zip(&st.t).all(|(d, t)| 1.0 + t + step * d >= opts.feasibility_floor);
                if feasible {
                    let gain = gd
                        .iter()
                        .zip(&st.w)
                        .map(|(d, w)| libm::log1p(step * d * w))
                        .sum::<f64>()
                        / n as f64;
                    if gain >= 1e-4 * step * slope {
                        for (l, d) in st.lambda.iter_mut().zip(dir.iter()) {
                            *l += step * d;
                        }
                        for ((ti, wi), d) in st.t.iter_mut().zip(st.w.iter_mut()).zip(gd.iter()) {
                            *ti += step * d;
                            *wi = 1.0 / (1.0 + *ti);
                        }
                        objective += gain;
                        accepted = true;
                        break;
                    }
                }
                step *= 0.5;
            }
            if opts.record_trace {
                trace.push(objective);
            }
            let norm = st.lambda.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > opts.divergence_bound || objective > log_cap {
                return Ok(unbounded(st.lambda, iterations, trace));
            }
            if !accepted {
                stalled += 1;
                if stalled >= 3 {
                    break;
                }
            } else {
                stalled = 0;
            }
        }
        let objective = st.smooth();
        let eta = scores(g, &st.w);
        self.warm = Some(st.lambda.clone());
        Ok(LagrangeSolution {
            support: support_of(&st.lambda, opts.support_threshold),
            lambda: st.lambda,
            eta,
            objective,
            status,
            iterations,
            kkt,
            trace,
        })
    }
}

fn with_iteration(e: Error, iteration: usize) -> Error {
    match e {
        Error::SolverBreakdown { reason, .. } => Error::SolverBreakdown { iteration, reason },
        other => other,
    }
}

/// Rows of `g` linearly independent (numerically), via Cholesky of `G G'`.
fn has_full_row_rank(g: &DMatrix<f64>) -> bool {
    let (n, r) = g.shape();
    let k = gram(g.transpose().as_slice(), r, n, 1.0);
    let max_diag = k.diagonal().iter().fold(0.0f64, |m, v| m.max(*v));
    if max_diag <= 0.0 {
        return false;
    }
    match k.cholesky() {
        Some(ch) => {
            let l = ch.l();
            (0..l.nrows()).all(|i| l[(i, i)] * l[(i, i)] > 1e-10 * max_diag)
        }
        None => false,
    }
}

/// One-shot penalized solve (no warm start).
pub fn solve_lambda(g: &DMatrix<f64>, penalty: &PenaltySpec, opts: &SolverOptions) -> Result<LagrangeSolution> {
    InnerSolver::new(opts.clone()).solve(g, penalty)
}

/// One-shot un-penalized solve (no warm start).
pub fn solve_lambda_unpenalized(g: &DMatrix<f64>, opts: &SolverOptions) -> Result<LagrangeSolution> {
    InnerSolver::new(opts.clone()).solve_unpenalized(g)
}
