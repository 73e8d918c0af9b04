//! Support extraction, the sandwich matrices, bias correction with
//! confidence intervals, and BIC selection of the penalty level.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::likelihood::PosteriorSpec;
use crate::model::{evaluate_moments, mean_moments, Dataset, MomentModel};
use crate::penalty::PenaltySpec;
use crate::solver::{InnerSolver, LagrangeSolution};

/// Floor inside the BIC logarithm.
pub const BIC_LOG_FLOOR: f64 = 1e-300;

/// Relative eigenvalue below which the moment covariance counts as singular.
const SINGULAR_RATIO: f64 = 1e-12;

/// `{j : |lambda_j| > threshold}` in ascending order.
pub fn extract_support(lambda: &[f64], threshold: f64) -> Vec<usize> {
    lambda
        .iter()
        .enumerate()
        .filter(|(_, l)| l.abs() > threshold)
        .map(|(j, _)| j)
        .collect()
}

/// `E_n[d g_R / d theta]` (`|R| x p`), analytic when the model provides a
/// Jacobian and central differences with step `1e-6 (1 + |theta_k|)`
/// otherwise.
pub fn mean_jacobian(model: &dyn MomentModel, data: &Dataset, theta: &[f64], support: &[usize]) -> Result<DMatrix<f64>> {
    let (r, p) = (model.num_moments(), model.num_params());
    let n = data.n() as f64;
    let mut jac = vec![0.0; r * p];
    let mut acc = DMatrix::zeros(support.len(), p);
    let analytic = model.jacobian(data.row(0), theta, &mut jac);
    if analytic {
        for x in data.rows() {
            model.jacobian(x, theta, &mut jac);
            for (a, &j) in support.iter().enumerate() {
                for k in 0..p {
                    acc[(a, k)] += jac[j * p + k];
                }
            }
        }
        return Ok(acc / n);
    }
    let mut shifted = theta.to_vec();
    for k in 0..p {
        let h = 1e-6 * (1.0 + theta[k].abs());
        shifted[k] = theta[k] + h;
        let plus = mean_moments(&evaluate_moments(model, data, &shifted)?);
        shifted[k] = theta[k] - h;
        let minus = mean_moments(&evaluate_moments(model, data, &shifted)?);
        shifted[k] = theta[k];
        for (a, &j) in support.iter().enumerate() {
            acc[(a, k)] = (plus[j] - minus[j]) / (2.0 * h);
        }
    }
    Ok(acc)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sandwich {
    /// `E_n[g_R g_R']`.
    pub v: DMatrix<f64>,
    /// `E_n[d g_R / d theta]`.
    pub gamma: DMatrix<f64>,
    /// `Gamma' V^{-1} Gamma`.
    pub h: DMatrix<f64>,
    /// `V^{-1} Gamma`, kept for the bias term.
    v_inv_gamma: DMatrix<f64>,
}

/// V, Gamma and H at `theta` on the moment subset `support`.
pub fn sandwich(model: &dyn MomentModel, data: &Dataset, theta: &[f64], support: &[usize]) -> Result<Sandwich> {
    if support.is_empty() {
        return Err(Error::EmptySupport);
    }
    let r = model.num_moments();
    if let Some(j) = support.iter().find(|j| **j >= r) {
        return Err(Error::Dimension(format!("support index {j} out of range for r = {r}")));
    }
    let g = evaluate_moments(model, data, theta)?;
    let n = g.nrows();
    let m = support.len();
    let mut v = DMatrix::zeros(m, m);
    for i in 0..n {
        for a in 0..m {
            let ga = g[(i, support[a])];
            for b in 0..=a {
                v[(a, b)] += ga * g[(i, support[b])];
            }
        }
    }
    for a in 0..m {
        for b in 0..a {
            v[(b, a)] = v[(a, b)];
        }
    }
    v /= n as f64;
    let eig = v.clone().symmetric_eigenvalues();
    let (min, max) = (eig.min(), eig.max());
    if !(max > 0.0) || min <= SINGULAR_RATIO * max {
        return Err(Error::SingularCovariance { min_eigenvalue: min });
    }
    let v_chol = v.clone().cholesky().ok_or(Error::SingularCovariance { min_eigenvalue: min })?;
    let gamma = mean_jacobian(model, data, theta, support)?;
    let v_inv_gamma = v_chol.solve(&gamma);
    let h = gamma.transpose() * &v_inv_gamma;
    let h = (&h + h.transpose()) * 0.5;
    Ok(Sandwich {
        v,
        gamma,
        h,
        v_inv_gamma,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasCorrection {
    pub psi: Vec<f64>,
    pub theta_corrected: Vec<f64>,
    /// `(lower, upper)` per component.
    pub ci: Vec<(f64, f64)>,
    /// `sqrt((H^{-1})_kk / n)`.
    pub std_errors: Vec<f64>,
}

/// `psi = H^{-1} Gamma' V^{-1} eta_R`, `theta_hat - psi`, and marginal
/// intervals `theta_corrected_k -/+ z sqrt((H^{-1})_kk / n)`.
pub fn bias_correct(theta_hat: &[f64], sw: &Sandwich, eta_support: &[f64], n: usize, z: f64) -> Result<BiasCorrection> {
    let p = sw.h.nrows();
    if theta_hat.len() != p || eta_support.len() != sw.v.nrows() {
        return Err(Error::Dimension(format!(
            "theta has length {}, eta {}; sandwich is for p = {p}, |R| = {}",
            theta_hat.len(),
            eta_support.len(),
            sw.v.nrows()
        )));
    }
    let h_chol = sw.h.clone().cholesky().ok_or(Error::SingularSandwich)?;
    let eta = DVector::from_column_slice(eta_support);
    let rhs = sw.v_inv_gamma.transpose() * eta;
    let psi = h_chol.solve(&rhs);
    let h_inv = h_chol.inverse();
    let mut std_errors = Vec::with_capacity(p);
    let mut ci = Vec::with_capacity(p);
    let mut theta_corrected = Vec::with_capacity(p);
    for k in 0..p {
        let c = theta_hat[k] - psi[k];
        let se = libm::sqrt(h_inv[(k, k)] / n as f64);
        if !se.is_finite() {
            return Err(Error::SingularSandwich);
        }
        theta_corrected.push(c);
        std_errors.push(se);
        ci.push((c - z * se, c + z * se));
    }
    Ok(BiasCorrection {
        psi: psi.iter().copied().collect(),
        theta_corrected,
        ci,
        std_errors,
    })
}

/// `log max(floor, |g_bar|^2 / r) + |R| log(n) / n`.
pub fn bic_value(g_bar: &[f64], support_size: usize, n: usize) -> f64 {
    let r = g_bar.len() as f64;
    let fit = g_bar.iter().map(|v| v * v).sum::<f64>() / r;
    let nf = n as f64;
    libm::log(fit.max(BIC_LOG_FLOOR)) + support_size as f64 * libm::log(nf) / nf
}

/// BIC at an estimate, with the support taken from the inner solution there.
pub fn bic(model: &dyn MomentModel, data: &Dataset, theta: &[f64], sol: &LagrangeSolution) -> Result<f64> {
    let g = evaluate_moments(model, data, theta)?;
    let g_bar = mean_moments(&g);
    Ok(bic_value(g_bar.as_slice(), sol.support.len(), data.n()))
}

/// The penalty-level search interval `[0.05, 0.75] n^{-1/2} (log r)^{1/2}`.
pub fn nu_interval(n: usize, r: usize) -> Result<(f64, f64)> {
    if n == 0 || r < 2 {
        return Err(Error::Config(format!("nu interval needs n >= 1 and r >= 2, got n = {n}, r = {r}")));
    }
    let s = libm::sqrt(libm::log(r as f64) / n as f64);
    Ok((0.05 * s, 0.75 * s))
}

/// Equispaced grid over [`nu_interval`], endpoints included.
pub fn nu_grid(n: usize, r: usize, size: usize) -> Result<Vec<f64>> {
    if size < 2 {
        return Err(Error::Config(format!("nu grid needs at least 2 points, got {size}")));
    }
    let (lo, hi) = nu_interval(n, r)?;
    let step = (hi - lo) / (size - 1) as f64;
    Ok((0..size)
        .map(|k| if k == size - 1 { hi } else { lo + step * k as f64 })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BicPoint {
    pub nu: f64,
    pub bic: f64,
    pub support_size: usize,
    pub theta: Vec<f64>,
}

/// Index of the smallest BIC; ties go to the larger `nu`.
pub fn select_min_bic(trace: &[BicPoint]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (k, pt) in trace.iter().enumerate() {
        if !pt.bic.is_finite() && pt.bic != f64::NEG_INFINITY {
            continue;
        }
        best = match best {
            None => Some(k),
            Some(b) => {
                let cur = &trace[b];
                if pt.bic < cur.bic || (pt.bic == cur.bic && pt.nu > cur.nu) {
                    Some(k)
                } else {
                    Some(b)
                }
            }
        };
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneResult {
    pub nu: f64,
    pub trace: Vec<BicPoint>,
    /// Grid points where the estimate failed.
    pub skipped: Vec<(f64, Error)>,
}

/// BIC over the equispaced `nu` grid. `estimate` returns the posterior-mean
/// estimate for the spec at one penalty level; the support comes from the
/// inner solution at that estimate.
pub fn tune_nu<F>(spec: &PosteriorSpec, base: &PenaltySpec, grid_size: usize, mut estimate: F) -> Result<TuneResult>
where
    F: FnMut(&PosteriorSpec) -> Result<Vec<f64>>,
{
    let grid = nu_grid(spec.n(), spec.r(), grid_size)?;
    let mut trace = Vec::with_capacity(grid.len());
    let mut skipped = Vec::new();
    for nu in grid {
        let penalty = base.with_nu(nu)?;
        let at_nu = spec.with_penalty(Some(penalty.clone()));
        let point = estimate(&at_nu).and_then(|theta| {
            let g = evaluate_moments(spec.model.as_ref(), &spec.data, &theta)?;
            let sol = InnerSolver::new(spec.solver_opts.clone()).solve(&g, &penalty)?;
            let g_bar = mean_moments(&g);
            Ok(BicPoint {
                nu,
                bic: bic_value(g_bar.as_slice(), sol.support.len(), spec.n()),
                support_size: sol.support.len(),
                theta,
            })
        });
        match point {
            Ok(pt) => trace.push(pt),
            Err(e) if e.is_numerical() => skipped.push((nu, e)),
            Err(e) => return Err(e),
        }
    }
    let best = select_min_bic(&trace).ok_or_else(|| {
        skipped
            .first()
            .map(|(_, e)| e.clone())
            .unwrap_or_else(|| Error::Config(alloc::string::String::from("no usable nu grid point")))
    })?;
    Ok(TuneResult {
        nu: trace[best].nu,
        trace,
        skipped,
    })
}

/// Everything reported for one estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorReport {
    pub theta_hat: Vec<f64>,
    pub support: Vec<usize>,
    pub lambda: Vec<f64>,
    pub v_hat: DMatrix<f64>,
    pub gamma_hat: DMatrix<f64>,
    pub h_hat: DMatrix<f64>,
    pub psi_hat: Vec<f64>,
    pub theta_corrected: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub ci: Vec<(f64, f64)>,
    pub ci_level: f64,
    pub nu: f64,
    pub bic_trace: Vec<BicPoint>,
}

/// Solves the inner problem at `theta_hat`, then builds the sandwich on its
/// support and the bias-corrected interval estimates. `z` is the normal
/// quantile matching `ci_level`.
pub fn estimate_report(spec: &PosteriorSpec, theta_hat: &[f64], ci_level: f64, z: f64) -> Result<EstimatorReport> {
    let penalty = spec
        .penalty
        .as_ref()
        .ok_or_else(|| Error::Config(alloc::string::String::from("the bias correction needs a penalized posterior")))?;
    if !(ci_level > 0.0 && ci_level < 1.0 && z > 0.0) {
        return Err(Error::Config(format!("invalid interval level {ci_level} / quantile {z}")));
    }
    let g = evaluate_moments(spec.model.as_ref(), &spec.data, theta_hat)?;
    let sol = InnerSolver::new(spec.solver_opts.clone())
        .solve(&g, penalty)
        .map_err(|e| e.at_theta(theta_hat))?;
    let support = extract_support(&sol.lambda, spec.solver_opts.support_threshold);
    let sw = sandwich(spec.model.as_ref(), &spec.data, theta_hat, &support)?;
    let eta: Vec<f64> = support.iter().map(|j| sol.eta[*j]).collect();
    let bc = bias_correct(theta_hat, &sw, &eta, spec.n(), z)?;
    Ok(EstimatorReport {
        theta_hat: theta_hat.to_vec(),
        support,
        lambda: sol.lambda,
        v_hat: sw.v,
        gamma_hat: sw.gamma,
        h_hat: sw.h,
        psi_hat: bc.psi,
        theta_corrected: bc.theta_corrected,
        std_errors: bc.std_errors,
        ci: bc.ci,
        ci_level,
        nu: penalty.nu(),
        bic_trace: Vec::new(),
    })
}
