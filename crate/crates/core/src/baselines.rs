//! Optimization baselines: Nelder-Mead on the profile objective, the
//! standard (un-penalized, four-moment) EL estimator, and the grid-search
//! mode used as an oracle.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::likelihood::{LogDensity, Posterior, PosteriorSpec, PriorSpec};
use crate::model::{Dataset, LeadingMoments, MomentModel, ParameterSpace};
use crate::solver::SolverOptions;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default, deny_unknown_fields))]
pub struct SimplexOptions {
    /// Edge length of the initial simplex.
    pub init_step: f64,
    pub ftol: f64,
    pub max_evals: usize,
    /// Extra runs restarted from the best vertex.
    pub restarts: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            init_step: 0.5,
            ftol: 1e-8,
            max_evals: 5000,
            restarts: 0,
        }
    }
}

impl SimplexOptions {
    pub fn validate(&self) -> Result<()> {
        if self.init_step > 0.0 && self.init_step.is_finite() && self.ftol > 0.0 && self.max_evals > 0 {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid simplex options: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexResult {
    pub theta: Vec<f64>,
    pub value: f64,
    pub evals: usize,
}

/// Nelder-Mead minimization with reflection 1, expansion 2, contraction 0.5
/// and shrink 0.5. `f` may return `+inf`.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], opts: &SimplexOptions) -> Result<SimplexResult>
where
    F: FnMut(&[f64]) -> f64,
{
    opts.validate()?;
    let p = x0.len();
    if p == 0 {
        return Err(Error::Dimension(String::from("empty starting point")));
    }
    let mut evals = 0;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut best = x0.to_vec();
    let mut best_val = f64::INFINITY;
    for _run in 0..=opts.restarts {
        if evals >= opts.max_evals {
            break;
        }
        let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(p + 1);
        simplex.push(best.clone());
        for k in 0..p {
            let mut v = best.clone();
            v[k] += opts.init_step;
            simplex.push(v);
        }
        let mut vals: Vec<f64> = simplex.iter().map(|x| eval(x, &mut evals)).collect();
        if vals.iter().all(|v| *v == f64::INFINITY) {
            if best_val < f64::INFINITY {
                break;
            }
            return Err(Error::AllInfinite);
        }
        while evals < opts.max_evals {
            // sort ascending, stable so ties keep vertex order
            let mut order: Vec<usize> = (0..=p).collect();
            order.sort_by(|a, b| vals[*a].total_cmp(&vals[*b]));
            simplex = order.iter().map(|i| simplex[*i].clone()).collect();
            vals = order.iter().map(|i| vals[*i]).collect();
            let (lo, hi) = (vals[0], vals[p]);
            if hi.is_finite() && hi - lo <= opts.ftol * (lo.abs() + hi.abs()) * 0.5 + 1e-300 {
                break;
            }
            let mut centroid = vec![0.0; p];
            for x in &simplex[..p] {
                for (c, v) in centroid.iter_mut().zip(x) {
                    *c += v / p as f64;
                }
            }
            let along = |t: f64| -> Vec<f64> { centroid.iter().zip(&simplex[p]).map(|(c, w)| c + t * (c - w)).collect() };
            let xr = along(1.0);
            let fr = eval(&xr, &mut evals);
            if fr < vals[0] {
                let xe = along(2.0);
                let fe = eval(&xe, &mut evals);
                if fe < fr {
                    simplex[p] = xe;
                    vals[p] = fe;
                } else {
                    simplex[p] = xr;
                    vals[p] = fr;
                }
                continue;
            }
            if fr < vals[p - 1] {
                simplex[p] = xr;
                vals[p] = fr;
                continue;
            }
            // contraction: outside if the reflection improved on the worst
            let (xc, fc) = if fr < vals[p] {
                let xc = along(0.5);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            } else {
                let xc = along(-0.5);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            };
            if fc < vals[p].min(fr) {
                simplex[p] = xc;
                vals[p] = fc;
                continue;
            }
            // shrink towards the best vertex
            for k in 1..=p {
                let x: Vec<f64> = simplex[0].iter().zip(&simplex[k]).map(|(b, v)| b + 0.5 * (v - b)).collect();
                vals[k] = eval(&x, &mut evals);
                simplex[k] = x;
            }
        }
        let k = (0..=p).min_by(|a, b| vals[*a].total_cmp(&vals[*b])).expect("simplex is nonempty");
        if vals[k] < best_val {
            best_val = vals[k];
            best = simplex[k].clone();
        }
    }
    Ok(SimplexResult {
        theta: best,
        value: best_val,
        evals,
    })
}

/// `F_n(theta) = -(log posterior + n log n) / n`; with the improper uniform
/// prior this is the maximized inner objective. Zero density and failed
/// evaluations map to `+inf`.
pub fn profile_value(post: &mut Posterior, theta: &[f64]) -> f64 {
    let n = post.spec().n() as f64;
    let base = post.spec().uniform_log_weight();
    match post.log_posterior(theta) {
        Ok(LogDensity::Finite(v)) => -(v - base) / n,
        _ => f64::INFINITY,
    }
}

/// Nelder-Mead on the profile; the box is enforced by `+inf` outside it.
pub fn minimize_profile(post: &mut Posterior, theta0: &[f64], opts: &SimplexOptions) -> Result<SimplexResult> {
    if !post.spec().space.contains(theta0) {
        return Err(Error::InfeasibleStart);
    }
    nelder_mead(|x| profile_value(post, x), theta0, opts)
}

/// Un-penalized EL on the first four moment conditions, minimized from
/// `theta0` by Nelder-Mead.
pub fn standard_el_estimate(
    model: Arc<dyn MomentModel>,
    data: Arc<Dataset>,
    space: ParameterSpace,
    solver_opts: SolverOptions,
    theta0: &[f64],
    opts: &SimplexOptions,
) -> Result<SimplexResult> {
    let leading: Arc<dyn MomentModel> = Arc::new(LeadingMoments::new(model, 4)?);
    let spec = PosteriorSpec::new(leading, data, None, PriorSpec::ImproperUniform, space, solver_opts)?;
    let mut post = Posterior::new(Arc::new(spec));
    minimize_profile(&mut post, theta0, opts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridMode {
    pub theta: Vec<f64>,
    pub log_posterior: f64,
    pub evaluations: usize,
}

/// Grid point `index` (first coordinate varying slowest).
pub fn grid_point(lo: &[f64], hi: &[f64], points: usize, index: usize) -> Vec<f64> {
    let p = lo.len();
    let mut digits = vec![0; p];
    let mut rest = index;
    for k in (0..p).rev() {
        digits[k] = rest % points;
        rest /= points;
    }
    (0..p)
        .map(|k| {
            if digits[k] == points - 1 {
                hi[k]
            } else {
                lo[k] + (hi[k] - lo[k]) * digits[k] as f64 / (points - 1) as f64
            }
        })
        .collect()
}

/// Position `t` of a snake walk over the grid, as a lexicographic index.
/// Consecutive positions are neighbouring grid points, which keeps the
/// inner solver's warm start useful.
fn snake_index(p: usize, points: usize, t: usize) -> usize {
    let mut digits = vec![0; p];
    let mut rest = t;
    for k in (0..p).rev() {
        digits[k] = rest % points;
        rest /= points;
    }
    let mut parity = 0;
    for d in digits.iter_mut() {
        if parity % 2 == 1 {
            *d = points - 1 - *d;
        }
        parity += *d;
    }
    digits.iter().fold(0, |acc, d| acc * points + d)
}

/// Maximizes the log posterior over the tensor grid with `points` values per
/// coordinate on `[lo, hi]`. Ties go to the smallest lexicographic index;
/// failed evaluations count as zero density.
pub fn grid_mode(post: &mut Posterior, lo: &[f64], hi: &[f64], points: usize) -> Result<GridMode> {
    let p = post.spec().p();
    if lo.len() != p || hi.len() != p {
        return Err(Error::Dimension(format!("grid bounds must have length {p}")));
    }
    if points < 2 || lo.iter().zip(hi).any(|(a, b)| !(a < b)) {
        return Err(Error::Config(String::from("grid needs at least 2 points per axis and lo < hi")));
    }
    let total = points
        .checked_pow(p as u32)
        .ok_or_else(|| Error::Config(format!("grid with {points}^{p} points is too large")))?;
    let mut best: Option<(f64, usize)> = None;
    for t in 0..total {
        let idx = snake_index(p, points, t);
        let theta = grid_point(lo, hi, points, idx);
        let v = post.log_posterior(&theta).map(|d| d.value()).unwrap_or(f64::NEG_INFINITY);
        if v == f64::NEG_INFINITY {
            continue;
        }
        best = match best {
            Some((bv, bi)) if bv > v || (bv == v && bi < idx) => Some((bv, bi)),
            _ => Some((v, idx)),
        };
    }
    let (value, idx) = best.ok_or(Error::AllInfinite)?;
    Ok(GridMode {
        theta: grid_point(lo, hi, points, idx),
        log_posterior: value,
        evaluations: total,
    })
}
