//! Log empirical likelihood, log penalized empirical likelihood, priors and
//! the (unnormalized) log posterior.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::{evaluate_moments, Dataset, MomentModel, ParameterSpace};
use crate::penalty::PenaltySpec;
use crate::solver::{InnerSolver, LagrangeSolution, SolveStatus, SolverOptions};

/// A log density that may be exactly zero on the natural scale.
///
/// Zero density is a variant rather than `-inf` so the sampler branches on
/// it explicitly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LogDensity {
    Finite(f64),
    Zero,
}

impl LogDensity {
    pub fn is_zero(self) -> bool {
        matches!(self, LogDensity::Zero)
    }

    /// The value as a float, with `-inf` for zero density.
    pub fn value(self) -> f64 {
        match self {
            LogDensity::Finite(v) => v,
            LogDensity::Zero => f64::NEG_INFINITY,
        }
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            LogDensity::Finite(v) => Some(v),
            LogDensity::Zero => None,
        }
    }

    fn plus(self, c: f64) -> Self {
        match self {
            LogDensity::Finite(v) => LogDensity::Finite(v + c),
            LogDensity::Zero => LogDensity::Zero,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)
)]
pub enum PriorSpec {
    /// Log density 0 on the parameter space.
    #[default]
    ImproperUniform,
    /// Isotropic normal `N(mean, sd^2 I)`.
    Gaussian { mean: Vec<f64>, sd: f64 },
}

impl PriorSpec {
    pub fn validate(&self, p: usize) -> Result<()> {
        match self {
            PriorSpec::ImproperUniform => Ok(()),
            PriorSpec::Gaussian { mean, sd } => {
                if mean.len() != p {
                    return Err(Error::Dimension(format!("prior mean has length {}, expected {p}", mean.len())));
                }
                if !(sd.is_finite() && *sd > 0.0) || !mean.iter().all(|m| m.is_finite()) {
                    return Err(Error::Config(format!("gaussian prior needs finite mean and sd > 0, got sd = {sd}")));
                }
                Ok(())
            }
        }
    }

    pub fn log_density(&self, theta: &[f64]) -> f64 {
        match self {
            PriorSpec::ImproperUniform => 0.0,
            PriorSpec::Gaussian { mean, sd } => {
                let q: f64 = theta.iter().zip(mean).map(|(t, m)| (t - m) * (t - m)).sum();
                let p = theta.len() as f64;
                -0.5 * q / (sd * sd) - p * (libm::log(*sd) + 0.5 * libm::log(2.0 * core::f64::consts::PI))
            }
        }
    }
}

/// Everything that defines a posterior.
#[derive(Clone)]
pub struct PosteriorSpec {
    pub model: Arc<dyn MomentModel>,
    pub data: Arc<Dataset>,
    /// `None` gives the plain empirical likelihood.
    pub penalty: Option<PenaltySpec>,
    pub prior: PriorSpec,
    pub space: ParameterSpace,
    pub solver_opts: SolverOptions,
}

impl core::fmt::Debug for PosteriorSpec {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("PosteriorSpec")
            .field("model", &self.model.name())
            .field("n", &self.data.n())
            .field("penalty", &self.penalty)
            .field("prior", &self.prior)
            .field("space", &self.space)
            .finish()
    }
}

impl PosteriorSpec {
    pub fn new(
        model: Arc<dyn MomentModel>,
        data: Arc<Dataset>,
        penalty: Option<PenaltySpec>,
        prior: PriorSpec,
        space: ParameterSpace,
        solver_opts: SolverOptions,
    ) -> Result<Self> {
        let spec = Self {
            model,
            data,
            penalty,
            prior,
            space,
            solver_opts,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.model.num_params();
        if self.space.p() != p {
            return Err(Error::Dimension(format!(
                "parameter space has dimension {}, model has {p} parameters",
                self.space.p()
            )));
        }
        if self.model.num_moments() == 0 {
            return Err(Error::Dimension(format!("model {} has no moment conditions", self.model.name())));
        }
        self.prior.validate(p)?;
        self.solver_opts.validate()
    }

    pub fn p(&self) -> usize {
        self.space.p()
    }

    pub fn n(&self) -> usize {
        self.data.n()
    }

    pub fn r(&self) -> usize {
        self.model.num_moments()
    }

    /// The same posterior at another penalty level (`None` for plain EL).
    pub fn with_penalty(&self, penalty: Option<PenaltySpec>) -> Self {
        Self {
            penalty,
            ..self.clone()
        }
    }

    /// `-n log n`, the log likelihood of uniform weights.
    pub fn uniform_log_weight(&self) -> f64 {
        let n = self.n() as f64;
        -n * libm::log(n)
    }
}

/// One evaluation of the log posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub log_posterior: LogDensity,
    /// Log EL or log PEL (without the prior).
    pub log_likelihood: LogDensity,
    /// Inner solution; `None` outside the parameter space.
    pub solution: Option<LagrangeSolution>,
}

/// Anything the samplers can target.
pub trait LogTarget {
    fn dim(&self) -> usize;
    fn contains(&self, theta: &[f64]) -> bool;
    /// Unnormalized log density; `Zero` outside the support.
    fn log_density(&mut self, theta: &[f64]) -> Result<LogDensity>;
}

const CACHE_SIZE: usize = 16;

/// Stateful evaluator: carries the inner solver's warm start and a small
/// cache of recent evaluations keyed by the exact bits of `theta`.
pub struct Posterior {
    spec: Arc<PosteriorSpec>,
    solver: InnerSolver,
    cache: VecDeque<(Vec<u64>, Evaluation)>,
    evaluations: usize,
}

impl Posterior {
    pub fn new(spec: Arc<PosteriorSpec>) -> Self {
        let solver = InnerSolver::new(spec.solver_opts.clone());
        Self {
            spec,
            solver,
            cache: VecDeque::with_capacity(CACHE_SIZE),
            evaluations: 0,
        }
    }

    pub fn spec(&self) -> &Arc<PosteriorSpec> {
        &self.spec
    }

    /// Number of inner solves performed (cache hits excluded).
    pub fn evaluations(&self) -> usize {
        self.evaluations
    }

    pub fn reset_warm_start(&mut self) {
        self.solver.reset();
    }

    fn key(theta: &[f64]) -> Vec<u64> {
        theta.iter().map(|t| t.to_bits()).collect()
    }

    /// Solution from an earlier evaluation at exactly this `theta`.
    pub fn cached(&self, theta: &[f64]) -> Option<&Evaluation> {
        let key = Self::key(theta);
        self.cache.iter().find(|(k, _)| *k == key).map(|(_, e)| e)
    }

    /// Evaluates the log posterior with the inner solution attached.
    pub fn evaluate(&mut self, theta: &[f64]) -> Result<Evaluation> {
        if theta.len() != self.spec.p() {
            return Err(Error::Dimension(format!(
                "theta has length {}, expected {}",
                theta.len(),
                self.spec.p()
            )));
        }
        if let Some(e) = self.cached(theta) {
            return Ok(e.clone());
        }
        let eval = if !self.spec.space.contains(theta) {
            Evaluation {
                log_posterior: LogDensity::Zero,
                log_likelihood: LogDensity::Zero,
                solution: None,
            }
        } else {
            let (log_lik, sol) = self.log_likelihood(theta)?;
            Evaluation {
                log_posterior: log_lik.plus(self.spec.prior.log_density(theta)),
                log_likelihood: log_lik,
                solution: Some(sol),
            }
        };
        if self.cache.len() == CACHE_SIZE {
            self.cache.pop_front();
        }
        self.cache.push_back((Self::key(theta), eval.clone()));
        Ok(eval)
    }

    pub fn log_posterior(&mut self, theta: &[f64]) -> Result<LogDensity> {
        Ok(self.evaluate(theta)?.log_posterior)
    }

    /// Log EL or log PEL depending on the spec, ignoring the parameter space.
    fn log_likelihood(&mut self, theta: &[f64]) -> Result<(LogDensity, LagrangeSolution)> {
        self.evaluations += 1;
        let spec = &self.spec;
        let g = evaluate_moments(spec.model.as_ref(), &spec.data, theta).map_err(|e| e.at_theta(theta))?;
        let n = spec.n() as f64;
        let base = spec.uniform_log_weight();
        match &spec.penalty {
            Some(p) => {
                let sol = self.solver.solve(&g, p).map_err(|e| e.at_theta(theta))?;
                Ok((LogDensity::Finite(base - n * sol.objective), sol))
            }
            None => {
                let sol = self.solver.solve_unpenalized(&g).map_err(|e| e.at_theta(theta))?;
                let ld = if sol.status == SolveStatus::Unbounded {
                    LogDensity::Zero
                } else {
                    LogDensity::Finite(base - n * sol.objective)
                };
                Ok((ld, sol))
            }
        }
    }

    /// `-n log n - n max_lambda (1/n) sum log(1 + lambda' g_i)`, penalty ignored.
    pub fn log_el(&mut self, theta: &[f64]) -> Result<(LogDensity, LagrangeSolution)> {
        let spec = Arc::new(self.spec.with_penalty(None));
        let mut plain = Posterior::new(spec);
        plain.log_likelihood(theta)
    }
}

impl LogTarget for Posterior {
    fn dim(&self) -> usize {
        self.spec.p()
    }

    fn contains(&self, theta: &[f64]) -> bool {
        self.spec.space.contains(theta)
    }

    fn log_density(&mut self, theta: &[f64]) -> Result<LogDensity> {
        self.log_posterior(theta)
    }
}

/// One-shot log EL at `theta` (no warm start).
pub fn log_el(spec: &PosteriorSpec, theta: &[f64]) -> Result<LogDensity> {
    let mut post = Posterior::new(Arc::new(spec.with_penalty(None)));
    Ok(post.log_likelihood(theta)?.0)
}

/// One-shot log PEL at `theta`; errors when the spec carries no penalty.
pub fn log_pel(spec: &PosteriorSpec, theta: &[f64]) -> Result<(f64, LagrangeSolution)> {
    if spec.penalty.is_none() {
        return Err(Error::Config(alloc::string::String::from("log_pel needs a penalty")));
    }
    let mut post = Posterior::new(Arc::new(spec.clone()));
    let (ld, sol) = post.log_likelihood(theta)?;
    Ok((ld.value(), sol))
}

/// One-shot unnormalized log posterior.
pub fn log_posterior(spec: &PosteriorSpec, theta: &[f64]) -> Result<LogDensity> {
    Posterior::new(Arc::new(spec.clone())).log_posterior(theta)
}
