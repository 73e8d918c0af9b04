use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the likelihood, solver, estimator and sampler layers.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite moment value at row {row}, component {component}")]
    NonFiniteMoment { row: usize, component: usize },

    #[error("multiplier outside the feasible set (min 1 + lambda'g = {min_margin:e})")]
    Infeasible { min_margin: f64 },

    #[error("inner solver broke down at iteration {iteration}: {reason}")]
    SolverBreakdown { iteration: usize, reason: &'static str },

    #[error("posterior evaluation failed at theta = {theta:?}")]
    Posterior {
        theta: Vec<f64>,
        #[source]
        source: Box<Error>,
    },

    #[error("initial point lies outside the parameter space or has zero posterior density")]
    InfeasibleStart,

    #[error("moment covariance is singular (smallest eigenvalue {min_eigenvalue:e})")]
    SingularCovariance { min_eigenvalue: f64 },

    #[error("empty moment support; try a smaller nu grid or a different theta")]
    EmptySupport,

    #[error("sandwich matrix is singular")]
    SingularSandwich,

    #[error("all importance weights are zero (no draw carries mass inside the parameter space)")]
    ZeroWeights,

    #[error("objective is infinite at every simplex vertex")]
    AllInfinite,
}

impl Error {
    pub(crate) fn at_theta(self, theta: &[f64]) -> Self {
        match self {
            e @ Error::Posterior { .. } => e,
            e => Error::Posterior {
                theta: theta.to_vec(),
                source: Box::new(e),
            },
        }
    }

    /// True for failures of the numerics (as opposed to bad input or configuration).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Config(_) | Error::Dimension(_) => false,
            Error::Posterior { source, .. } => source.is_numerical(),
            _ => true,
        }
    }
}

pub type Result<T> = core::result::Result<T, Error>;
