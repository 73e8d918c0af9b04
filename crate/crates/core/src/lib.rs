//! Bayesian penalized empirical likelihood.
//!
//! The crate evaluates the penalized empirical likelihood of a moment-condition
//! model, samples the resulting posterior with random-walk Metropolis-Hastings
//! or modified adaptive multiple importance sampling, and turns posterior means
//! into bias-corrected estimates with sandwich standard errors.
//!
//! Everything here is `no_std` (with `alloc`); file formats, configuration and
//! the command-line driver live in the `bpel` crate.
#![no_std]
// `!(x > 0.0)` is used on purpose so that NaN takes the failure branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod baselines;
pub mod error;
pub mod estimator;
pub mod likelihood;
pub mod model;
pub mod penalty;
pub mod rng;
pub mod samplers;
pub mod solver;

pub use error::{Error, Result};
pub use estimator::{estimate_report, tune_nu, EstimatorReport};

pub use model::{Dataset, IvModel, IvSimConfig, MomentModel, ParameterSpace};
pub use likelihood::{Evaluation, LogDensity, LogTarget, Posterior, PosteriorSpec, PriorSpec};
pub use penalty::PenaltySpec;
pub use samplers::{chain_mean, mamis_sample, mh_sample, weighted_mean, Chain, RwProposal, StudentTProposal, WeightedSamples};
pub use solver::{InnerSolver, LagrangeSolution, SolveStatus, SolverOptions};
