//! Random-walk Metropolis-Hastings and modified adaptive multiple importance
//! sampling (MAMIS) over any [`LogTarget`].

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution};

use crate::error::{Error, Result};
use crate::likelihood::{LogDensity, LogTarget};
use crate::rng::{purpose, standard_normal, substream, uniform};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleRule {
    /// `sigma2` is used as given.
    Fixed,
    /// `sigma2 = C / (n log r)`.
    NLogR,
}

/// Isotropic Gaussian random-walk proposal.
#[derive(Debug, Clone, PartialEq)]
pub struct RwProposal {
    pub sigma2: f64,
    pub scale_rule: ScaleRule,
    /// The constant `C` of the `NLogR` rule (1 for `Fixed`).
    pub c: f64,
    pub target_acceptance: f64,
    /// Tune the scale during burn-in towards `target_acceptance`.
    pub adapt_burnin: bool,
}

pub const DEFAULT_TARGET_ACCEPTANCE: f64 = 0.234;
/// Burn-in steps between scale adjustments.
pub const ADAPT_WINDOW: usize = 50;

impl RwProposal {
    pub fn fixed(sigma2: f64) -> Result<Self> {
        let p = Self {
            sigma2,
            scale_rule: ScaleRule::Fixed,
            c: 1.0,
            target_acceptance: DEFAULT_TARGET_ACCEPTANCE,
            adapt_burnin: false,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn n_logr(c: f64, n: usize, r: usize) -> Result<Self> {
        if r < 2 {
            return Err(Error::Config(format!("the n log r step rule needs r >= 2, got r = {r}")));
        }
        let p = Self {
            sigma2: c / (n as f64 * libm::log(r as f64)),
            scale_rule: ScaleRule::NLogR,
            c,
            target_acceptance: DEFAULT_TARGET_ACCEPTANCE,
            adapt_burnin: true,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.sigma2.is_finite()
            && self.sigma2 > 0.0
            && self.c.is_finite()
            && self.c > 0.0
            && self.target_acceptance > 0.0
            && self.target_acceptance < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid random-walk proposal: {self:?}")))
        }
    }
}

/// Post-burn-in Metropolis-Hastings output.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub p: usize,
    /// Row-major `K x p` draws.
    pub draws: Vec<f64>,
    pub log_post: Vec<f64>,
    pub accepted_flags: Vec<bool>,
    pub accepted: usize,
    pub proposed: usize,
    pub burnin: usize,
    pub burnin_accepted: usize,
    /// Proposal variance after burn-in adaptation.
    pub sigma2: f64,
    pub c: f64,
    pub seed: u64,
    /// Set when a posterior evaluation failed; the draws are then partial.
    pub failure: Option<Error>,
}

impl Chain {
    pub fn len(&self) -> usize {
        self.log_post.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_post.is_empty()
    }

    pub fn draw(&self, k: usize) -> &[f64] {
        &self.draws[k * self.p..(k + 1) * self.p]
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    /// Mean of the first `k` draws.
    pub fn prefix_mean(&self, k: usize) -> Result<Vec<f64>> {
        if k == 0 || k > self.len() {
            return Err(Error::Config(format!("prefix of length {k} requested from a chain of {}", self.len())));
        }
        let mut m = vec![0.0; self.p];
        for i in 0..k {
            for (mj, x) in m.iter_mut().zip(self.draw(i)) {
                *mj += x;
            }
        }
        m.iter_mut().for_each(|v| *v /= k as f64);
        Ok(m)
    }

    /// Smallest per-coordinate effective sample size.
    pub fn ess(&self) -> f64 {
        (0..self.p)
            .map(|j| {
                let xs: Vec<f64> = (0..self.len()).map(|k| self.draw(k)[j]).collect();
                autocorrelation_ess(&xs)
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// Arithmetic mean of the post-burn-in draws.
pub fn chain_mean(chain: &Chain) -> Result<Vec<f64>> {
    chain.prefix_mean(chain.len())
}

/// Log acceptance probability of a move `theta -> proposal`.
///
/// `log_q_forward` is `log phi(proposal | theta)` and `log_q_backward` is
/// `log phi(theta | proposal)`.
pub fn log_acceptance(
    proposal_in_space: bool,
    current: LogDensity,
    proposed: LogDensity,
    log_q_forward: f64,
    log_q_backward: f64,
) -> f64 {
    if !proposal_in_space {
        return f64::NEG_INFINITY;
    }
    // A zero denominator (current density or forward proposal density) accepts.
    let cur = match current {
        LogDensity::Finite(c) if log_q_forward > f64::NEG_INFINITY => c,
        _ => return 0.0,
    };
    match proposed {
        LogDensity::Zero => f64::NEG_INFINITY,
        LogDensity::Finite(v) => (v + log_q_backward - cur - log_q_forward).min(0.0),
    }
}

/// Current state of a random walk.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkState {
    pub theta: Vec<f64>,
    pub log_post: LogDensity,
}

/// One random-walk step with standard deviation `sigma`. Returns whether the
/// proposal was accepted.
pub fn mh_step<T: LogTarget + ?Sized, R: Rng + ?Sized>(
    target: &mut T,
    state: &mut WalkState,
    sigma: f64,
    rng: &mut R,
) -> Result<bool> {
    let proposal: Vec<f64> = state.theta.iter().map(|t| t + sigma * standard_normal(rng)).collect();
    let inside = target.contains(&proposal);
    let proposed = if inside {
        target.log_density(&proposal)?
    } else {
        LogDensity::Zero
    };
    // symmetric proposal: the q terms cancel
    let log_alpha = log_acceptance(inside, state.log_post, proposed, 0.0, 0.0);
    let u = uniform(rng);
    let accept = log_alpha >= 0.0 || libm::log(u) < log_alpha;
    if accept {
        state.theta = proposal;
        state.log_post = proposed;
    }
    Ok(accept)
}

/// Random-walk Metropolis-Hastings. The chain's random stream is
/// `substream(seed, [MH])`.
pub fn mh_sample<T: LogTarget + ?Sized>(
    target: &mut T,
    prop: &RwProposal,
    theta0: &[f64],
    draws: usize,
    burnin: usize,
    seed: u64,
) -> Result<Chain> {
    prop.validate()?;
    let p = target.dim();
    if theta0.len() != p {
        return Err(Error::Dimension(format!("theta0 has length {}, expected {p}", theta0.len())));
    }
    if !target.contains(theta0) {
        return Err(Error::InfeasibleStart);
    }
    let log_post = target.log_density(theta0)?;
    if log_post.is_zero() {
        return Err(Error::InfeasibleStart);
    }
    let mut rng = substream(seed, &[purpose::MH]);
    let mut state = WalkState {
        theta: theta0.to_vec(),
        log_post,
    };
    let mut chain = Chain {
        p,
        draws: Vec::with_capacity(draws * p),
        log_post: Vec::with_capacity(draws),
        accepted_flags: Vec::with_capacity(draws),
        accepted: 0,
        proposed: 0,
        burnin,
        burnin_accepted: 0,
        sigma2: prop.sigma2,
        c: prop.c,
        seed,
        failure: None,
    };
    let mut sigma2 = prop.sigma2;
    let mut c = prop.c;
    let mut window_accepted = 0;
    for step in 0..burnin + draws {
        let accepted = match mh_step(target, &mut state, libm::sqrt(sigma2), &mut rng) {
            Ok(a) => a,
            Err(e) => {
                chain.failure = Some(e);
                break;
            }
        };
        if step < burnin {
            chain.burnin_accepted += accepted as usize;
            window_accepted += accepted as usize;
            if prop.adapt_burnin && (step + 1) % ADAPT_WINDOW == 0 {
                let rate = window_accepted as f64 / ADAPT_WINDOW as f64;
                let factor = if rate > prop.target_acceptance {
                    1.1
                } else if rate < prop.target_acceptance {
                    0.9
                } else {
                    1.0
                };
                c *= factor;
                sigma2 *= factor;
                window_accepted = 0;
            }
            continue;
        }
        chain.proposed += 1;
        chain.accepted += accepted as usize;
        chain.draws.extend_from_slice(&state.theta);
        chain.log_post.push(state.log_post.value());
        chain.accepted_flags.push(accepted);
    }
    chain.sigma2 = sigma2;
    chain.c = c;
    Ok(chain)
}

/// Outcome of a count-until-valid run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValidCount {
    pub proposals: usize,
    /// The cap was hit before enough valid samples were seen.
    pub censored: bool,
}

/// Runs the random walk from `theta0` (which may have zero density) and counts
/// proposals until `needed` proposals were accepted into states of positive
/// density, stopping at `cap` proposals.
pub fn proposals_until_valid<T: LogTarget + ?Sized, R: Rng + ?Sized>(
    target: &mut T,
    theta0: &[f64],
    sigma2: f64,
    needed: usize,
    cap: usize,
    rng: &mut R,
) -> Result<ValidCount> {
    if !target.contains(theta0) {
        return Err(Error::InfeasibleStart);
    }
    let mut state = WalkState {
        theta: theta0.to_vec(),
        log_post: target.log_density(theta0)?,
    };
    let sigma = libm::sqrt(sigma2);
    let mut valid = 0;
    for k in 1..=cap {
        if mh_step(target, &mut state, sigma, rng)? && !state.log_post.is_zero() {
            valid += 1;
            if valid >= needed {
                return Ok(ValidCount {
                    proposals: k,
                    censored: false,
                });
            }
        }
    }
    Ok(ValidCount {
        proposals: cap,
        censored: true,
    })
}

/// Effective sample size of a scalar chain with Geyer's initial positive
/// sequence estimator.
pub fn autocorrelation_ess(xs: &[f64]) -> f64 {
    let k = xs.len();
    if k < 3 {
        return k as f64;
    }
    let mean = xs.iter().sum::<f64>() / k as f64;
    let c: Vec<f64> = xs.iter().map(|x| x - mean).collect();
    let var = c.iter().map(|v| v * v).sum::<f64>() / k as f64;
    if var == 0.0 {
        return k as f64;
    }
    let rho = |lag: usize| c[..k - lag].iter().zip(&c[lag..]).map(|(a, b)| a * b).sum::<f64>() / (k as f64 * var);
    let mut tau = -1.0;
    let mut lag = 0;
    let mut prev_pair = f64::INFINITY;
    while lag + 1 < k {
        let mut pair = rho(lag) + rho(lag + 1);
        if pair <= 0.0 {
            break;
        }
        // initial monotone sequence
        pair = pair.min(prev_pair);
        prev_pair = pair;
        tau += 2.0 * pair;
        lag += 2;
    }
    (k as f64 / tau.max(1e-12)).min(k as f64 * libm::log10(k as f64))
}

/// `(sum w)^2 / sum w^2`.
pub fn weights_ess(weights: &[f64]) -> f64 {
    let s: f64 = weights.iter().sum();
    let s2: f64 = weights.iter().map(|w| w * w).sum();
    if s2 == 0.0 {
        0.0
    } else {
        s * s / s2
    }
}

/// Multivariate Student-t proposal `T_df(mu, Sigma)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentTProposal {
    pub df: f64,
    pub mu: Vec<f64>,
    pub sigma: DMatrix<f64>,
    chol: DMatrix<f64>,
    log_det: f64,
}

impl StudentTProposal {
    /// Validates `df > 2` and factors `sigma`, adding a jitter of
    /// `1e-8 trace / p` to the diagonal when the plain factorization fails.
    pub fn new(df: f64, mu: Vec<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let p = mu.len();
        if !(df > 2.0 && df.is_finite()) {
            return Err(Error::Config(format!("proposal degrees of freedom must exceed 2, got {df}")));
        }
        if p == 0 || sigma.shape() != (p, p) {
            return Err(Error::Dimension(format!(
                "proposal scale is {:?}, location has length {p}",
                sigma.shape()
            )));
        }
        if !mu.iter().chain(sigma.iter()).all(|v| v.is_finite()) {
            return Err(Error::Config(String::from("proposal parameters must be finite")));
        }
        let sym = (&sigma + sigma.transpose()) * 0.5;
        let chol = match sym.clone().cholesky() {
            Some(c) => c.l(),
            None => {
                let jitter = 1e-8 * sym.trace() / p as f64;
                let mut repaired = sym.clone();
                for k in 0..p {
                    repaired[(k, k)] += jitter;
                }
                match (jitter > 0.0).then(|| repaired.cholesky()).flatten() {
                    Some(c) => c.l(),
                    None => {
                        return Err(Error::SingularCovariance {
                            min_eigenvalue: sym.symmetric_eigenvalues().min(),
                        })
                    }
                }
            }
        };
        let log_det = 2.0 * chol.diagonal().iter().map(|d| libm::log(*d)).sum::<f64>();
        Ok(Self {
            df,
            mu,
            sigma: sym,
            chol,
            log_det,
        })
    }

    /// `T_df(center, I)`.
    pub fn standard(df: f64, center: Vec<f64>) -> Result<Self> {
        let p = center.len();
        Self::new(df, center, DMatrix::identity(p, p))
    }

    pub fn p(&self) -> usize {
        self.mu.len()
    }

    /// `(mu, vech(Sigma))`, the lower triangle read column by column.
    pub fn zeta(&self) -> Vec<f64> {
        let p = self.p();
        let mut z = self.mu.clone();
        for j in 0..p {
            for i in j..p {
                z.push(self.sigma[(i, j)]);
            }
        }
        z
    }

    /// Draws `mu + L z / sqrt(W / df)` with `z` standard normal (drawn
    /// first, coordinate by coordinate) and `W ~ ChiSquared(df)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let p = self.p();
        let z = DVector::from_iterator(p, (0..p).map(|_| standard_normal(rng)));
        let w: f64 = ChiSquared::new(self.df).expect("df checked on construction").sample(rng);
        let scale = 1.0 / libm::sqrt(w / self.df);
        let lz = &self.chol * z;
        self.mu.iter().zip(lz.iter()).map(|(m, v)| m + scale * v).collect()
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let p = self.p() as f64;
        let diff = DVector::from_iterator(self.p(), x.iter().zip(&self.mu).map(|(a, b)| a - b));
        let y = self
            .chol
            .solve_lower_triangular(&diff)
            .expect("factor has a positive diagonal");
        let delta = y.norm_squared();
        let nu = self.df;
        libm::lgamma(0.5 * (nu + p)) - libm::lgamma(0.5 * nu) - 0.5 * p * libm::log(nu * core::f64::consts::PI)
            - 0.5 * self.log_det
            - 0.5 * (nu + p) * libm::log1p(delta / nu)
    }
}

/// `N_k` proportional to `k`, summing exactly to `total`. Rounding
/// leftovers go to the last stage so the sizes stay non-decreasing.
pub fn stage_sizes(total: usize, stages: usize) -> Result<Vec<usize>> {
    let denom = stages * (stages + 1) / 2;
    if stages == 0 || total < denom {
        return Err(Error::Config(format!("cannot split {total} draws into {stages} increasing stages")));
    }
    let base = total / denom;
    let mut sizes: Vec<usize> = (1..=stages).map(|k| base * k).collect();
    let used: usize = sizes.iter().sum();
    *sizes.last_mut().expect("stages > 0") += total - used;
    Ok(sizes)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub proposal: StudentTProposal,
    /// Row-major `N_k x p`.
    pub draws: Vec<f64>,
    /// Unnormalized log posterior per draw (`-inf` outside the support).
    pub log_target: Vec<f64>,
    /// Self-normalized stage weights `pi / phi_k`.
    pub weights: Vec<f64>,
}

impl Stage {
    pub fn len(&self) -> usize {
        self.log_target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_target.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSamples {
    pub p: usize,
    pub stages: Vec<Stage>,
    /// Log recycled weights in stage order (`-inf` for draws without mass).
    pub log_recycled: Vec<f64>,
    /// Recycled weights normalized to sum to one.
    pub recycled_weights: Vec<f64>,
    pub seed: u64,
    pub warnings: Vec<String>,
}

impl WeightedSamples {
    pub fn total(&self) -> usize {
        self.stages.iter().map(|s| s.len()).sum()
    }

    /// All draws in stage order, with their stage index.
    pub fn draws(&self) -> impl Iterator<Item = (usize, &[f64])> {
        let p = self.p;
        self.stages
            .iter()
            .enumerate()
            .flat_map(move |(k, s)| s.draws.chunks_exact(p).map(move |d| (k, d)))
    }

    pub fn ess(&self) -> f64 {
        weights_ess(&self.recycled_weights)
    }
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + libm::log(xs.map(|x| libm::exp(x - m)).sum::<f64>())
}

/// Normalizes log weights; `None` when every weight is zero.
fn normalize(log_w: &[f64]) -> Option<Vec<f64>> {
    let lse = log_sum_exp(log_w.iter().copied());
    if lse == f64::NEG_INFINITY || lse.is_nan() {
        return None;
    }
    Some(log_w.iter().map(|l| libm::exp(l - lse)).collect())
}

/// MAMIS with stage sizes `sizes`, starting from `init`. The random stream is
/// `substream(seed, [MAMIS])`.
pub fn mamis_sample<T: LogTarget + ?Sized>(
    target: &mut T,
    init: &StudentTProposal,
    sizes: &[usize],
    seed: u64,
) -> Result<WeightedSamples> {
    let p = target.dim();
    if init.p() != p {
        return Err(Error::Dimension(format!("proposal has dimension {}, target {p}", init.p())));
    }
    if sizes.is_empty() || sizes.contains(&0) || sizes.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Config(format!("stage sizes must be positive and non-decreasing, got {sizes:?}")));
    }
    let mut rng = substream(seed, &[purpose::MAMIS]);
    let mut proposal = init.clone();
    let mut stages: Vec<Stage> = Vec::with_capacity(sizes.len());
    let mut warnings = Vec::new();
    for (k, &nk) in sizes.iter().enumerate() {
        let mut draws = Vec::with_capacity(nk * p);
        let mut log_target = Vec::with_capacity(nk);
        let mut log_w = Vec::with_capacity(nk);
        for _ in 0..nk {
            let theta = proposal.sample(&mut rng);
            let lt = if target.contains(&theta) {
                target.log_density(&theta)?.value()
            } else {
                f64::NEG_INFINITY
            };
            log_w.push(if lt == f64::NEG_INFINITY {
                lt
            } else {
                lt - proposal.log_density(&theta)
            });
            log_target.push(lt);
            draws.extend_from_slice(&theta);
        }
        let weights = normalize(&log_w).unwrap_or_else(|| vec![0.0; nk]);
        let stage = Stage {
            proposal: proposal.clone(),
            draws,
            log_target,
            weights,
        };
        if k + 1 < sizes.len() {
            match updated_proposal(&stage, &log_w, p) {
                Ok(next) => proposal = next,
                Err(e) => warnings.push(format!("stage {}: proposal kept ({e})", k + 1)),
            }
        }
        stages.push(stage);
    }
    // Recycling: every draw is reweighted against the mixture of all stage
    // proposals.
    let total: usize = sizes.iter().sum();
    let log_mix_weights: Vec<f64> = sizes.iter().map(|n| libm::log(*n as f64 / total as f64)).collect();
    let mut log_recycled = Vec::with_capacity(total);
    for stage in &stages {
        for (theta, lt) in stage.draws.chunks_exact(p).zip(&stage.log_target) {
            if *lt == f64::NEG_INFINITY {
                log_recycled.push(f64::NEG_INFINITY);
                continue;
            }
            let terms = stages
                .iter()
                .zip(&log_mix_weights)
                .map(|(s, lw)| lw + s.proposal.log_density(theta));
            log_recycled.push(lt - log_sum_exp(terms));
        }
    }
    let recycled_weights = normalize(&log_recycled).ok_or(Error::ZeroWeights)?;
    Ok(WeightedSamples {
        p,
        stages,
        log_recycled,
        recycled_weights,
        seed,
        warnings,
    })
}

/// Stage weights with the largest `ceil(sqrt(N))` capped at the
/// `ceil(sqrt(N))`-th largest value, then normalized.
///
/// Without the cap a single draw far out in the tails can carry all of the
/// weight, the weighted covariance collapses to zero and later stages never
/// move. Only the proposal update uses these; recycled weights do not.
pub fn clipped_weights(log_w: &[f64]) -> Option<Vec<f64>> {
    let mut finite: Vec<f64> = log_w.iter().copied().filter(|v| *v > f64::NEG_INFINITY).collect();
    if finite.is_empty() {
        return None;
    }
    finite.sort_by(|a, b| b.total_cmp(a));
    let m = (libm::ceil(libm::sqrt(log_w.len() as f64)) as usize).clamp(1, finite.len());
    let cap = finite[m - 1];
    let capped: Vec<f64> = log_w.iter().map(|v| v.min(cap)).collect();
    normalize(&capped)
}

/// Weighted moment update of the proposal from one stage's draws.
///
/// The new centre is the weighted mean under [`clipped_weights`]; the new
/// scale is the weighted second moment about the *previous* centre, i.e. the
/// weighted covariance plus `d d'` for the move `d` of the centre. While the
/// proposal is still travelling towards the posterior mass the scale therefore
/// keeps pace with the step length instead of shrinking onto the leading edge
/// of the draws; once the centre settles the two coincide.
fn updated_proposal(stage: &Stage, log_w: &[f64], p: usize) -> Result<StudentTProposal> {
    let weights = clipped_weights(log_w).ok_or(Error::ZeroWeights)?;
    let mut mu = vec![0.0; p];
    for (theta, w) in stage.draws.chunks_exact(p).zip(&weights) {
        for (m, t) in mu.iter_mut().zip(theta) {
            *m += w * t;
        }
    }
    let center = stage.proposal.mu.clone();
    let mut sigma = DMatrix::zeros(p, p);
    for (theta, w) in stage.draws.chunks_exact(p).zip(&weights) {
        if *w == 0.0 {
            continue;
        }
        for a in 0..p {
            for b in 0..=a {
                let v = w * (theta[a] - center[a]) * (theta[b] - center[b]);
                sigma[(a, b)] += v;
                if a != b {
                    sigma[(b, a)] += v;
                }
            }
        }
    }
    StudentTProposal::new(stage.proposal.df, mu, sigma)
}

/// `sum_i w_i theta_i` with the normalized recycled weights.
pub fn weighted_mean(ws: &WeightedSamples) -> Result<Vec<f64>> {
    let total: f64 = ws.recycled_weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ZeroWeights);
    }
    let mut m = vec![0.0; ws.p];
    for ((_, theta), w) in ws.draws().zip(&ws.recycled_weights) {
        for (mj, t) in m.iter_mut().zip(theta) {
            *mj += w * t;
        }
    }
    m.iter_mut().for_each(|v| *v /= total);
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamRng;
    use rand::SeedableRng;

    /// Standard normal restricted to a box (unnormalized).
    struct BoxGauss {
        lo: f64,
        hi: f64,
    }

    impl LogTarget for BoxGauss {
        fn dim(&self) -> usize {
            1
        }
        fn contains(&self, t: &[f64]) -> bool {
            self.lo <= t[0] && t[0] <= self.hi
        }
        fn log_density(&mut self, t: &[f64]) -> Result<LogDensity> {
            Ok(LogDensity::Finite(-0.5 * t[0] * t[0]))
        }
    }

    #[test]
    fn acceptance_branches() {
        let f = LogDensity::Finite;
        assert_eq!(log_acceptance(false, f(0.0), f(10.0), 0.0, 0.0), f64::NEG_INFINITY);
        assert_eq!(log_acceptance(true, LogDensity::Zero, LogDensity::Zero, 0.0, 0.0), 0.0);
        assert_eq!(log_acceptance(true, f(-3.0), f(-1.0), 0.0, 0.0), 0.0);
        assert_eq!(log_acceptance(true, f(-1.0), f(-3.0), 0.0, 0.0), -2.0);
        assert_eq!(log_acceptance(true, f(-1.0), LogDensity::Zero, 0.0, 0.0), f64::NEG_INFINITY);
        // forward proposal density zero counts as a zero denominator
        assert_eq!(log_acceptance(true, f(-1.0), f(-5.0), f64::NEG_INFINITY, 0.0), 0.0);
        // huge negative values do not underflow
        assert_eq!(log_acceptance(true, f(-1e6), f(-1e6 - 1.0), 0.0, 0.0), -1.0);
    }

    #[test]
    fn chain_means() {
        let chain = Chain {
            p: 2,
            draws: vec![0.0, 0.0, 1.0, 1.0],
            log_post: vec![0.0, 0.0],
            accepted_flags: vec![true, true],
            accepted: 2,
            proposed: 2,
            burnin: 0,
            burnin_accepted: 0,
            sigma2: 1.0,
            c: 1.0,
            seed: 0,
            failure: None,
        };
        assert_eq!(chain_mean(&chain).unwrap(), vec![0.5, 0.5]);
        assert_eq!(chain.prefix_mean(1).unwrap(), vec![0.0, 0.0]);
        assert!(chain.prefix_mean(3).is_err());
    }

    #[test]
    fn chain_stays_in_space_and_is_reproducible() {
        let mut t = BoxGauss { lo: -0.5, hi: 2.0 };
        let prop = RwProposal::fixed(1.0).unwrap();
        let a = mh_sample(&mut t, &prop, &[0.0], 2000, 100, 9).unwrap();
        let b = mh_sample(&mut t, &prop, &[0.0], 2000, 100, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2000);
        assert!(a.draws.iter().all(|x| (-0.5..=2.0).contains(x)));
        assert!(a.accepted <= a.proposed);
        let flags = a.accepted_flags.iter().filter(|f| **f).count();
        assert_eq!(flags, a.accepted);
    }

    #[test]
    fn infeasible_start_is_rejected() {
        let mut t = BoxGauss { lo: -0.5, hi: 2.0 };
        let prop = RwProposal::fixed(1.0).unwrap();
        assert_eq!(mh_sample(&mut t, &prop, &[3.0], 10, 0, 1).unwrap_err(), Error::InfeasibleStart);
    }

    #[test]
    fn burnin_adaptation_moves_towards_target_rate() {
        let mut t = BoxGauss { lo: -50.0, hi: 50.0 };
        // far too small a step: acceptance near one, so C must grow
        let mut prop = RwProposal::fixed(1e-4).unwrap();
        prop.adapt_burnin = true;
        let chain = mh_sample(&mut t, &prop, &[0.0], 10, 500, 2).unwrap();
        assert!((chain.c - libm::pow(1.1, 10.0)).abs() < 1e-12);
        assert!(chain.sigma2 > 1e-4);
    }

    #[test]
    fn n_logr_rule() {
        let p = RwProposal::n_logr(2.0, 120, 80).unwrap();
        assert!((p.sigma2 - 2.0 / (120.0 * libm::log(80.0))).abs() < 1e-18);
        assert!(RwProposal::n_logr(2.0, 120, 1).is_err());
        assert!(RwProposal::fixed(0.0).is_err());
    }

    #[test]
    fn detailed_balance_on_five_states() {
        // Same three-branch rule on a ring of five states with a symmetric
        // neighbour proposal; state 4 has zero mass and state 5 lies outside
        // the space.
        let mass = [0.1, 0.4, 0.2, 0.3];
        let ld = |s: usize| -> (bool, LogDensity) {
            match s {
                0..=3 => (true, LogDensity::Finite(libm::log(mass[s]))),
                _ => (false, LogDensity::Zero),
            }
        };
        let mut rng = StreamRng::seed_from_u64(11);
        let mut counts = [[0u64; 5]; 5];
        let mut s = 0usize;
        let steps = 1_000_000;
        for _ in 0..steps {
            let next = if uniform(&mut rng) < 0.5 { (s + 1) % 5 } else { (s + 4) % 5 };
            let (inside, lp) = ld(next);
            let la = log_acceptance(inside, ld(s).1, lp, 0.0, 0.0);
            let u = uniform(&mut rng);
            let to = if la >= 0.0 || libm::log(u) < la { next } else { s };
            counts[s][to] += 1;
            s = to;
        }
        let total: f64 = mass.iter().sum();
        for i in 0..4 {
            let row: u64 = counts[i].iter().sum();
            for j in 0..4 {
                let pij = counts[i][j] as f64 / row as f64;
                let row_j: u64 = counts[j].iter().sum();
                let pji = counts[j][i] as f64 / row_j as f64;
                let lhs = mass[i] / total * pij;
                let rhs = mass[j] / total * pji;
                assert!((lhs - rhs).abs() < 1e-2, "{i}->{j}: {lhs} vs {rhs}");
            }
        }
        assert_eq!(counts[0][4] + counts[3][4], 0);
    }

    #[test]
    fn valid_count_from_zero_density_start() {
        // zero density left of 0, a walk from -0.05 must first cross over
        struct HalfLine;
        impl LogTarget for HalfLine {
            fn dim(&self) -> usize {
                1
            }
            fn contains(&self, t: &[f64]) -> bool {
                t[0].abs() <= 10.0
            }
            fn log_density(&mut self, t: &[f64]) -> Result<LogDensity> {
                Ok(if t[0] >= 0.0 { LogDensity::Finite(-t[0]) } else { LogDensity::Zero })
            }
        }
        let mut rng = StreamRng::seed_from_u64(1);
        let c = proposals_until_valid(&mut HalfLine, &[-0.05], 0.01, 5, 10_000, &mut rng).unwrap();
        assert!(!c.censored && c.proposals >= 5);
        let mut rng = StreamRng::seed_from_u64(1);
        let c = proposals_until_valid(&mut HalfLine, &[-5.0], 1e-6, 5, 100, &mut rng).unwrap();
        assert_eq!(c, ValidCount { proposals: 100, censored: true });
    }

    #[test]
    fn ess_of_weights() {
        assert_eq!(weights_ess(&[0.25; 4]), 4.0);
        assert!((weights_ess(&[1.0, 1e-9, 1e-9]) - 1.0).abs() < 1e-8);
    }

    #[test]
    fn iid_chain_ess_is_close_to_length() {
        let mut rng = StreamRng::seed_from_u64(5);
        let xs: Vec<f64> = (0..10_000).map(|_| standard_normal(&mut rng)).collect();
        let ess = autocorrelation_ess(&xs);
        assert!((ess - 10_000.0).abs() < 1_000.0, "{ess}");
    }

    #[test]
    fn student_t_density_matches_closed_form() {
        // p = 1, df = 3, standard: 2 / (pi sqrt(3) (1 + x^2/3)^2)
        let t = StudentTProposal::standard(3.0, vec![0.0]).unwrap();
        for x in [-2.0, 0.0, 0.7] {
            let exact = 2.0 / (core::f64::consts::PI * libm::sqrt(3.0) * libm::pow(1.0 + x * x / 3.0, 2.0));
            assert!((t.log_density(&[x]) - libm::log(exact)).abs() < 1e-12);
        }
        assert!(StudentTProposal::standard(2.0, vec![0.0]).is_err());
        let t2 = StudentTProposal::new(3.0, vec![1.0, 2.0], DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0])).unwrap();
        assert_eq!(t2.zeta(), vec![1.0, 2.0, 2.0, 0.5, 1.0]);
    }

    #[test]
    fn singular_scale_is_repaired_or_rejected() {
        let rank_one = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(StudentTProposal::new(3.0, vec![0.0, 0.0], rank_one).is_ok());
        assert!(StudentTProposal::new(3.0, vec![0.0, 0.0], DMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn stage_sizes_sum_and_grow() {
        assert_eq!(stage_sizes(3500, 7).unwrap(), vec![125, 250, 375, 500, 625, 750, 875]);
        let s = stage_sizes(1500, 7).unwrap();
        assert_eq!(s.iter().sum::<usize>(), 1500);
        assert!(s.windows(2).all(|w| w[0] <= w[1]));
        assert!(stage_sizes(3, 3).is_err());
    }

    #[test]
    fn single_stage_recycling_equals_stage_weights() {
        let mut t = BoxGauss { lo: -1.0, hi: 1.5 };
        let init = StudentTProposal::standard(3.0, vec![0.0]).unwrap();
        let ws = mamis_sample(&mut t, &init, &[400], 3).unwrap();
        for (a, b) in ws.recycled_weights.iter().zip(&ws.stages[0].weights) {
            assert!((a - b).abs() < 1e-12);
        }
        // draws outside the box carry no weight
        for ((_, th), w) in ws.draws().zip(&ws.recycled_weights) {
            if !(-1.0..=1.5).contains(&th[0]) {
                assert_eq!(*w, 0.0);
            }
        }
    }

    #[test]
    fn proposal_equal_to_target_gives_equal_weights() {
        struct T3;
        impl LogTarget for T3 {
            fn dim(&self) -> usize {
                1
            }
            fn contains(&self, _: &[f64]) -> bool {
                true
            }
            fn log_density(&mut self, x: &[f64]) -> Result<LogDensity> {
                Ok(LogDensity::Finite(StudentTProposal::standard(3.0, vec![0.0]).unwrap().log_density(x)))
            }
        }
        let init = StudentTProposal::standard(3.0, vec![0.0]).unwrap();
        let ws = mamis_sample(&mut T3, &init, &[200], 4).unwrap();
        for w in &ws.recycled_weights {
            assert!((w - 1.0 / 200.0).abs() < 1e-12);
        }
        let plain: f64 = ws.draws().map(|(_, d)| d[0]).sum::<f64>() / 200.0;
        assert!((weighted_mean(&ws).unwrap()[0] - plain).abs() < 1e-12);
    }

    #[test]
    fn clipping_caps_the_largest_weights() {
        // 9 draws: cap at the 3rd largest
        let log_w = [0.0, -1.0, -2.0, -3.0, -4.0, -5.0, -6.0, f64::NEG_INFINITY, 5.0];
        let w = clipped_weights(&log_w).unwrap();
        assert_eq!(w[0], w[8]);
        assert_eq!(w[0], w[1]);
        assert!(w[2] < w[1]);
        assert_eq!(w[7], 0.0);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(clipped_weights(&[f64::NEG_INFINITY; 3]).is_none());
    }

    #[test]
    fn weighted_mean_of_simple_weights() {
        let stage = Stage {
            proposal: StudentTProposal::standard(3.0, vec![0.0, 0.0]).unwrap(),
            draws: vec![0.0, 0.0, 1.0, 2.0],
            log_target: vec![0.0, 0.0],
            weights: vec![0.5, 0.5],
        };
        let mut ws = WeightedSamples {
            p: 2,
            stages: vec![stage],
            log_recycled: vec![0.0, 0.0],
            recycled_weights: vec![0.5, 0.5],
            seed: 0,
            warnings: Vec::new(),
        };
        assert_eq!(weighted_mean(&ws).unwrap(), vec![0.5, 1.0]);
        ws.recycled_weights = vec![0.0, 1.0];
        assert_eq!(weighted_mean(&ws).unwrap(), vec![1.0, 2.0]);
        ws.recycled_weights = vec![0.0, 0.0];
        assert_eq!(weighted_mean(&ws).unwrap_err(), Error::ZeroWeights);
    }
}
