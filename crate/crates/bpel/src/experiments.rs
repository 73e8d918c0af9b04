//! The simulation studies and single-dataset runs.
//!
//! Replication `l` simulates its data with seed `stream_id([seed, l])`; the
//! samplers started from grid point `s` use `stream_id([seed, l, s + 1])`.
//! Both seeds are written next to every per-start result so any row can be
//! replayed on its own. Work is spread over the current rayon pool, and results
//! are collected in (replication, start, method) order whatever the number of
//! threads.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use bpel_core::baselines::{grid_mode, grid_point, minimize_profile, standard_el_estimate};
use bpel_core::estimator::{estimate_report, tune_nu, BicPoint, TuneResult};
use bpel_core::model::{iv_moment_model, simulate_iv, IvModel};
use bpel_core::rng::{purpose, stream_id, substream};
use bpel_core::samplers::{proposals_until_valid, stage_sizes};
use bpel_core::{
    chain_mean, mamis_sample, mh_sample, weighted_mean, Chain, Dataset, EstimatorReport, IvSimConfig, MomentModel,
    Posterior, PosteriorSpec, StudentTProposal, WeightedSamples,
};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Config, Kind, Method, Sampler};
use crate::error::{Error, Result};
use crate::io::{self, fmt_f64, Layout};

/// One line of a metrics file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub method: String,
    pub n: usize,
    pub r: usize,
    pub nu: f64,
    pub link: String,
    /// MSE, or the mean proposal count in the efficiency study.
    pub value: f64,
    pub replications: usize,
    pub wall_time_s: f64,
    pub seed: u64,
}

/// One method run from one starting point.
#[derive(Debug, Clone, PartialEq)]
pub struct StartResult {
    pub replication: usize,
    pub start: usize,
    pub method: String,
    pub data_seed: u64,
    pub seed: u64,
    pub nu: f64,
    pub theta_start: Vec<f64>,
    /// NaN when the method failed.
    pub estimate: Vec<f64>,
    /// The grid mode (MSE1) or the true parameter (MSE2).
    pub reference: Vec<f64>,
    pub sq_error: f64,
    pub wall_time_s: f64,
    pub status: String,
}

/// One efficiency run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyRun {
    pub r: usize,
    pub replication: usize,
    pub method: String,
    pub proposals: usize,
    pub censored: bool,
    /// Seeds both the data and the walk.
    pub data_seed: u64,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Write zero wall times so that repeated runs give identical files.
    pub reproducible: bool,
}

pub fn replication_seed(master: u64, replication: usize) -> u64 {
    stream_id(&[master, replication as u64])
}

pub fn start_seed(master: u64, replication: usize, start: usize) -> u64 {
    stream_id(&[master, replication as u64, start as u64 + 1])
}

/// Indices into the starting grid used by replication `l`.
pub fn start_indices(cfg: &Config, replication: usize) -> Vec<usize> {
    let total = cfg.starts.points.pow(cfg.starts.lo.len() as u32);
    match cfg.starts.per_replication {
        None => (0..total).collect(),
        Some(m) => (0..m).map(|j| (replication * m + j) % total).collect(),
    }
}

pub fn start_point(cfg: &Config, index: usize) -> Vec<f64> {
    if cfg.starts.points == 1 {
        return cfg.starts.lo.iter().zip(&cfg.starts.hi).map(|(l, h)| 0.5 * (l + h)).collect();
    }
    grid_point(&cfg.starts.lo, &cfg.starts.hi, cfg.starts.points, index)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn posterior_spec(cfg: &Config, model: Arc<dyn MomentModel>, data: Arc<Dataset>, nu: f64) -> Result<PosteriorSpec> {
    let penalty = cfg.penalty()?.with_nu(nu)?;
    Ok(PosteriorSpec::new(
        model,
        data,
        Some(penalty),
        cfg.prior.clone(),
        cfg.space()?,
        cfg.solver.clone(),
    )?)
}

/// Output of one sampler run.
#[derive(Debug, Clone)]
pub enum Draws {
    Chain(Chain),
    Weighted(WeightedSamples),
}

impl Draws {
    pub fn ess(&self) -> f64 {
        match self {
            Draws::Chain(c) => c.ess(),
            Draws::Weighted(w) => w.ess(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        match self {
            Draws::Chain(c) => io::write_chain(path, c),
            Draws::Weighted(w) => io::write_weighted(path, w),
        }
    }
}

pub fn initial_proposal(cfg: &Config, start: &[f64]) -> Result<StudentTProposal> {
    let p = start.len();
    let sigma = DMatrix::identity(p, p) * cfg.mamis.init_scale;
    Ok(StudentTProposal::new(cfg.mamis.df, start.to_vec(), sigma)?)
}

pub fn run_mh(cfg: &Config, post: &mut Posterior, start: &[f64], draws: usize, seed: u64) -> Result<Chain> {
    let spec = post.spec().clone();
    let prop = cfg.mh.proposal(spec.n(), spec.r())?;
    Ok(mh_sample(post, &prop, start, draws, cfg.mh.burnin, seed)?)
}

pub fn run_mamis(cfg: &Config, post: &mut Posterior, start: &[f64], draws: usize, seed: u64) -> Result<WeightedSamples> {
    let init = initial_proposal(cfg, start)?;
    let sizes = stage_sizes(draws, cfg.mamis.stages)?;
    let ws = mamis_sample(post, &init, &sizes, seed)?;
    for w in &ws.warnings {
        log::warn!("mamis: {w}");
    }
    Ok(ws)
}

/// Samples the posterior and returns its mean. A chain cut short by a failed
/// evaluation is an error.
pub fn sample_mean(
    cfg: &Config,
    post: &mut Posterior,
    sampler: Sampler,
    start: &[f64],
    draws: usize,
    seed: u64,
) -> Result<(Vec<f64>, Draws)> {
    match sampler {
        Sampler::Mh => {
            let mut chain = run_mh(cfg, post, start, draws, seed)?;
            if let Some(e) = chain.failure.take() {
                return Err(e.into());
            }
            Ok((chain_mean(&chain)?, Draws::Chain(chain)))
        }
        Sampler::Mamis => {
            let ws = run_mamis(cfg, post, start, draws, seed)?;
            Ok((weighted_mean(&ws)?, Draws::Weighted(ws)))
        }
    }
}

/// BIC selection of nu; each grid point is estimated by a posterior mean.
pub fn tune(cfg: &Config, spec: &PosteriorSpec, start: &[f64], seed: u64) -> Result<TuneResult> {
    let base = cfg.penalty()?;
    let mut k = 0u64;
    let result = tune_nu(spec, &base, cfg.tune.grid_size, |s| {
        k += 1;
        let mut post = Posterior::new(Arc::new(s.clone()));
        let seed = stream_id(&[seed, purpose::TUNE, k]);
        sample_mean(cfg, &mut post, cfg.tune.sampler, start, cfg.tune.draws, seed)
            .map(|(m, _)| m)
            .map_err(|e| match e {
                Error::Core(c) => c,
                other => bpel_core::Error::Config(other.to_string()),
            })
    })?;
    for (nu, e) in &result.skipped {
        log::warn!("tune: nu = {nu} skipped: {e}");
    }
    Ok(result)
}

fn iv_setup(dgp: &IvSimConfig) -> Result<(Arc<dyn MomentModel>, Arc<Dataset>)> {
    let data = Arc::new(simulate_iv(dgp)?);
    let model: Arc<dyn MomentModel> = Arc::new(iv_moment_model(dgp));
    Ok((model, data))
}

fn failed_cell(template: &StartResult, method: String, error: &Error) -> StartResult {
    let p = template.theta_start.len();
    StartResult {
        method,
        estimate: vec![f64::NAN; p],
        sq_error: f64::NAN,
        status: format!("failed: {error}"),
        ..template.clone()
    }
}

fn cell(template: &StartResult, method: String, estimate: Vec<f64>, secs: f64) -> StartResult {
    StartResult {
        method,
        sq_error: sq_dist(&estimate, &template.reference),
        estimate,
        wall_time_s: secs,
        status: String::from("ok"),
        ..template.clone()
    }
}

/// Runs every configured method from one start.
fn run_start(cfg: &Config, spec: &Arc<PosteriorSpec>, methods: &[Method], template: &StartResult) -> Vec<StartResult> {
    let mut out = Vec::new();
    let start = &template.theta_start;
    let seed = template.seed;
    for method in methods {
        match method {
            Method::Mh => {
                let mut sizes = cfg.mh.sizes.clone();
                sizes.sort_unstable();
                let longest = *sizes.last().expect("validated non-empty");
                let t = Instant::now();
                let chain = run_mh(cfg, &mut Posterior::new(spec.clone()), start, longest, seed);
                let secs = t.elapsed().as_secs_f64();
                for size in sizes {
                    let name = format!("mh-{size}");
                    let res = chain.as_ref().map_err(|e| e.to_string()).and_then(|c| {
                        if c.len() < size {
                            let why = c.failure.as_ref().map_or_else(String::new, |e| e.to_string());
                            return Err(format!("chain stopped after {} draws: {why}", c.len()));
                        }
                        c.prefix_mean(size).map_err(|e| e.to_string())
                    });
                    out.push(match res {
                        Ok(m) => cell(template, name, m, secs),
                        Err(e) => failed_cell(template, name, &Error::Config(e)),
                    });
                }
            }
            Method::Mamis => {
                let mut sizes = cfg.mamis.sizes.clone();
                sizes.sort_unstable();
                for size in sizes {
                    let name = format!("mamis-{size}");
                    let t = Instant::now();
                    let res = run_mamis(cfg, &mut Posterior::new(spec.clone()), start, size, seed)
                        .and_then(|ws| Ok(weighted_mean(&ws)?));
                    let secs = t.elapsed().as_secs_f64();
                    out.push(match res {
                        Ok(m) => cell(template, name, m, secs),
                        Err(e) => failed_cell(template, name, &e),
                    });
                }
            }
            Method::Simplex => {
                let name = String::from("simplex");
                let t = Instant::now();
                let res = minimize_profile(&mut Posterior::new(spec.clone()), start, &cfg.baseline);
                out.push(match res {
                    Ok(r) => cell(template, name, r.theta, t.elapsed().as_secs_f64()),
                    Err(e) => failed_cell(template, name, &e.into()),
                });
            }
            Method::StandardEl => {
                let name = String::from("standard-el");
                let t = Instant::now();
                let res = standard_el_estimate(
                    spec.model.clone(),
                    spec.data.clone(),
                    spec.space.clone(),
                    spec.solver_opts.clone(),
                    start,
                    &cfg.baseline,
                );
                out.push(match res {
                    Ok(r) => cell(template, name, r.theta, t.elapsed().as_secs_f64()),
                    Err(e) => failed_cell(template, name, &e.into()),
                });
            }
        }
    }
    out
}

fn run_replication(cfg: &Config, kind: Kind, replication: usize) -> Result<Vec<StartResult>> {
    let data_seed = replication_seed(cfg.seed, replication);
    let dgp = IvSimConfig {
        seed: data_seed,
        ..cfg.dgp.clone()
    };
    let (model, data) = iv_setup(&dgp).map_err(|e| e.context(format!("replication {replication}")))?;
    let mut spec = Arc::new(posterior_spec(cfg, model, data, cfg.penalty.nu)?);
    if kind == Kind::Mse2 && cfg.tune.enabled {
        let start = cfg.estimate.start.clone().unwrap_or_else(|| spec.space.center());
        let tuned = tune(cfg, &spec, &start, data_seed)?;
        spec = Arc::new(posterior_spec(cfg, spec.model.clone(), spec.data.clone(), tuned.nu)?);
    }
    let nu = spec.penalty.as_ref().map_or(0.0, |p| p.nu());
    let mut results = Vec::new();
    let reference = match kind {
        Kind::Mse1 => {
            let mode = grid_mode(&mut Posterior::new(spec.clone()), &cfg.grid.lo, &cfg.grid.hi, cfg.grid.points)
                .map_err(|e| Error::from(e).context(format!("grid mode, replication {replication}")))?;
            mode.theta
        }
        _ => dgp.theta0.to_vec(),
    };
    if kind == Kind::Mse1 {
        results.push(StartResult {
            replication,
            start: 0,
            method: String::from("grid-mode"),
            data_seed,
            seed: data_seed,
            nu,
            theta_start: reference.clone(),
            estimate: reference.clone(),
            reference: reference.clone(),
            sq_error: 0.0,
            wall_time_s: 0.0,
            status: String::from("ok"),
        });
    }
    let methods = cfg.methods(kind);
    let per_start: Vec<Vec<StartResult>> = start_indices(cfg, replication)
        .into_par_iter()
        .map(|s| {
            let template = StartResult {
                replication,
                start: s,
                method: String::new(),
                data_seed,
                seed: start_seed(cfg.seed, replication, s),
                nu,
                theta_start: start_point(cfg, s),
                estimate: Vec::new(),
                reference: reference.clone(),
                sq_error: f64::NAN,
                wall_time_s: 0.0,
                status: String::new(),
            };
            run_start(cfg, &spec, &methods, &template)
        })
        .collect();
    results.extend(per_start.into_iter().flatten());
    Ok(results)
}

/// Averages the per-start squared errors by method, in first-seen order.
/// Failed cells are left out and counted in the log.
pub fn summarize(cfg: &Config, results: &[StartResult]) -> Vec<MetricRow> {
    let mut names: Vec<&str> = Vec::new();
    for r in results {
        if !names.contains(&r.method.as_str()) {
            names.push(&r.method);
        }
    }
    names
        .into_iter()
        .map(|name| {
            let cells: Vec<&StartResult> = results.iter().filter(|r| r.method == name).collect();
            let ok: Vec<f64> = cells.iter().map(|r| r.sq_error).filter(|v| v.is_finite()).collect();
            if ok.len() < cells.len() {
                log::warn!("{name}: {} of {} runs failed", cells.len() - ok.len(), cells.len());
            }
            let value = if ok.is_empty() {
                f64::NAN
            } else {
                ok.iter().sum::<f64>() / ok.len() as f64
            };
            let nus: Vec<f64> = cells.iter().map(|r| r.nu).collect();
            let nu = if nus.iter().all(|v| *v == nus[0]) {
                nus[0]
            } else {
                nus.iter().sum::<f64>() / nus.len() as f64
            };
            MetricRow {
                method: name.to_string(),
                n: cfg.dgp.n,
                r: cfg.dgp.r,
                nu,
                link: cfg.dgp.link.as_str().to_string(),
                value,
                replications: cfg.replications,
                wall_time_s: cells.iter().map(|r| r.wall_time_s).sum(),
                seed: cfg.seed,
            }
        })
        .collect()
}

/// Runs an MSE1 or MSE2 study.
pub fn run_mse(cfg: &Config, kind: Kind) -> Result<(Vec<MetricRow>, Vec<StartResult>)> {
    if !matches!(kind, Kind::Mse1 | Kind::Mse2) {
        return Err(Error::Config(format!("{} is not an MSE study", kind.as_str())));
    }
    let per_rep: Vec<Vec<StartResult>> = (0..cfg.replications)
        .into_par_iter()
        .map(|l| run_replication(cfg, kind, l))
        .collect::<Result<_>>()?;
    let results: Vec<StartResult> = per_rep.into_iter().flatten().collect();
    Ok((summarize(cfg, &results), results))
}

pub fn run_mse1(cfg: &Config) -> Result<(Vec<MetricRow>, Vec<StartResult>)> {
    run_mse(cfg, Kind::Mse1)
}

pub fn run_mse2(cfg: &Config) -> Result<(Vec<MetricRow>, Vec<StartResult>)> {
    run_mse(cfg, Kind::Mse2)
}

/// Proposals needed for `needed` valid draws, for the penalized (`pel`) and
/// the plain (`el`) posterior, at every `r` of the sweep.
pub fn run_efficiency(cfg: &Config) -> Result<(Vec<MetricRow>, Vec<EfficiencyRun>)> {
    let eff = &cfg.efficiency;
    let jobs: Vec<(usize, usize)> = eff
        .r_values
        .iter()
        .flat_map(|&r| (0..cfg.replications).map(move |l| (r, l)))
        .collect();
    let runs: Vec<Vec<(EfficiencyRun, f64)>> = jobs
        .into_par_iter()
        .map(|(r, l)| -> Result<Vec<(EfficiencyRun, f64)>> {
            let data_seed = stream_id(&[cfg.seed, r as u64, l as u64]);
            let dgp = IvSimConfig {
                r,
                seed: data_seed,
                ..cfg.dgp.clone()
            };
            let (model, data) = iv_setup(&dgp)?;
            let pel = posterior_spec(cfg, model, data, eff.nu)?;
            let el = pel.with_penalty(None);
            let mut out = Vec::new();
            for (arm, spec) in [(0u64, pel), (1, el)] {
                let mut post = Posterior::new(Arc::new(spec));
                let mut rng = substream(data_seed, &[purpose::EFFICIENCY, arm]);
                let t = Instant::now();
                let count = proposals_until_valid(&mut post, &eff.theta0, eff.sigma2, eff.needed, eff.cap, &mut rng)?;
                out.push((
                    EfficiencyRun {
                        r,
                        replication: l,
                        method: String::from(if arm == 0 { "pel" } else { "el" }),
                        proposals: count.proposals,
                        censored: count.censored,
                        data_seed,
                    },
                    t.elapsed().as_secs_f64(),
                ));
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let runs: Vec<(EfficiencyRun, f64)> = runs.into_iter().flatten().collect();
    let mut rows = Vec::new();
    for &r in &eff.r_values {
        for method in ["pel", "el"] {
            let cells: Vec<&(EfficiencyRun, f64)> =
                runs.iter().filter(|(run, _)| run.r == r && run.method == method).collect();
            let censored = cells.iter().filter(|(run, _)| run.censored).count();
            if censored > 0 {
                log::warn!("efficiency r = {r}, {method}: {censored} runs hit the cap of {}", eff.cap);
            }
            rows.push(MetricRow {
                method: method.to_string(),
                n: cfg.dgp.n,
                r,
                nu: if method == "pel" { eff.nu } else { 0.0 },
                link: cfg.dgp.link.as_str().to_string(),
                value: cells.iter().map(|(run, _)| run.proposals as f64).sum::<f64>() / cells.len() as f64,
                replications: cfg.replications,
                wall_time_s: cells.iter().map(|(_, t)| t).sum(),
                seed: cfg.seed,
            });
        }
    }
    Ok((rows, runs.into_iter().map(|(run, _)| run).collect()))
}

/// Result file of a single estimation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub sampler: Sampler,
    pub seed: u64,
    pub n: usize,
    pub r: usize,
    pub nu: f64,
    pub posterior_mean: Vec<f64>,
    pub ess: f64,
    /// Moment indices with a non-zero multiplier, counted from 1.
    pub support: Vec<usize>,
    pub lambda_support: Vec<f64>,
    pub psi: Vec<f64>,
    pub theta_corrected: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub ci_level: f64,
    pub ci_lower: Vec<f64>,
    pub ci_upper: Vec<f64>,
    pub h_hat: Vec<Vec<f64>>,
    pub v_hat: Vec<Vec<f64>>,
    pub gamma_hat: Vec<Vec<f64>>,
    pub bic_trace: Vec<BicRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BicRow {
    pub nu: f64,
    pub bic: f64,
    pub support_size: usize,
    pub theta: Vec<f64>,
}

impl From<&BicPoint> for BicRow {
    fn from(p: &BicPoint) -> Self {
        Self {
            nu: p.nu,
            bic: p.bic,
            support_size: p.support_size,
            theta: p.theta.clone(),
        }
    }
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Normal quantile for a two-sided interval at `level`.
pub fn normal_quantile(level: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    Normal::standard().inverse_cdf(0.5 + 0.5 * level)
}

/// Data for the single-dataset commands: the CSV in `[estimate] data`, or the
/// `[dgp]` design simulated with the run seed.
pub fn load_or_simulate(cfg: &Config) -> Result<(Arc<dyn MomentModel>, Arc<Dataset>)> {
    match &cfg.estimate.data {
        Some(path) => dataset_model(cfg, path),
        None => iv_setup(&IvSimConfig {
            seed: cfg.seed,
            ..cfg.dgp.clone()
        }),
    }
}

fn dataset_model(cfg: &Config, path: &PathBuf) -> Result<(Arc<dyn MomentModel>, Arc<Dataset>)> {
    let (data, layout) = io::read_dataset(path)?;
    match layout {
        Layout::Iv { r } => Ok((Arc::new(IvModel::new(r, cfg.dgp.link)), Arc::new(data))),
        Layout::Generic => Err(Error::Format {
            path: path.clone(),
            message: String::from("estimation needs the instrumental-variable layout `y,u1,u2,z1..zr`"),
        }),
    }
}

pub struct EstimateOutput {
    pub report: ReportFile,
    pub core: EstimatorReport,
    pub draws: Draws,
}

/// Optional BIC tuning, then sampling, then the bias-corrected report.
pub fn run_estimate(cfg: &Config) -> Result<EstimateOutput> {
    let (model, data) = load_or_simulate(cfg)?;
    let mut spec = posterior_spec(cfg, model, data, cfg.penalty.nu)?;
    let start = cfg.estimate.start.clone().unwrap_or_else(|| spec.space.center());
    let mut trace = Vec::new();
    if cfg.tune.enabled {
        let tuned = tune(cfg, &spec, &start, cfg.seed)?;
        spec = posterior_spec(cfg, spec.model.clone(), spec.data.clone(), tuned.nu)?;
        trace = tuned.trace;
    }
    let spec = Arc::new(spec);
    let mut post = Posterior::new(spec.clone());
    let (mean, draws) = sample_mean(cfg, &mut post, cfg.estimate.sampler, &start, cfg.estimate.draws, cfg.seed)?;
    let level = cfg.estimate.ci_level;
    let mut core = estimate_report(&spec, &mean, level, normal_quantile(level))?;
    core.bic_trace = trace;
    let nu = spec.penalty.as_ref().map_or(0.0, |p| p.nu());
    let report = ReportFile {
        sampler: cfg.estimate.sampler,
        seed: cfg.seed,
        n: spec.n(),
        r: spec.r(),
        nu,
        posterior_mean: mean,
        ess: draws.ess(),
        support: core.support.iter().map(|j| j + 1).collect(),
        lambda_support: core.support.iter().map(|j| core.lambda[*j]).collect(),
        psi: core.psi_hat.clone(),
        theta_corrected: core.theta_corrected.clone(),
        std_errors: core.std_errors.clone(),
        ci_level: level,
        ci_lower: core.ci.iter().map(|c| c.0).collect(),
        ci_upper: core.ci.iter().map(|c| c.1).collect(),
        h_hat: rows_of(&core.h_hat),
        v_hat: rows_of(&core.v_hat),
        gamma_hat: rows_of(&core.gamma_hat),
        bic_trace: core.bic_trace.iter().map(BicRow::from).collect(),
    };
    Ok(EstimateOutput { report, core, draws })
}

/// `parameter,posterior_mean,psi,corrected,std_error,ci_lower,ci_upper`.
pub fn write_report_csv(path: &Path, report: &ReportFile) -> Result<()> {
    let header: Vec<String> = ["parameter", "posterior_mean", "psi", "corrected", "std_error", "ci_lower", "ci_upper"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let records: Vec<Vec<String>> = (0..report.posterior_mean.len())
        .map(|k| {
            vec![
                format!("theta_{}", k + 1),
                fmt_f64(&report.posterior_mean[k]),
                fmt_f64(&report.psi[k]),
                fmt_f64(&report.theta_corrected[k]),
                fmt_f64(&report.std_errors[k]),
                fmt_f64(&report.ci_lower[k]),
                fmt_f64(&report.ci_upper[k]),
            ]
        })
        .collect();
    io::write_table(path, &header, &records)
}

pub fn write_tune_csv(path: &Path, result: &TuneResult) -> Result<()> {
    let p = result.trace.first().map_or(0, |t| t.theta.len());
    let mut header: Vec<String> = ["nu", "bic", "support_size", "selected"].iter().map(|s| s.to_string()).collect();
    header.extend((1..=p).map(|k| format!("theta_{k}")));
    let records: Vec<Vec<String>> = result
        .trace
        .iter()
        .map(|pt| {
            let mut rec = vec![
                fmt_f64(&pt.nu),
                fmt_f64(&pt.bic),
                pt.support_size.to_string(),
                u8::from(pt.nu == result.nu).to_string(),
            ];
            rec.extend(pt.theta.iter().map(fmt_f64));
            rec
        })
        .collect();
    io::write_table(path, &header, &records)
}

/// `replication,start,method,data_seed,seed,nu,start_*,estimate_*,reference_*,sq_error,wall_time_s,status`.
pub fn write_starts_csv(path: &Path, results: &[StartResult], opts: RunOptions) -> Result<()> {
    let p = results.first().map_or(0, |r| r.theta_start.len());
    let mut header: Vec<String> = ["replication", "start", "method", "data_seed", "seed", "nu"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for prefix in ["start", "estimate", "reference"] {
        header.extend((1..=p).map(|k| format!("{prefix}_{k}")));
    }
    header.extend(["sq_error", "wall_time_s", "status"].iter().map(|s| s.to_string()));
    let records: Vec<Vec<String>> = results
        .iter()
        .map(|r| {
            let mut rec = vec![
                r.replication.to_string(),
                r.start.to_string(),
                r.method.clone(),
                r.data_seed.to_string(),
                r.seed.to_string(),
                fmt_f64(&r.nu),
            ];
            for v in [&r.theta_start, &r.estimate, &r.reference] {
                rec.extend(v.iter().map(fmt_f64));
            }
            rec.push(fmt_f64(&r.sq_error));
            rec.push(fmt_f64(&if opts.reproducible { 0.0 } else { r.wall_time_s }));
            rec.push(r.status.clone());
            rec
        })
        .collect();
    io::write_table(path, &header, &records)
}

fn metrics_for_output(rows: &[MetricRow], opts: RunOptions) -> Vec<MetricRow> {
    rows.iter()
        .map(|r| MetricRow {
            wall_time_s: if opts.reproducible { 0.0 } else { r.wall_time_s },
            ..r.clone()
        })
        .collect()
}

/// Runs the study named by `cfg.kind` and writes its files into `out_dir`.
/// Returns the paths written.
pub fn run_experiment(cfg: &Config, out_dir: &Path, opts: RunOptions) -> Result<Vec<PathBuf>> {
    let kind = cfg
        .kind
        .ok_or_else(|| Error::Config(String::from("`kind` is required to run an experiment")))?;
    let mut written = Vec::new();
    match kind {
        Kind::Efficiency => {
            let (rows, runs) = run_efficiency(cfg)?;
            let path = out_dir.join("efficiency.csv");
            io::write_rows(&path, &metrics_for_output(&rows, opts))?;
            written.push(path);
            let path = out_dir.join("efficiency_runs.csv");
            io::write_rows(&path, &runs)?;
            written.push(path);
        }
        Kind::Mse1 | Kind::Mse2 => {
            let (rows, results) = run_mse(cfg, kind)?;
            let path = out_dir.join(format!("{}.csv", kind.as_str()));
            io::write_rows(&path, &metrics_for_output(&rows, opts))?;
            written.push(path);
            let path = out_dir.join(format!("{}_starts.csv", kind.as_str()));
            write_starts_csv(&path, &results, opts)?;
            written.push(path);
        }
        Kind::Estimate => {
            let out = run_estimate(cfg)?;
            let path = out_dir.join("report.json");
            io::write_json(&path, &out.report)?;
            written.push(path);
            let path = out_dir.join("report.csv");
            write_report_csv(&path, &out.report)?;
            written.push(path);
            let path = out_dir.join("samples.csv");
            out.draws.write(&path)?;
            written.push(path);
        }
        Kind::Tune => {
            let (model, data) = load_or_simulate(cfg)?;
            let spec = posterior_spec(cfg, model, data, cfg.penalty.nu)?;
            let start = cfg.estimate.start.clone().unwrap_or_else(|| spec.space.center());
            let result = tune(cfg, &spec, &start, cfg.seed)?;
            let path = out_dir.join("tune.csv");
            write_tune_csv(&path, &result)?;
            written.push(path);
        }
    }
    Ok(written)
}
