//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit when any
//! criterion fails. Run with `cargo test -p bpel --test acceptance`; pass
//! criterion numbers as arguments to run a subset (e.g. `-- 1 7 9`).

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use bpel::config::{Config, Method};
use bpel::experiments::{run_efficiency, run_mse1, run_mse2};
use bpel_core::estimator::{bias_correct, sandwich};
use bpel_core::model::{simulate_iv, Link};
use bpel_core::samplers::{autocorrelation_ess, stage_sizes};
use bpel_core::solver::{kkt_residual, solve_lambda};
use bpel_core::{
    mamis_sample, mh_sample, tune_nu, weighted_mean, Dataset, IvModel, IvSimConfig, MomentModel, PenaltySpec,
    PosteriorSpec, PriorSpec, RwProposal, SolveStatus, SolverOptions, StudentTProposal,
};
use common::{grid_maximize, mean_sd, random_moments, rng, TruncatedGaussian};
use nalgebra::DMatrix;
use rand::Rng;

type Outcome = Result<String, String>;

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

const SEED: u64 = 20240601;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn kkt_suite() -> Outcome {
    let nus = [0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07, 0.08, 0.09, 0.1];
    let opts = SolverOptions::default();
    let mut src = rng(SEED);
    let (mut worst, mut zeros, mut iff_violations, mut unconverged) = (0.0f64, 0, 0, 0);
    for case in 0..200 {
        let n = src.random_range(5..=50);
        let r = src.random_range(1..=10);
        let nu = nus[case % nus.len()];
        let g = random_moments(&mut src, n, r);
        let pen = PenaltySpec::l1(nu).map_err(|e| e.to_string())?;
        let sol = solve_lambda(&g, &pen, &opts).map_err(|e| format!("instance {case}: {e}"))?;
        unconverged += usize::from(sol.status != SolveStatus::Converged);
        worst = worst.max(kkt_residual(&g, &pen, &sol).map_err(|e| e.to_string())?);
        let sup = (0..r).map(|j| (g.column(j).sum() / n as f64).abs()).fold(0.0, f64::max);
        iff_violations += usize::from(sol.is_zero() != (sup <= nu));
        zeros += usize::from(sol.is_zero());
    }
    check(
        worst <= 1e-6 && unconverged == 0 && iff_violations == 0,
        format!(
            "200 instances, max KKT residual {worst:.2e}, {unconverged} unconverged, {zeros} zero solutions, {iff_violations} zero-iff violations"
        ),
    )
}

fn grid_oracle() -> Outcome {
    let opts = SolverOptions::default();
    let mut src = rng(SEED + 2);
    let (mut dobj, mut dlam) = (0.0f64, 0.0f64);
    for case in 0..50 {
        let r = 1 + case % 2;
        let n = src.random_range(5..=50);
        let nu = [0.01, 0.03, 0.05, 0.1][case / 2 % 4];
        let g = random_moments(&mut src, n, r);
        let sol = solve_lambda(&g, &PenaltySpec::l1(nu).unwrap(), &opts).map_err(|e| e.to_string())?;
        let (lam, f) = grid_maximize(&g, nu);
        dobj = dobj.max((sol.objective - f).abs());
        dlam = dlam.max(sol.lambda.iter().zip(&lam).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    check(
        dobj <= 1e-4 && dlam <= 1e-4,
        format!("50 instances, max |objective gap| {dobj:.2e}, max |lambda gap| {dlam:.2e} (tolerance 1e-4)"),
    )
}

fn sampler_oracle() -> Outcome {
    let mut target = TruncatedGaussian::standard_example();
    let truth = target.mean_by_quadrature(2000);
    let chain = mh_sample(&mut target, &RwProposal::fixed(0.25).unwrap(), &[0.5, 0.0], 200_000, 500, SEED)
        .map_err(|e| e.to_string())?;
    let mh_mean = chain.prefix_mean(chain.len()).map_err(|e| e.to_string())?;
    let mut z_mh = 0.0f64;
    for k in 0..2 {
        let xs: Vec<f64> = (0..chain.len()).map(|i| chain.draw(i)[k]).collect();
        let mcse = mean_sd(&xs).1 / autocorrelation_ess(&xs).sqrt();
        z_mh = z_mh.max((mh_mean[k] - truth[k]).abs() / mcse);
    }
    let init = StudentTProposal::standard(3.0, vec![0.0, 0.0]).unwrap();
    let ws = mamis_sample(&mut target, &init, &stage_sizes(50_000, 7).unwrap(), SEED).map_err(|e| e.to_string())?;
    let is_mean = weighted_mean(&ws).map_err(|e| e.to_string())?;
    let draws: Vec<&[f64]> = ws.draws().map(|(_, d)| d).collect();
    let mut z_is = 0.0f64;
    for k in 0..2 {
        // delta-method standard error of the self-normalized mean
        let var: f64 = draws
            .iter()
            .zip(&ws.recycled_weights)
            .map(|(d, w)| w * w * (d[k] - is_mean[k]).powi(2))
            .sum();
        z_is = z_is.max((is_mean[k] - truth[k]).abs() / var.sqrt());
    }
    check(
        z_mh <= 3.0 && z_is <= 3.0,
        format!(
            "truth ({:.5}, {:.5}); M-H (K = 2e5) max |error|/MCSE {z_mh:.2}; MAMIS (S = 5e4, ESS {:.0}) max |error|/SE {z_is:.2}",
            truth[0],
            truth[1],
            ws.ess()
        ),
    )
}

fn desk_config() -> Config {
    let mut cfg = Config {
        seed: SEED,
        replications: 20,
        ..Config::default()
    };
    cfg.dgp.n = 120;
    cfg.dgp.r = 80;
    cfg.dgp.link = Link::Linear;
    cfg.penalty.nu = 0.03;
    cfg.prior = PriorSpec::ImproperUniform;
    cfg
}

fn value_of(rows: &[bpel::experiments::MetricRow], method: &str) -> Result<f64, String> {
    rows.iter()
        .find(|r| r.method == method)
        .map(|r| r.value)
        .ok_or_else(|| format!("no `{method}` row"))
}

fn posterior_mean_vs_mode() -> Outcome {
    let mut cfg = desk_config();
    cfg.methods = Some(vec![Method::Mh]);
    cfg.mh.sizes = vec![3500];
    cfg.mh.burnin = 500;
    cfg.starts.per_replication = Some(1);
    let (rows, results) = run_mse1(&cfg).map_err(|e| e.to_string())?;
    let failed = results.iter().filter(|r| r.status != "ok").count();
    let mse = value_of(&rows, "mh-3500")?;
    check(
        mse <= 0.05 && failed == 0,
        format!("mean |chain mean - grid mode|^2 over 20 replications = {mse:.5} (threshold 0.05), {failed} failed runs"),
    )
}

fn efficiency() -> Outcome {
    let mut cfg = desk_config();
    cfg.efficiency.r_values = vec![200];
    cfg.efficiency.cap = 2000;
    let (rows, runs) = run_efficiency(&cfg).map_err(|e| e.to_string())?;
    let pel = value_of(&rows, "pel")?;
    let el = value_of(&rows, "el")?;
    let censored = |m: &str| runs.iter().filter(|r| r.method == m && r.censored).count();
    check(
        pel <= 100.0 && el >= 5.0 * pel,
        format!(
            "r = 200, 20 runs: PEL mean {pel:.1} proposals ({} censored), EL mean {el:.1} ({} censored at {}); ratio {:.1}",
            censored("pel"),
            censored("el"),
            cfg.efficiency.cap,
            el / pel
        ),
    )
}

fn mse2_ordering() -> Outcome {
    let mut cfg = desk_config();
    cfg.methods = Some(vec![Method::Mamis, Method::Mh, Method::StandardEl]);
    cfg.mh.sizes = vec![3500];
    cfg.mamis.sizes = vec![3500];
    cfg.starts.per_replication = Some(3);
    let (rows, results) = run_mse2(&cfg).map_err(|e| e.to_string())?;
    let failed = results.iter().filter(|r| r.status != "ok").count();
    let mamis = value_of(&rows, "mamis-3500")?;
    let mh = value_of(&rows, "mh-3500")?;
    let el = value_of(&rows, "standard-el")?;
    check(
        mamis < mh && mh < el,
        format!("MSE2: MAMIS {mamis:.5} < M-H {mh:.5} < standard EL {el:.4} ({failed} failed runs)"),
    )
}

fn central_difference(model: &IvModel, x: &[f64], theta: &[f64], h: f64) -> Vec<f64> {
    let (r, p) = (model.num_moments(), model.num_params());
    let mut out = vec![0.0; r * p];
    let (mut plus, mut minus) = (vec![0.0; r], vec![0.0; r]);
    for k in 0..p {
        let mut tp = theta.to_vec();
        let mut tm = theta.to_vec();
        tp[k] += h;
        tm[k] -= h;
        model.eval(x, &tp, &mut plus);
        model.eval(x, &tm, &mut minus);
        for j in 0..r {
            out[j * p + k] = (plus[j] - minus[j]) / (2.0 * h);
        }
    }
    out
}

fn gradient_check() -> Outcome {
    let mut src = rng(SEED + 7);
    let mut detail = Vec::new();
    let mut ok = true;
    for link in [Link::Linear, Link::Sin] {
        let model = IvModel::new(8, link);
        let mut worst = 0.0f64;
        for _ in 0..100 {
            let x: Vec<f64> = (0..11).map(|_| src.random_range(-2.0..2.0)).collect();
            let theta = [src.random_range(-2.0..2.0), src.random_range(-2.0..2.0)];
            let mut jac = vec![0.0; 16];
            if !model.jacobian(&x, &theta, &mut jac) {
                return Err(format!("{} link has no analytic Jacobian", link.as_str()));
            }
            let fd = central_difference(&model, &x, &theta, 1e-5);
            for (a, b) in jac.iter().zip(&fd) {
                worst = worst.max((a - b).abs() / a.abs().max(1e-2));
            }
        }
        ok &= worst <= 1e-5;
        detail.push(format!("{} max rel. error {worst:.1e}", link.as_str()));
    }
    check(ok, format!("100 pairs per link: {}", detail.join(", ")))
}

struct Scalar;

impl MomentModel for Scalar {
    fn name(&self) -> &str {
        "scalar"
    }

    fn num_moments(&self) -> usize {
        1
    }

    fn num_params(&self) -> usize {
        1
    }

    fn eval(&self, x: &[f64], theta: &[f64], out: &mut [f64]) {
        out[0] = x[1] * (x[0] - theta[0] * x[1]);
    }
}

fn sandwich_algebra() -> Outcome {
    let mut worst_gap = 0.0f64;
    let mut min_eig = f64::INFINITY;
    let mut asym = 0.0f64;
    for seed in 0..20u64 {
        let cfg = IvSimConfig {
            n: 200,
            r: 8,
            seed,
            link: if seed % 2 == 0 { Link::Linear } else { Link::Sin },
            ..IvSimConfig::default()
        };
        let model = IvModel::new(8, cfg.link);
        let data = simulate_iv(&cfg).map_err(|e| e.to_string())?;
        let support: Vec<usize> = (0..8).filter(|j| (j + seed as usize) % 3 != 0).collect();
        let sw = sandwich(&model, &data, &[0.3, 0.7], &support).map_err(|e| e.to_string())?;
        let eig = sw.v.clone().symmetric_eigen();
        let inv_sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
        let a = &eig.eigenvectors * inv_sqrt * eig.eigenvectors.transpose() * &sw.gamma;
        let h = a.transpose() * a;
        worst_gap = worst_gap.max((&sw.h - &h).amax() / h.amax().max(1.0));
        asym = asym.max((&sw.h - sw.h.transpose()).amax());
        min_eig = min_eig.min(sw.h.clone().symmetric_eigenvalues().min());
    }
    let mut src = rng(SEED + 8);
    let rows: Vec<Vec<f64>> = (0..300)
        .map(|_| {
            let w: f64 = src.random_range(0.5..2.0);
            vec![0.8 * w + src.random_range(-0.3..0.3), w]
        })
        .collect();
    let data = Dataset::from_rows(&rows, "scalar").map_err(|e| e.to_string())?;
    let sw = sandwich(&Scalar, &data, &[0.7], &[0]).map_err(|e| e.to_string())?;
    let eta = 0.03;
    let bc = bias_correct(&[0.7], &sw, &[eta], data.n(), 1.96).map_err(|e| e.to_string())?;
    let scalar_gap = (bc.psi[0] - eta / sw.gamma[(0, 0)]).abs();
    check(
        worst_gap <= 1e-8 && asym == 0.0 && min_eig >= 0.0 && scalar_gap <= 1e-12,
        format!(
            "max |H - (V^-1/2 G)'(V^-1/2 G)| {worst_gap:.1e}, asymmetry {asym:.1e}, min eigenvalue {min_eig:.3e}, scalar |psi - eta/Gamma| {scalar_gap:.1e}"
        ),
    )
}

fn bic_endpoints() -> Outcome {
    let cfg = IvSimConfig::default();
    let data = simulate_iv(&cfg).map_err(|e| e.to_string())?;
    let spec = PosteriorSpec::new(
        Arc::new(IvModel::new(80, Link::Linear)),
        Arc::new(data),
        Some(PenaltySpec::l1(0.03).unwrap()),
        PriorSpec::ImproperUniform,
        IvSimConfig::default_space(),
        SolverOptions::default(),
    )
    .map_err(|e| e.to_string())?;
    let res = tune_nu(&spec, &PenaltySpec::l1(0.03).unwrap(), 10, |_| Ok(vec![0.5, 0.5])).map_err(|e| e.to_string())?;
    let nus: Vec<f64> = res.trace.iter().map(|p| p.nu).collect();
    let s = (80f64.ln() / 120.0).sqrt();
    let (lo, hi) = (nus[0], *nus.last().unwrap());
    check(
        nus.len() == 10 && (lo - 0.05 * s).abs() <= 1e-12 && (hi - 0.75 * s).abs() <= 1e-12,
        format!("grid endpoints {lo:.15} and {hi:.15} (n = 120, r = 80)"),
    )
}

fn files_under(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).expect("readable output dir") {
            let path = entry.expect("dir entry").path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&path).expect("readable output file"));
            }
        }
    }
    out
}

const SMALL_CONFIG: &str = r#"
seed = 11
replications = 2

[dgp]
n = 60
r = 12

[tune]
grid_size = 3
draws = 400

[estimate]
draws = 800

[efficiency]
r_values = [20, 40]
cap = 400

[mh]
sizes = [300]

[mamis]
sizes = [350]
stages = 3

[grid]
points = 11

[starts]
points = 3
per_replication = 1
"#;

fn cli_determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_bpel");
    let work = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = work.path().join("small.toml");
    std::fs::write(&cfg, SMALL_CONFIG).map_err(|e| e.to_string())?;
    let cfg_s = cfg.display().to_string();
    let data = work.path().join("data.csv");
    let data_s = data.display().to_string();
    let mut experiment_cfgs = Vec::new();
    for kind in ["efficiency", "mse1", "mse2", "estimate", "tune"] {
        let p = work.path().join(format!("{kind}.toml"));
        std::fs::write(&p, format!("kind = \"{kind}\"\n{SMALL_CONFIG}")).map_err(|e| e.to_string())?;
        experiment_cfgs.push((kind, p.display().to_string()));
    }
    let mut cases: Vec<(String, Vec<String>)> = vec![
        ("simulate".into(), vec!["simulate", "--n", "120", "--r", "80", "--seed", "7"].into_iter().map(String::from).collect()),
    ];
    let with_data = |sub: &str, extra: &[&str]| -> Vec<String> {
        let mut v: Vec<String> = vec![sub.into(), "--config".into(), cfg_s.clone(), "--data".into(), data_s.clone()];
        v.extend(extra.iter().map(|s| s.to_string()));
        v
    };
    cases.push(("estimate".into(), with_data("estimate", &["--seed", "3"])));
    cases.push(("sample-mh".into(), with_data("sample-mh", &["--seed", "3", "--draws", "1000"])));
    cases.push(("sample-mamis".into(), with_data("sample-mamis", &["--seed", "3"])));
    cases.push(("tune-nu".into(), with_data("tune-nu", &["--seed", "3"])));
    for (kind, p) in &experiment_cfgs {
        cases.push((format!("experiment {kind}"), vec!["experiment".into(), p.clone(), "--reproducible".into()]));
    }
    // the input data for the data-driven subcommands
    let res = Command::new(bin)
        .args(["simulate", "--config", &cfg_s, "--seed", "5", "--out", &data_s])
        .output()
        .map_err(|e| e.to_string())?;
    if !res.status.success() {
        return Err(format!("simulate exited with {}", res.status));
    }
    let mut summary = Vec::new();
    let mut ok = true;
    for (label, args) in &cases {
        let mut outputs = Vec::new();
        for run in 0..2 {
            let dir = work.path().join(format!("{}-{run}", label.replace(' ', "-")));
            std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
            let out = if label == "simulate" {
                dir.join("data.csv")
            } else if label.starts_with("experiment") || label == "estimate" {
                dir.clone()
            } else {
                dir.join("out.csv")
            };
            let res = Command::new(bin)
                .args(args)
                .arg("--out")
                .arg(&out)
                .env("BPEL_THREADS", "1")
                .output()
                .map_err(|e| e.to_string())?;
            if !res.status.success() {
                return Err(format!("`{label}` exited with {}: {}", res.status, String::from_utf8_lossy(&res.stderr).trim()));
            }
            outputs.push(files_under(&dir));
        }
        let same = !outputs[0].is_empty() && outputs[0] == outputs[1];
        ok &= same;
        summary.push(format!("{label} {}", if same { "identical" } else { "DIFFERENT" }));
    }
    check(ok, summary.join(", "))
}

fn main() {
    let criteria = [
        Criterion { id: 1, name: "KKT suite", budget: Duration::from_secs(30), run: kkt_suite },
        Criterion { id: 2, name: "inner-solver grid oracle", budget: Duration::from_secs(60), run: grid_oracle },
        Criterion { id: 3, name: "sampler means vs quadrature", budget: Duration::from_secs(120), run: sampler_oracle },
        Criterion { id: 4, name: "posterior mean vs grid mode", budget: Duration::from_secs(900), run: posterior_mean_vs_mode },
        Criterion { id: 5, name: "sampling efficiency at r = 200", budget: Duration::from_secs(600), run: efficiency },
        Criterion { id: 6, name: "MSE2 ordering", budget: Duration::from_secs(1200), run: mse2_ordering },
        Criterion { id: 7, name: "Jacobian gradient check", budget: Duration::from_secs(5), run: gradient_check },
        Criterion { id: 8, name: "sandwich and bias algebra", budget: Duration::from_secs(5), run: sandwich_algebra },
        Criterion { id: 9, name: "nu grid endpoints", budget: Duration::from_secs(1), run: bic_endpoints },
        Criterion { id: 10, name: "CLI determinism", budget: Duration::from_secs(120), run: cli_determinism },
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failures = 0;
    for c in criteria.iter().filter(|c| selected.is_empty() || selected.contains(&c.id)) {
        let t = Instant::now();
        let outcome = (c.run)();
        let elapsed = t.elapsed();
        let over = elapsed > c.budget;
        let (verdict, detail) = match &outcome {
            Ok(d) if !over => ("PASS", d.clone()),
            Ok(d) => ("FAIL", format!("{d}; over the {:?} budget", c.budget)),
            Err(d) => ("FAIL", d.clone()),
        };
        failures += usize::from(verdict == "FAIL");
        println!("criterion {:>2} {verdict} [{}] {detail} ({:.1} s)", c.id, c.name, elapsed.as_secs_f64());
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
