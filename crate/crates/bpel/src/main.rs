use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bpel::config::{Config, Sampler};
use bpel::experiments::{self, RunOptions};
use bpel::io::{self, Layout};
use bpel::{Error, Result};
use bpel_core::model::Link;
use bpel_core::{chain_mean, Posterior};
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Environment variable overriding the worker thread count.
const THREADS_ENV: &str = "BPEL_THREADS";

#[derive(Parser)]
#[command(name = "bpel", version, about = "Bayesian penalized empirical likelihood")]
struct Cli {
    /// Run configuration (TOML, or JSON with a .json extension).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides `seed` from the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: BPEL_THREADS, else one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Write zero wall times so that repeated runs give identical files.
    #[arg(long, global = true)]
    reproducible: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate an instrumental-variable dataset to CSV.
    Simulate {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        r: Option<usize>,
        #[arg(long, value_enum)]
        link: Option<LinkArg>,
    },
    /// Sample, bias-correct and report interval estimates.
    Estimate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        sampler: Option<SamplerArg>,
        /// Select nu by BIC first.
        #[arg(long)]
        tune: bool,
    },
    /// Random-walk Metropolis-Hastings; writes the chain as CSV.
    SampleMh {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        burnin: Option<usize>,
        /// Fixed step variance instead of c / (n log r).
        #[arg(long)]
        sigma2: Option<f64>,
    },
    /// MAMIS; writes the draws and recycled weights as CSV.
    SampleMamis {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        stages: Option<usize>,
    },
    /// BIC trace over the nu grid.
    TuneNu {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        grid_size: Option<usize>,
    },
    /// Run the study described by a configuration file.
    Experiment {
        /// Configuration file; `kind` selects the study.
        file: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// Dataset CSV; the configured design is simulated when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long)]
    draws: Option<usize>,
    /// Starting point, e.g. `0.5,0.5`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    start: Option<Vec<f64>>,
}

#[derive(Clone, Copy, ValueEnum)]
enum LinkArg {
    Linear,
    Sin,
}

#[derive(Clone, Copy, ValueEnum)]
enum SamplerArg {
    Mh,
    Mamis,
}

impl Common {
    fn apply(&self, cfg: &mut Config) {
        if let Some(d) = &self.data {
            cfg.estimate.data = Some(d.clone());
        }
        if let Some(nu) = self.nu {
            cfg.penalty.nu = nu;
        }
        if let Some(k) = self.draws {
            cfg.estimate.draws = k;
        }
        if let Some(s) = &self.start {
            cfg.estimate.start = Some(s.clone());
        }
    }
}

fn load_config(cli: &Cli, path: Option<&Path>) -> Result<Config> {
    let mut cfg = match path {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn out_path(cli: &Cli, default: &str) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn start_of(cfg: &Config) -> Vec<f64> {
    cfg.estimate
        .start
        .clone()
        .unwrap_or_else(|| bpel::Config::space(cfg).map(|s| s.center()).unwrap_or_default())
}

fn posterior(cfg: &Config) -> Result<Posterior> {
    let (model, data) = experiments::load_or_simulate(cfg)?;
    let spec = experiments::posterior_spec(cfg, model, data, cfg.penalty.nu)?;
    Ok(Posterior::new(std::sync::Arc::new(spec)))
}

fn run(cli: &Cli) -> Result<()> {
    let threads = cli.threads.or_else(|| std::env::var(THREADS_ENV).ok().and_then(|v| v.parse().ok()));
    if let Some(t) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let opts = RunOptions {
        reproducible: cli.reproducible,
    };
    match &cli.command {
        Command::Simulate { n, r, link } => {
            let mut cfg = load_config(cli, cli.config.as_deref())?;
            if let Some(n) = n {
                cfg.dgp.n = *n;
            }
            if let Some(r) = r {
                cfg.dgp.r = *r;
            }
            if let Some(l) = link {
                cfg.dgp.link = match l {
                    LinkArg::Linear => Link::Linear,
                    LinkArg::Sin => Link::Sin,
                };
            }
            cfg.validate()?;
            cfg.dgp.seed = cfg.seed;
            let data = bpel_core::model::simulate_iv(&cfg.dgp)?;
            let path = out_path(cli, "data.csv");
            io::write_dataset(&path, &data, Layout::Iv { r: cfg.dgp.r })?;
            println!("wrote {} ({} rows, {} columns)", path.display(), data.n(), data.d());
        }
        Command::Estimate { common, sampler, tune } => {
            let mut cfg = load_config(cli, cli.config.as_deref())?;
            common.apply(&mut cfg);
            if let Some(s) = sampler {
                cfg.estimate.sampler = match s {
                    SamplerArg::Mh => Sampler::Mh,
                    SamplerArg::Mamis => Sampler::Mamis,
                };
            }
            cfg.tune.enabled |= *tune;
            cfg.validate()?;
            let out = experiments::run_estimate(&cfg)?;
            let dir = out_path(cli, "out");
            io::write_json(&dir.join("report.json"), &out.report)?;
            experiments::write_report_csv(&dir.join("report.csv"), &out.report)?;
            out.draws.write(&dir.join("samples.csv"))?;
            let r = &out.report;
            for k in 0..r.posterior_mean.len() {
                println!(
                    "theta_{}: mean {:.6}  corrected {:.6}  se {:.6}  {:.0}% CI [{:.6}, {:.6}]",
                    k + 1,
                    r.posterior_mean[k],
                    r.theta_corrected[k],
                    r.std_errors[k],
                    100.0 * r.ci_level,
                    r.ci_lower[k],
                    r.ci_upper[k]
                );
            }
            println!("nu = {}, support size {}, wrote {}", r.nu, r.support.len(), dir.display());
        }
        Command::SampleMh { common, burnin, sigma2 } => {
            let mut cfg = load_config(cli, cli.config.as_deref())?;
            common.apply(&mut cfg);
            if let Some(b) = burnin {
                cfg.mh.burnin = *b;
            }
            if sigma2.is_some() {
                cfg.mh.sigma2 = *sigma2;
            }
            cfg.validate()?;
            let mut post = posterior(&cfg)?;
            let start = start_of(&cfg);
            let chain = experiments::run_mh(&cfg, &mut post, &start, cfg.estimate.draws, cfg.seed)?;
            let path = out_path(cli, "chain.csv");
            io::write_chain(&path, &chain)?;
            if let Some(e) = chain.failure.clone() {
                return Err(Error::from(e).context(format!("chain stopped after {} draws", chain.len())));
            }
            println!(
                "wrote {}: {} draws, acceptance {:.3}, mean {:?}",
                path.display(),
                chain.len(),
                chain.acceptance_rate(),
                chain_mean(&chain)?
            );
        }
        Command::SampleMamis { common, stages } => {
            let mut cfg = load_config(cli, cli.config.as_deref())?;
            common.apply(&mut cfg);
            if let Some(k) = stages {
                cfg.mamis.stages = *k;
            }
            cfg.validate()?;
            let mut post = posterior(&cfg)?;
            let start = start_of(&cfg);
            let ws = experiments::run_mamis(&cfg, &mut post, &start, cfg.estimate.draws, cfg.seed)?;
            let path = out_path(cli, "samples.csv");
            io::write_weighted(&path, &ws)?;
            println!(
                "wrote {}: {} draws, ESS {:.1}, mean {:?}",
                path.display(),
                ws.total(),
                ws.ess(),
                bpel_core::weighted_mean(&ws)?
            );
        }
        Command::TuneNu { common, grid_size } => {
            let mut cfg = load_config(cli, cli.config.as_deref())?;
            common.apply(&mut cfg);
            if let Some(g) = grid_size {
                cfg.tune.grid_size = *g;
            }
            cfg.validate()?;
            let post = posterior(&cfg)?;
            let result = experiments::tune(&cfg, post.spec(), &start_of(&cfg), cfg.seed)?;
            let path = out_path(cli, "tune.csv");
            experiments::write_tune_csv(&path, &result)?;
            println!("wrote {}: selected nu = {}", path.display(), result.nu);
        }
        Command::Experiment { file } => {
            let cfg = load_config(cli, Some(file))?;
            let dir = cli.out.clone().unwrap_or_else(|| cfg.out_dir.clone());
            for path in experiments::run_experiment(&cfg, &dir, opts)? {
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
