//! Run configuration, read from TOML or JSON.
//!
//! Every section is optional and falls back to the defaults of the
//! simulation design (n = 120, r = 80, nu = 0.03, 20 replications, a 7 x 7
//! grid of starting points over `[-3, 4]^2`, sampler sizes 1500/2500/3500).

use std::path::{Path, PathBuf};

use bpel_core::baselines::SimplexOptions;
use bpel_core::{IvSimConfig, ParameterSpace, PenaltySpec, PriorSpec, RwProposal, SolverOptions};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Efficiency,
    Mse1,
    Mse2,
    Estimate,
    Tune,
}

impl Kind {
    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Efficiency => "efficiency",
            Kind::Mse1 => "mse1",
            Kind::Mse2 => "mse2",
            Kind::Estimate => "estimate",
            Kind::Tune => "tune",
        }
    }
}

/// Methods compared in the MSE experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Random-walk Metropolis-Hastings, one row per entry of `mh.sizes`.
    Mh,
    /// MAMIS, one row per entry of `mamis.sizes`.
    Mamis,
    /// Nelder-Mead on the penalized profile.
    Simplex,
    /// Nelder-Mead on the un-penalized four-moment profile.
    StandardEl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampler {
    Mh,
    #[default]
    Mamis,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Required by the `experiment` subcommand only.
    pub kind: Option<Kind>,
    pub seed: u64,
    pub replications: usize,
    pub out_dir: PathBuf,
    /// Overrides the per-kind default method list of the MSE experiments.
    pub methods: Option<Vec<Method>>,
    pub dgp: IvSimConfig,
    pub penalty: PenaltyConfig,
    pub solver: SolverOptions,
    pub prior: PriorSpec,
    pub space: SpaceConfig,
    pub mh: MhConfig,
    pub mamis: MamisConfig,
    pub baseline: SimplexOptions,
    pub grid: GridConfig,
    pub starts: StartsConfig,
    pub efficiency: EfficiencyConfig,
    pub tune: TuneConfig,
    pub estimate: EstimateConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            kind: None,
            seed: 0,
            replications: 20,
            out_dir: PathBuf::from("out"),
            methods: None,
            dgp: IvSimConfig::default(),
            penalty: PenaltyConfig::default(),
            solver: SolverOptions::default(),
            prior: PriorSpec::default(),
            space: SpaceConfig::default(),
            mh: MhConfig::default(),
            mamis: MamisConfig::default(),
            baseline: SimplexOptions::default(),
            grid: GridConfig::default(),
            starts: StartsConfig::default(),
            efficiency: EfficiencyConfig::default(),
            tune: TuneConfig::default(),
            estimate: EstimateConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PenaltyConfig {
    /// L1 penalty level.
    pub nu: f64,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self { nu: 0.03 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpaceConfig {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Default for SpaceConfig {
    fn default() -> Self {
        Self {
            lower: vec![-5.0; 2],
            upper: vec![5.0; 2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MhConfig {
    /// Scale constant in `sigma^2 = c / (n log r)`.
    pub c: f64,
    /// Fixed step variance; overrides `c` when set.
    pub sigma2: Option<f64>,
    pub adapt: bool,
    pub target_acceptance: f64,
    pub burnin: usize,
    /// Post-burn-in chain lengths. The MSE experiments run one chain of the
    /// largest size and report every prefix.
    pub sizes: Vec<usize>,
}

impl Default for MhConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            sigma2: None,
            adapt: true,
            target_acceptance: 0.234,
            burnin: 500,
            sizes: vec![1500, 2500, 3500],
        }
    }
}

impl MhConfig {
    pub fn proposal(&self, n: usize, r: usize) -> Result<RwProposal> {
        let mut prop = match self.sigma2 {
            Some(s2) => RwProposal::fixed(s2)?,
            None => RwProposal::n_logr(self.c, n, r)?,
        };
        prop.adapt_burnin = self.adapt;
        prop.target_acceptance = self.target_acceptance;
        prop.validate()?;
        Ok(prop)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MamisConfig {
    pub df: f64,
    /// Number of adaptation stages; stage `k` gets a share proportional to `k`.
    pub stages: usize,
    /// Total draws per run.
    pub sizes: Vec<usize>,
    /// The first proposal is `T_df(start, init_scale * I)`.
    pub init_scale: f64,
}

impl Default for MamisConfig {
    fn default() -> Self {
        Self {
            df: 3.0,
            stages: 7,
            sizes: vec![1500, 2500, 3500],
            init_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub points: usize,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            points: 101,
            lo: vec![-0.5; 2],
            hi: vec![1.5; 2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StartsConfig {
    /// Points per dimension of the starting grid.
    pub points: usize,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Use only this many starts per replication, walking through the grid
    /// cyclically across replications.
    pub per_replication: Option<usize>,
}

impl Default for StartsConfig {
    fn default() -> Self {
        Self {
            points: 7,
            lo: vec![-3.0; 2],
            hi: vec![4.0; 2],
            per_replication: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EfficiencyConfig {
    pub r_values: Vec<usize>,
    pub nu: f64,
    pub sigma2: f64,
    pub theta0: Vec<f64>,
    /// Valid samples to wait for.
    pub needed: usize,
    /// Proposals after which a run is censored.
    pub cap: usize,
}

impl Default for EfficiencyConfig {
    fn default() -> Self {
        Self {
            r_values: vec![20, 40, 60, 80, 120, 160, 200],
            nu: 0.03,
            sigma2: 1e-4,
            theta0: vec![0.3, 0.3],
            needed: 5,
            cap: 200_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneConfig {
    /// Select nu by BIC before estimating (MSE2 and estimate runs).
    pub enabled: bool,
    pub grid_size: usize,
    pub sampler: Sampler,
    /// Total draws of the sampler used for each grid point.
    pub draws: usize,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            grid_size: 10,
            sampler: Sampler::Mamis,
            draws: 1500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateConfig {
    /// CSV dataset; the design in `[dgp]` is simulated when absent.
    pub data: Option<PathBuf>,
    pub sampler: Sampler,
    /// Sampler start; the centre of the parameter box when absent.
    pub start: Option<Vec<f64>>,
    pub draws: usize,
    pub ci_level: f64,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        Self {
            data: None,
            sampler: Sampler::Mamis,
            start: None,
            draws: 3500,
            ci_level: 0.95,
        }
    }
}

fn check(ok: bool, message: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(message()))
    }
}

fn check_box(name: &str, lo: &[f64], hi: &[f64], space: &ParameterSpace) -> Result<()> {
    check(lo.len() == space.p() && hi.len() == space.p(), || {
        format!("{name}: bounds must have length {}", space.p())
    })?;
    check(space.contains(lo) && space.contains(hi), || {
        format!("{name}: [{lo:?}, {hi:?}] is not inside the parameter box")
    })?;
    check(lo.iter().zip(hi).all(|(l, h)| l <= h), || format!("{name}: lower bound above upper bound"))
}

impl Config {
    /// Reads a config file; `.json` files are parsed as JSON, anything else
    /// as TOML.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Config = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn space(&self) -> Result<ParameterSpace> {
        Ok(ParameterSpace::new(self.space.lower.clone(), self.space.upper.clone())?)
    }

    pub fn penalty(&self) -> Result<PenaltySpec> {
        Ok(PenaltySpec::l1(self.penalty.nu)?)
    }

    pub fn validate(&self) -> Result<()> {
        let space = self.space()?;
        self.penalty()?;
        self.solver.validate()?;
        self.baseline.validate()?;
        self.prior.validate(space.p())?;
        self.dgp.validate(&space)?;
        check(space.p() == 2, || String::from("the instrumental-variable design has two parameters"))?;
        check(self.replications >= 1, || String::from("replications must be at least 1"))?;
        self.mh.proposal(self.dgp.n, self.dgp.r)?;
        check(!self.mh.sizes.is_empty() && !self.mh.sizes.contains(&0), || {
            String::from("mh.sizes must be non-empty and positive")
        })?;
        check(self.mamis.df > 2.0, || format!("mamis.df = {} must exceed 2", self.mamis.df))?;
        check(self.mamis.init_scale > 0.0 && self.mamis.init_scale.is_finite(), || {
            String::from("mamis.init_scale must be positive")
        })?;
        check(self.mamis.stages >= 1, || String::from("mamis.stages must be at least 1"))?;
        check(
            !self.mamis.sizes.is_empty() && self.mamis.sizes.iter().all(|s| *s >= self.mamis.stages),
            || String::from("every mamis size must be at least the number of stages"),
        )?;
        check(self.grid.points >= 2, || String::from("grid.points must be at least 2"))?;
        check_box("grid", &self.grid.lo, &self.grid.hi, &space)?;
        check(self.starts.points >= 1, || String::from("starts.points must be at least 1"))?;
        check_box("starts", &self.starts.lo, &self.starts.hi, &space)?;
        check(self.starts.per_replication != Some(0), || {
            String::from("starts.per_replication must be positive")
        })?;
        let eff = &self.efficiency;
        check(eff.r_values.iter().all(|r| *r >= 4), || String::from("efficiency.r_values must be at least 4"))?;
        check(eff.nu > 0.0 && eff.sigma2 > 0.0 && eff.needed >= 1 && eff.cap >= eff.needed, || {
            String::from("efficiency needs nu > 0, sigma2 > 0 and cap >= needed >= 1")
        })?;
        check(space.contains(&eff.theta0), || String::from("efficiency.theta0 is outside the parameter box"))?;
        check(self.tune.grid_size >= 2 && self.tune.draws >= 1, || {
            String::from("tune needs grid_size >= 2 and draws >= 1")
        })?;
        let est = &self.estimate;
        check(est.draws >= self.mamis.stages, || String::from("estimate.draws is below mamis.stages"))?;
        check(est.ci_level > 0.0 && est.ci_level < 1.0, || String::from("estimate.ci_level must be in (0, 1)"))?;
        if let Some(start) = &est.start {
            check(space.contains(start), || String::from("estimate.start is outside the parameter box"))?;
        }
        Ok(())
    }

    pub fn methods(&self, kind: Kind) -> Vec<Method> {
        self.methods.clone().unwrap_or_else(|| match kind {
            Kind::Mse2 => vec![Method::Mamis, Method::Mh, Method::StandardEl],
            _ => vec![Method::Mh, Method::Mamis, Method::Simplex],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg: Config = toml::from_str("").unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.replications, 20);
        assert_eq!(cfg.dgp.n, 120);
        assert_eq!(cfg.starts.points, 7);
    }

    #[test]
    fn sections_parse() {
        let cfg: Config = toml::from_str(
            r#"
            kind = "mse2"
            seed = 9
            methods = ["mamis", "standard_el"]
            [dgp]
            r = 40
            link = "sin"
            [prior]
            kind = "gaussian"
            mean = [0.0, 0.0]
            sd = 10.0
            [starts]
            per_replication = 3
            "#,
        )
        .unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.kind, Some(Kind::Mse2));
        assert_eq!(cfg.dgp.r, 40);
        assert_eq!(cfg.methods(Kind::Mse2), vec![Method::Mamis, Method::StandardEl]);
        assert!(matches!(cfg.prior, PriorSpec::Gaussian { .. }));
    }

    #[test]
    fn json_and_toml_agree() {
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("c.toml");
        let j = dir.path().join("c.json");
        std::fs::write(&t, "kind = \"tune\"\nseed = 4\n[penalty]\nnu = 0.05\n").unwrap();
        std::fs::write(&j, r#"{"kind": "tune", "seed": 4, "penalty": {"nu": 0.05}}"#).unwrap();
        let a = Config::load(&t).unwrap();
        let b = Config::load(&j).unwrap();
        assert_eq!(a.penalty, b.penalty);
        assert_eq!(a.seed, b.seed);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(toml::from_str::<Config>("bogus = 1").is_err());
        let mut cfg = Config::default();
        cfg.replications = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = Config::default();
        cfg.starts.hi = vec![6.0, 4.0];
        assert!(cfg.validate().is_err());
        let mut cfg = Config::default();
        cfg.penalty.nu = -1.0;
        assert!(cfg.validate().is_err());
    }
}
