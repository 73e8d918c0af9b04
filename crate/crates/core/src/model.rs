//! Datasets, moment models and the instrumental-variable simulation design.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, Matrix3};
#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, purpose};

/// An `n x d` table of i.i.d. observations, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    values: Vec<f64>,
    n: usize,
    d: usize,
    label: String,
}

impl Dataset {
    pub fn from_row_major(values: Vec<f64>, n: usize, d: usize, label: impl Into<String>) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::Config(String::from("dataset needs at least one row and one column")));
        }
        if values.len() != n * d {
            return Err(Error::Dimension(format!(
                "{} values cannot fill a {n} x {d} table",
                values.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Config(format!(
                "non-finite observation at row {}, column {}",
                k / d,
                k % d
            )));
        }
        Ok(Self {
            values,
            n,
            d,
            label: label.into(),
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], label: impl Into<String>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != d) {
            return Err(Error::Dimension(format!("row {i} has {} columns, expected {d}", rows[i].len())));
        }
        let values = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::from_row_major(values, rows.len(), d, label)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.d)
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.d, &self.values)
    }
}

/// A compact box `[lower, upper]` in `R^p`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ParameterSpace {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl ParameterSpace {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::Config(format!(
                "parameter box bounds have lengths {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        for (k, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Config(format!("parameter box is empty in coordinate {k}: [{lo}, {hi}]")));
            }
        }
        Ok(Self { lower, upper })
    }

    /// `[-half_width, half_width]^p`.
    pub fn symmetric(p: usize, half_width: f64) -> Result<Self> {
        Self::new(vec![-half_width; p], vec![half_width; p])
    }

    pub fn p(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.p()
            && theta
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(t, (lo, hi))| *lo <= *t && *t <= *hi)
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(lo, hi)| 0.5 * (lo + hi)).collect()
    }
}

/// An estimating function `g(x; theta)` with values in `R^r`.
pub trait MomentModel: Send + Sync {
    fn name(&self) -> &str;

    /// Number of moment conditions `r`.
    fn num_moments(&self) -> usize;

    /// Parameter dimension `p`.
    fn num_params(&self) -> usize;

    /// Writes `g(x; theta)` into `out` (length `r`).
    fn eval(&self, x: &[f64], theta: &[f64], out: &mut [f64]);

    /// Writes the `r x p` Jacobian `d g_j / d theta_k` row-major into `out`.
    /// Returns `false` when the model has no analytic Jacobian.
    fn jacobian(&self, _x: &[f64], _theta: &[f64], _out: &mut [f64]) -> bool {
        false
    }
}

/// `n x r` matrix whose row `i` is `g(X_i; theta)`.
pub fn evaluate_moments(model: &dyn MomentModel, data: &Dataset, theta: &[f64]) -> Result<DMatrix<f64>> {
    let r = model.num_moments();
    if theta.len() != model.num_params() {
        return Err(Error::Dimension(format!(
            "theta has length {}, model {} expects {}",
            theta.len(),
            model.name(),
            model.num_params()
        )));
    }
    let n = data.n();
    let mut g = DMatrix::zeros(n, r);
    let mut buf = vec![0.0; r];
    for (i, x) in data.rows().enumerate() {
        model.eval(x, theta, &mut buf);
        for (j, v) in buf.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFiniteMoment { row: i, component: j });
            }
            g[(i, j)] = *v;
        }
    }
    Ok(g)
}

/// Column means of a moment matrix.
pub fn mean_moments(g: &DMatrix<f64>) -> DVector<f64> {
    let n = g.nrows() as f64;
    DVector::from_iterator(g.ncols(), g.column_iter().map(|c| c.sum() / n))
}

/// Keeps only the first `keep` moment conditions of another model.
pub struct LeadingMoments {
    inner: Arc<dyn MomentModel>,
    keep: usize,
    name: String,
}

impl LeadingMoments {
    pub fn new(inner: Arc<dyn MomentModel>, keep: usize) -> Result<Self> {
        if keep == 0 || keep > inner.num_moments() {
            return Err(Error::Config(format!(
                "cannot keep {keep} of {} moment conditions",
                inner.num_moments()
            )));
        }
        let name = format!("{}[..{keep}]", inner.name());
        Ok(Self { inner, keep, name })
    }
}

impl MomentModel for LeadingMoments {
    fn name(&self) -> &str {
        &self.name
    }

    fn num_moments(&self) -> usize {
        self.keep
    }

    fn num_params(&self) -> usize {
        self.inner.num_params()
    }

    fn eval(&self, x: &[f64], theta: &[f64], out: &mut [f64]) {
        let mut full = vec![0.0; self.inner.num_moments()];
        self.inner.eval(x, theta, &mut full);
        out.copy_from_slice(&full[..self.keep]);
    }

    fn jacobian(&self, x: &[f64], theta: &[f64], out: &mut [f64]) -> bool {
        let p = self.num_params();
        let mut full = vec![0.0; self.inner.num_moments() * p];
        if !self.inner.jacobian(x, theta, &mut full) {
            return false;
        }
        out.copy_from_slice(&full[..self.keep * p]);
        true
    }
}

/// Link function of the structural equation `y = link(u'theta) + e0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize), serde(rename_all = "snake_case"))]
pub enum Link {
    Linear,
    Sin,
}

impl Link {
    #[inline]
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Link::Linear => v,
            Link::Sin => libm::sin(v),
        }
    }

    #[inline]
    pub fn derivative(self, v: f64) -> f64 {
        match self {
            Link::Linear => 1.0,
            Link::Sin => libm::cos(v),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Link::Linear => "linear",
            Link::Sin => "sin",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize), serde(rename_all = "snake_case"))]
pub enum InstrumentDist {
    Gaussian,
    StudentT3,
}

/// The simulation design: two endogenous regressors, `r` instruments of
/// which only the first four enter the reduced forms.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize), serde(default, deny_unknown_fields))]
pub struct IvSimConfig {
    pub n: usize,
    pub r: usize,
    pub link: Link,
    pub theta0: [f64; 2],
    pub instrument_dist: InstrumentDist,
    pub error_cov: [[f64; 3]; 3],
    pub seed: u64,
}

pub const DEFAULT_ERROR_COV: [[f64; 3]; 3] = [[0.43, 0.3, 0.3], [0.3, 0.34, 0.09], [0.3, 0.09, 0.34]];

impl Default for IvSimConfig {
    fn default() -> Self {
        Self {
            n: 120,
            r: 80,
            link: Link::Linear,
            theta0: [0.5, 0.5],
            instrument_dist: InstrumentDist::Gaussian,
            error_cov: DEFAULT_ERROR_COV,
            seed: 0,
        }
    }
}

impl IvSimConfig {
    /// Default parameter box for the IV design, `[-5, 5]^2`.
    pub fn default_space() -> ParameterSpace {
        ParameterSpace::symmetric(2, 5.0).expect("static box is valid")
    }

    pub fn validate(&self, space: &ParameterSpace) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config(String::from("n must be at least 1")));
        }
        if self.r < 4 {
            return Err(Error::Config(format!("r = {} but the design needs at least 4 instruments", self.r)));
        }
        if !space.contains(&self.theta0) {
            return Err(Error::Config(format!("theta0 = {:?} lies outside the parameter box", self.theta0)));
        }
        self.error_factor().map(|_| ())
    }

    /// Lower Cholesky factor of the error covariance. The all-zero matrix is
    /// accepted as the noise-free design.
    #[allow(clippy::needless_range_loop)]
    fn error_factor(&self) -> Result<Matrix3<f64>> {
        let c = &self.error_cov;
        for i in 0..3 {
            for j in 0..3 {
                if !c[i][j].is_finite() || c[i][j] != c[j][i] {
                    return Err(Error::Config(String::from("error covariance must be finite and symmetric")));
                }
            }
        }
        if c.iter().flatten().all(|v| *v == 0.0) {
            return Ok(Matrix3::zeros());
        }
        let m = Matrix3::from_fn(|i, j| c[i][j]);
        m.cholesky()
            .map(|ch| ch.l())
            .ok_or_else(|| Error::Config(String::from("error covariance is not positive definite")))
    }

    pub fn column_names(&self) -> Vec<String> {
        let mut names = vec![String::from("y"), String::from("u1"), String::from("u2")];
        names.extend((1..=self.r).map(|j| format!("z{j}")));
        names
    }
}

/// Draws `n` rows `(y, u1, u2, z1..zr)` from the IV design.
///
/// Per row, the draw order is: `z_1..z_r`, then three standard normals
/// `xi` with `(e0, e1, e2) = L xi` for the Cholesky factor `L` of the error
/// covariance. The stream is `substream(seed, [DATA])`.
pub fn simulate_iv(config: &IvSimConfig) -> Result<Dataset> {
    if config.n == 0 || config.r < 4 {
        return Err(Error::Config(format!(
            "invalid design: n = {}, r = {} (need n >= 1, r >= 4)",
            config.n, config.r
        )));
    }
    let l = config.error_factor()?;
    let mut rng = rng::substream(config.seed, &[purpose::DATA]);
    let d = 3 + config.r;
    let mut values = Vec::with_capacity(config.n * d);
    let mut z = vec![0.0; config.r];
    for _ in 0..config.n {
        for zj in z.iter_mut() {
            *zj = match config.instrument_dist {
                InstrumentDist::Gaussian => rng::standard_normal(&mut rng),
                InstrumentDist::StudentT3 => rng::student_t(&mut rng, 3.0),
            };
        }
        let xi = nalgebra::Vector3::new(
            rng::standard_normal(&mut rng),
            rng::standard_normal(&mut rng),
            rng::standard_normal(&mut rng),
        );
        let e = l * xi;
        let u1 = 0.5 * z[0] + 0.5 * z[1] + e[1];
        let u2 = 0.5 * z[2] + 0.5 * z[3] + e[2];
        let y = config.link.apply(u1 * config.theta0[0] + u2 * config.theta0[1]) + e[0];
        values.push(y);
        values.push(u1);
        values.push(u2);
        values.extend_from_slice(&z);
    }
    let label = format!(
        "iv n={} r={} link={} seed={}",
        config.n,
        config.r,
        config.link.as_str(),
        config.seed
    );
    Dataset::from_row_major(values, config.n, d, label)
}

/// `g(X; theta) = {y - link(u'theta)} z` for rows laid out as `(y, u1, u2, z)`.
#[derive(Debug, Clone)]
pub struct IvModel {
    r: usize,
    link: Link,
    name: String,
}

impl IvModel {
    pub fn new(r: usize, link: Link) -> Self {
        Self {
            r,
            link,
            name: format!("iv-{}", link.as_str()),
        }
    }

    pub fn link(&self) -> Link {
        self.link
    }
}

pub fn iv_moment_model(config: &IvSimConfig) -> IvModel {
    IvModel::new(config.r, config.link)
}

impl MomentModel for IvModel {
    fn name(&self) -> &str {
        &self.name
    }

    fn num_moments(&self) -> usize {
        self.r
    }

    fn num_params(&self) -> usize {
        2
    }

    #[inline]
    fn eval(&self, x: &[f64], theta: &[f64], out: &mut [f64]) {
        let index = x[1] * theta[0] + x[2] * theta[1];
        let resid = x[0] - self.link.apply(index);
        for (o, z) in out.iter_mut().zip(&x[3..3 + self.r]) {
            *o = resid * z;
        }
    }

    fn jacobian(&self, x: &[f64], theta: &[f64], out: &mut [f64]) -> bool {
        let index = x[1] * theta[0] + x[2] * theta[1];
        let slope = self.link.derivative(index);
        for (j, z) in x[3..3 + self.r].iter().enumerate() {
            out[2 * j] = -slope * z * x[1];
            out[2 * j + 1] = -slope * z * x[2];
        }
        true
    }
}
