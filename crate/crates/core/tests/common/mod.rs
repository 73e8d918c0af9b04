//! Independent oracles shared by the integration tests. Nothing here calls
//! the solver, the samplers or the estimator under test.
#![allow(dead_code)]

use bpel_core::likelihood::{LogDensity, LogTarget};
use bpel_core::Result;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A random `n x r` moment matrix whose column means are of the same order
/// as typical penalty levels, so that both zero and non-zero multipliers show
/// up.
pub fn random_moments(rng: &mut ChaCha8Rng, n: usize, r: usize) -> DMatrix<f64> {
    let shifts: Vec<f64> = (0..r).map(|_| rng.random_range(-0.2..0.2)).collect();
    DMatrix::from_fn(n, r, |_, j| rng.random_range(-1.0..1.0) + shifts[j])
}

/// `(1/n) sum log(1 + lambda' g_i) - nu |lambda|_1`, `-inf` outside the
/// domain.
pub fn l1_objective(g: &DMatrix<f64>, nu: f64, lambda: &[f64]) -> f64 {
    let n = g.nrows();
    let mut s = 0.0;
    for i in 0..n {
        let t: f64 = (0..g.ncols()).map(|j| g[(i, j)] * lambda[j]).sum();
        if 1.0 + t <= 0.0 {
            return f64::NEG_INFINITY;
        }
        s += (1.0 + t).ln();
    }
    s / n as f64 - nu * lambda.iter().map(|l| l.abs()).sum::<f64>()
}

/// Radius outside which the L1-penalized objective is negative:
/// `f <= log(1 + B max|g|) - nu B`.
fn search_radius(g: &DMatrix<f64>, nu: f64) -> f64 {
    let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs())) * (g.ncols() as f64).sqrt();
    let mut b = 1.0;
    while (1.0 + b * gmax).ln() - nu * b >= 0.0 {
        b *= 2.0;
    }
    b
}

/// Maximizes the L1-penalized objective for `r` in {1, 2} by repeatedly
/// zooming a dense grid onto its best cell.
pub fn grid_maximize(g: &DMatrix<f64>, nu: f64) -> (Vec<f64>, f64) {
    let r = g.ncols();
    assert!(r == 1 || r == 2);
    let b = search_radius(g, nu);
    let mut lo = vec![-b; r];
    let mut hi = vec![b; r];
    let points = 201;
    let mut best = (vec![0.0; r], l1_objective(g, nu, &vec![0.0; r]));
    for _ in 0..60 {
        let step: Vec<f64> = (0..r).map(|k| (hi[k] - lo[k]) / (points - 1) as f64).collect();
        let count = if r == 1 { points } else { points * points };
        for idx in 0..count {
            let ij = [idx % points, idx / points];
            let lam: Vec<f64> = (0..r).map(|k| lo[k] + step[k] * ij[k] as f64).collect();
            let f = l1_objective(g, nu, &lam);
            if f > best.1 {
                best = (lam, f);
            }
        }
        // the grid always contains lambda = 0 in the first round; keep the
        // incumbent if a zoomed grid misses it
        for k in 0..r {
            lo[k] = best.0[k] - 3.0 * step[k];
            hi[k] = best.0[k] + 3.0 * step[k];
        }
        if step.iter().all(|s| *s < 1e-11) {
            break;
        }
    }
    // exact zeros are checked explicitly because the grid rarely hits them
    for mask in 0..(1usize << r) {
        let mut lam = best.0.clone();
        for (k, l) in lam.iter_mut().enumerate() {
            if mask & (1 << k) != 0 {
                *l = 0.0;
            }
        }
        let f = l1_objective(g, nu, &lam);
        if f >= best.1 {
            best = (lam, f);
        }
    }
    best
}

/// A bivariate Gaussian restricted to a box, with an explicit
/// (not normalized) log density.
#[derive(Clone)]
pub struct TruncatedGaussian {
    pub mean: [f64; 2],
    pub prec: [[f64; 2]; 2],
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl TruncatedGaussian {
    pub fn standard_example() -> Self {
        // covariance [[0.5, 0.2], [0.2, 0.3]]
        let (a, b, c) = (0.5, 0.2, 0.3);
        let det = a * c - b * b;
        Self {
            mean: [0.7, -0.2],
            prec: [[c / det, -b / det], [-b / det, a / det]],
            lo: [-0.5, -1.0],
            hi: [1.2, 0.8],
        }
    }

    pub fn log_kernel(&self, x: &[f64]) -> f64 {
        let d = [x[0] - self.mean[0], x[1] - self.mean[1]];
        -0.5 * (self.prec[0][0] * d[0] * d[0] + 2.0 * self.prec[0][1] * d[0] * d[1] + self.prec[1][1] * d[1] * d[1])
    }

    /// Mean by composite Simpson integration on a `m x m` mesh.
    pub fn mean_by_quadrature(&self, m: usize) -> [f64; 2] {
        let m = m + m % 2;
        let h = [(self.hi[0] - self.lo[0]) / m as f64, (self.hi[1] - self.lo[1]) / m as f64];
        let weight = |i: usize| -> f64 {
            if i == 0 || i == m {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            }
        };
        let (mut z, mut s0, mut s1) = (0.0, 0.0, 0.0);
        for i in 0..=m {
            let x = self.lo[0] + h[0] * i as f64;
            for j in 0..=m {
                let y = self.lo[1] + h[1] * j as f64;
                let w = weight(i) * weight(j) * self.log_kernel(&[x, y]).exp();
                z += w;
                s0 += w * x;
                s1 += w * y;
            }
        }
        [s0 / z, s1 / z]
    }
}

impl LogTarget for TruncatedGaussian {
    fn dim(&self) -> usize {
        2
    }

    fn contains(&self, theta: &[f64]) -> bool {
        (0..2).all(|k| self.lo[k] <= theta[k] && theta[k] <= self.hi[k])
    }

    fn log_density(&mut self, theta: &[f64]) -> Result<LogDensity> {
        Ok(if self.contains(theta) {
            LogDensity::Finite(self.log_kernel(theta))
        } else {
            LogDensity::Zero
        })
    }
}

/// Two-stage least squares of `y` on `x` with instruments `z`.
pub fn tsls(y: &DVector<f64>, x: &DMatrix<f64>, z: &DMatrix<f64>) -> DVector<f64> {
    let ztz = z.transpose() * z;
    let ztz_inv = ztz.try_inverse().expect("instruments are collinear");
    let pz_x = z * (&ztz_inv * (z.transpose() * x));
    let lhs = pz_x.transpose() * x;
    let rhs = pz_x.transpose() * y;
    lhs.lu().solve(&rhs).expect("first stage is singular")
}

/// Sample mean and standard deviation.
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}
