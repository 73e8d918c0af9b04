//! Penalties `P_nu(t) = nu * rho(t; nu)` on the Lagrange multiplier.
//!
//! Members must have `rho(0) = 0`, be increasing on `[0, inf)` and have a
//! right derivative at zero that does not depend on `nu`. The inner solver
//! additionally needs convexity, which custom penalties are checked for on
//! construction.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use core::fmt;

use crate::error::{Error, Result};

/// Shape function `rho(t; nu)` or one of its derivatives.
pub type ShapeFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PenaltyKind {
    L1,
    Custom,
}

#[derive(Clone)]
enum Shape {
    L1,
    Custom {
        rho: ShapeFn,
        rho_prime: ShapeFn,
        rho_second: ShapeFn,
        rho_prime_at_zero: f64,
    },
}

#[derive(Clone)]
pub struct PenaltySpec {
    nu: f64,
    shape: Shape,
}

impl fmt::Debug for PenaltySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PenaltySpec")
            .field("kind", &self.kind())
            .field("nu", &self.nu)
            .finish()
    }
}

/// A closed interval `[lo, hi]`; a singleton when `lo == hi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn point(x: f64) -> Self {
        Self { lo: x, hi: x }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn distance(&self, x: f64) -> f64 {
        if x < self.lo {
            self.lo - x
        } else if x > self.hi {
            x - self.hi
        } else {
            0.0
        }
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }
}

fn check_nu(nu: f64) -> Result<()> {
    if nu.is_finite() && nu > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("penalty level nu must be positive and finite, got {nu}")))
    }
}

impl PenaltySpec {
    pub fn l1(nu: f64) -> Result<Self> {
        check_nu(nu)?;
        Ok(Self { nu, shape: Shape::L1 })
    }

    /// A user-supplied convex member of the class. The shape is probed on a
    /// grid over `[0, probe_max]` for `rho(0) = 0`, monotonicity and midpoint
    /// convexity.
    pub fn custom(
        nu: f64,
        rho: ShapeFn,
        rho_prime: ShapeFn,
        rho_second: ShapeFn,
        rho_prime_at_zero: f64,
        probe_max: f64,
    ) -> Result<Self> {
        check_nu(nu)?;
        if !(rho_prime_at_zero.is_finite() && rho_prime_at_zero > 0.0) {
            return Err(Error::Config(format!(
                "rho'(0+) must be positive and finite, got {rho_prime_at_zero}"
            )));
        }
        if rho(0.0, nu) != 0.0 {
            return Err(Error::Config(String::from("rho(0) must be 0")));
        }
        const STEPS: usize = 200;
        let h = probe_max / STEPS as f64;
        let mut prev = 0.0;
        for k in 1..=STEPS {
            let t = k as f64 * h;
            let v = rho(t, nu);
            if !v.is_finite() || v < prev {
                return Err(Error::Config(format!("rho is not increasing near t = {t}")));
            }
            if k >= 2 {
                let mid = rho(t - h, nu);
                let lo = rho(t - 2.0 * h, nu);
                if 2.0 * mid > lo + v + 1e-12 * (1.0 + v.abs()) {
                    return Err(Error::Config(format!("rho is not convex near t = {}", t - h)));
                }
            }
            prev = v;
        }
        Ok(Self {
            nu,
            shape: Shape::Custom {
                rho,
                rho_prime,
                rho_second,
                rho_prime_at_zero,
            },
        })
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn kind(&self) -> PenaltyKind {
        match self.shape {
            Shape::L1 => PenaltyKind::L1,
            Shape::Custom { .. } => PenaltyKind::Custom,
        }
    }

    /// Same shape at a different penalty level.
    pub fn with_nu(&self, nu: f64) -> Result<Self> {
        check_nu(nu)?;
        Ok(Self {
            nu,
            shape: self.shape.clone(),
        })
    }

    #[inline]
    pub fn rho(&self, t: f64) -> f64 {
        match &self.shape {
            Shape::L1 => t,
            Shape::Custom { rho, .. } => rho(t, self.nu),
        }
    }

    #[inline]
    pub fn rho_prime(&self, t: f64) -> f64 {
        match &self.shape {
            Shape::L1 => 1.0,
            Shape::Custom { rho_prime, .. } => rho_prime(t, self.nu),
        }
    }

    #[inline]
    pub fn rho_second(&self, t: f64) -> f64 {
        match &self.shape {
            Shape::L1 => 0.0,
            Shape::Custom { rho_second, .. } => rho_second(t, self.nu),
        }
    }

    #[inline]
    pub fn rho_prime_at_zero(&self) -> f64 {
        match &self.shape {
            Shape::L1 => 1.0,
            Shape::Custom { rho_prime_at_zero, .. } => *rho_prime_at_zero,
        }
    }

    /// `nu * rho'(0+)`, the half-width of the subdifferential at zero.
    #[inline]
    pub fn threshold(&self) -> f64 {
        self.nu * self.rho_prime_at_zero()
    }

    /// `P_nu(|t|)` for a single coordinate.
    #[inline]
    pub fn coordinate_value(&self, t: f64) -> f64 {
        self.nu * self.rho(t.abs())
    }

    /// `sum_j P_nu(|lambda_j|)`.
    pub fn value(&self, lambda: &[f64]) -> f64 {
        match self.shape {
            Shape::L1 => self.nu * lambda.iter().map(|l| l.abs()).sum::<f64>(),
            Shape::Custom { .. } => lambda.iter().map(|l| self.coordinate_value(*l)).sum(),
        }
    }

    /// Subdifferential of `t -> P_nu(|t|)` at `lambda_j`.
    pub fn subgradient_interval(&self, lambda_j: f64) -> Interval {
        if lambda_j == 0.0 {
            let w = self.threshold();
            Interval { lo: -w, hi: w }
        } else {
            Interval::point(self.nu * self.rho_prime(lambda_j.abs()) * lambda_j.signum())
        }
    }
}
