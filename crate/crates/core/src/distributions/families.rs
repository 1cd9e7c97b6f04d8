//! Positive-support families: softplus-Gaussian, log-normal, inverse gamma.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::quadrature::integrate;
use super::Density;
use crate::error::{Error, Result};
use crate::math;

/// Standard-normal mass outside `[-Z_SPAN, Z_SPAN]` is below 1e-40.
const Z_SPAN: f64 = 13.5;

fn positive(op: &'static str, name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain {
            op,
            value: v,
            domain: name,
        })
    }
}

/// Law of `softplus(X)` with `X ~ N(m, s²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftplusGaussian {
    pub m: f64,
    pub s: f64,
}

impl SoftplusGaussian {
    pub fn new(m: f64, s: f64) -> Result<Self> {
        positive("softplus-Gaussian", "s > 0", s)?;
        Ok(SoftplusGaussian { m, s })
    }

    /// Density at `y > 0`: `N(ln(eʸ − 1); m, s²) · eʸ / (eʸ − 1)`.
    pub fn pdf(&self, y: f64) -> Result<f64> {
        positive("softplus-Gaussian pdf", "y > 0", y)?;
        Ok(self.ln_pdf(y).exp())
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        (0..n)
            .map(|_| {
                let eps: f64 = rng.sample(StandardNormal);
                math::softplus(self.m + self.s * eps).max(f64::MIN_POSITIVE)
            })
            .collect()
    }

    /// `E[softplus(X)^p]` by quadrature over the Gaussian input.
    fn raw_moment(&self, p: i32) -> Result<f64> {
        let q = integrate(
            |z| math::softplus(self.m + self.s * z).powi(p) * math::normal_pdf(z, 0.0, 1.0),
            -Z_SPAN,
            Z_SPAN,
            0.0,
            1e-13,
        )?;
        Ok(q.value)
    }

    /// Mean and variance, computed numerically.
    pub fn moments(&self) -> Result<(f64, f64)> {
        let m1 = self.raw_moment(1)?;
        let m2 = self.raw_moment(2)?;
        Ok((m1, (m2 - m1 * m1).max(0.0)))
    }
}

impl Density for SoftplusGaussian {
    fn ln_pdf(&self, y: f64) -> f64 {
        if !(y > 0.0) {
            return f64::NEG_INFINITY;
        }
        let u = math::softplus_inv(y);
        // d/dy softplus⁻¹(y) = 1 / (1 − e^(−y))
        let ln_jac = -(-(-y).exp_m1()).ln();
        math::normal_ln_pdf(u, self.m, self.s) + ln_jac
    }
}

/// Law of `exp(X)` with `X ~ N(m, s²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogNormal {
    pub m: f64,
    pub s: f64,
}

impl LogNormal {
    pub fn new(m: f64, s: f64) -> Result<Self> {
        positive("log-normal", "s > 0", s)?;
        Ok(LogNormal { m, s })
    }

    pub fn mean(&self) -> f64 {
        (self.m + 0.5 * self.s * self.s).exp()
    }

    pub fn variance(&self) -> f64 {
        let s2 = self.s * self.s;
        s2.exp_m1() * (2.0 * self.m + s2).exp()
    }

    pub fn mode(&self) -> f64 {
        (self.m - self.s * self.s).exp()
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        (0..n)
            .map(|_| {
                let eps: f64 = rng.sample(StandardNormal);
                (self.m + self.s * eps).exp()
            })
            .collect()
    }
}

impl Density for LogNormal {
    fn ln_pdf(&self, y: f64) -> f64 {
        if !(y > 0.0) {
            return f64::NEG_INFINITY;
        }
        let ly = y.ln();
        math::normal_ln_pdf(ly, self.m, self.s) - ly
    }
}

/// Inverse gamma with shape `k` and scale `theta`:
/// `p(x) = θᵏ / Γ(k) · x^(−k−1) · e^(−θ/x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InverseGamma {
    pub k: f64,
    pub theta: f64,
}

impl InverseGamma {
    pub fn new(k: f64, theta: f64) -> Result<Self> {
        positive("inverse gamma", "k > 0", k)?;
        positive("inverse gamma", "theta > 0", theta)?;
        Ok(InverseGamma { k, theta })
    }

    pub fn mean(&self) -> Result<f64> {
        if self.k <= 1.0 {
            return Err(Error::UndefinedMoments(format!(
                "inverse gamma mean needs k > 1, got k = {}",
                self.k
            )));
        }
        Ok(self.theta / (self.k - 1.0))
    }

    pub fn variance(&self) -> Result<f64> {
        if self.k <= 2.0 {
            return Err(Error::UndefinedMoments(format!(
                "inverse gamma variance needs k > 2, got k = {}",
                self.k
            )));
        }
        let km1 = self.k - 1.0;
        Ok(self.theta * self.theta / (km1 * km1 * (self.k - 2.0)))
    }

    pub fn mode(&self) -> f64 {
        self.theta / (self.k + 1.0)
    }
}

impl Density for InverseGamma {
    fn ln_pdf(&self, x: f64) -> f64 {
        if !(x > 0.0) {
            return f64::NEG_INFINITY;
        }
        self.k * self.theta.ln() - math::ln_gamma(self.k) - (self.k + 1.0) * x.ln() - self.theta / x
    }
}
