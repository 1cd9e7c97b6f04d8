//! The model-free mask distribution: a Gaussian seed pushed through a
//! monotone mapping into `(0, 1)`.
//!
//! With the sigmoid mapping, `m = sigmoid(r)` and `r ~ N(mu, sigma²)`, so the
//! mask is logit-normal. Its density follows from the change of variables
//! `g(m) = N(logit m; mu, sigma²) · 1/(m(1 − m))`, and its mean is approximated
//! in closed form through the probit approximation of the sigmoid.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Density;
use crate::error::{Error, Result};
use crate::math;

/// Lower bound applied to every seed standard deviation.
pub const SIGMA_FLOOR: f64 = 1e-4;

/// Samples are kept inside `[MASK_EPS, 1 − MASK_EPS]`.
pub const MASK_EPS: f64 = 1e-12;

/// Monotone map from the seed's real line into `(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Mapping {
    #[default]
    Sigmoid,
}

impl Mapping {
    pub fn apply(self, r: f64) -> f64 {
        match self {
            Mapping::Sigmoid => math::sigmoid(r),
        }
    }

    pub fn inverse(self, m: f64) -> f64 {
        match self {
            Mapping::Sigmoid => math::logit(m),
        }
    }

    /// `d k⁻¹(m) / dm`
    pub fn inverse_derivative(self, m: f64) -> f64 {
        match self {
            Mapping::Sigmoid => 1.0 / (m * (1.0 - m)),
        }
    }

    /// `ln(d k⁻¹(m) / dm)`, finite even where the derivative overflows.
    pub fn ln_inverse_derivative(self, m: f64) -> f64 {
        match self {
            Mapping::Sigmoid => -(m.ln() + (-m).ln_1p()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelFreeDist {
    pub mu: f64,
    sigma: f64,
    pub mapping: Mapping,
}

impl ModelFreeDist {
    /// Sigmoid-mapped Gaussian seed; `sigma` is raised to [`SIGMA_FLOOR`].
    pub fn new(mu: f64, sigma: f64) -> Self {
        ModelFreeDist {
            mu,
            sigma: sigma.max(SIGMA_FLOOR),
            mapping: Mapping::Sigmoid,
        }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Draws `n` masks `k(mu + sigma·ε)`, `ε ~ N(0, 1)`.
    pub fn sample_mask<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        (0..n)
            .map(|_| {
                let eps: f64 = rng.sample(StandardNormal);
                self.mapping
                    .apply(self.mu + self.sigma * eps)
                    .clamp(MASK_EPS, 1.0 - MASK_EPS)
            })
            .collect()
    }

    pub fn pdf(&self, m: f64) -> Result<f64> {
        self.ln_pdf_checked(m).map(f64::exp)
    }

    fn ln_pdf_checked(&self, m: f64) -> Result<f64> {
        if !(m > 0.0 && m < 1.0) {
            return Err(Error::Domain {
                op: "model-free pdf",
                value: m,
                domain: "0 < m < 1",
            });
        }
        let r = self.mapping.inverse(m);
        Ok(math::normal_ln_pdf(r, self.mu, self.sigma)
            + self.mapping.ln_inverse_derivative(m))
    }

    /// Approximate expectation of the mask, see [`mean_mask`].
    pub fn mean(&self) -> f64 {
        mean_mask(self.mu, self.sigma)
    }

    /// Dropout rate `1 − E[m]`.
    pub fn dropout_rate(&self) -> f64 {
        1.0 - self.mean()
    }
}

impl Density for ModelFreeDist {
    fn ln_pdf(&self, x: f64) -> f64 {
        self.ln_pdf_checked(x).unwrap_or(f64::NEG_INFINITY)
    }
}

/// `E[sigmoid(r)]` for `r ~ N(mu, sigma²)`, approximated by
/// `sigmoid(mu / sqrt(1 + π σ² / 8))`.
pub fn mean_mask(mu: f64, sigma: f64) -> f64 {
    math::probit_sigmoid_mean(mu, sigma.max(SIGMA_FLOOR))
}
