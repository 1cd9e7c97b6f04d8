//! Probability machinery for masks and for the prior-approximation study.

mod families;
mod fit;
mod kl;
mod model_free;
pub mod quadrature;

pub use families::{InverseGamma, LogNormal, SoftplusGaussian};
pub use fit::{
    compare_approximations, fit, mode_match, moment_match, ApproximationRow, Family, FitMethod,
    Fitted, FittedDist,
};
pub use kl::{kl_divergence, Grid, GRID_POINTS, TRUNCATION};
pub use model_free::{mean_mask, Mapping, ModelFreeDist, MASK_EPS, SIGMA_FLOOR};

/// A univariate density known through its log.
pub trait Density {
    /// `ln p(x)`; `-inf` outside the support.
    fn ln_pdf(&self, x: f64) -> f64;

    fn density(&self, x: f64) -> f64 {
        self.ln_pdf(x).exp()
    }
}

impl<D: Density + ?Sized> Density for &D {
    fn ln_pdf(&self, x: f64) -> f64 {
        (**self).ln_pdf(x)
    }
}

/// A Gaussian, mostly useful as a test density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normal {
    pub mean: f64,
    pub sd: f64,
}

impl Density for Normal {
    fn ln_pdf(&self, x: f64) -> f64 {
        crate::math::normal_ln_pdf(x, self.mean, self.sd)
    }
}
