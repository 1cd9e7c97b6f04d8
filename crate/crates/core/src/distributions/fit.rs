//! Fitting softplus-Gaussian and log-normal approximations to an inverse
//! gamma target, and comparing them by KL divergence.

use serde::{Deserialize, Serialize};

use super::families::{InverseGamma, LogNormal, SoftplusGaussian};
use super::kl::{kl_divergence, Grid, GRID_POINTS};
use super::Density;
use crate::error::{Error, Result};
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    SoftplusGaussian,
    LogNormal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum FittedDist {
    SoftplusGaussian(SoftplusGaussian),
    LogNormal(LogNormal),
}

impl FittedDist {
    pub fn params(&self) -> (f64, f64) {
        match self {
            FittedDist::SoftplusGaussian(d) => (d.m, d.s),
            FittedDist::LogNormal(d) => (d.m, d.s),
        }
    }

    pub fn moments(&self) -> Result<(f64, f64)> {
        match self {
            FittedDist::SoftplusGaussian(d) => d.moments(),
            FittedDist::LogNormal(d) => Ok((d.mean(), d.variance())),
        }
    }
}

impl Density for FittedDist {
    fn ln_pdf(&self, x: f64) -> f64 {
        match self {
            FittedDist::SoftplusGaussian(d) => d.ln_pdf(x),
            FittedDist::LogNormal(d) => d.ln_pdf(x),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitMethod {
    Moments,
    /// Target moments do not exist; mode location and height were matched.
    Mode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fitted {
    pub dist: FittedDist,
    pub method: FitMethod,
}

/// Matches mean and variance of `target`. Requires `k > 2`.
pub fn moment_match(target: &InverseGamma, family: Family) -> Result<FittedDist> {
    let mean = target.mean()?;
    let var = target.variance()?;
    let cv2 = var / (mean * mean);
    let s_ln = cv2.ln_1p().sqrt();
    let m_ln = mean.ln() - 0.5 * cv2.ln_1p();
    match family {
        Family::LogNormal => Ok(FittedDist::LogNormal(LogNormal::new(m_ln, s_ln)?)),
        Family::SoftplusGaussian => {
            // softplus(x) ≈ eˣ far left and ≈ x far right
            let start = if mean < 1.0 {
                (m_ln, s_ln)
            } else {
                (math::softplus_inv(mean), var.sqrt())
            };
            solve_softplus_moments(mean, var, start).map(FittedDist::SoftplusGaussian)
        }
    }
}

fn solve_softplus_moments(mean: f64, var: f64, start: (f64, f64)) -> Result<SoftplusGaussian> {
    let residual = |m: f64, ls: f64| -> Result<[f64; 2]> {
        let (fm, fv) = SoftplusGaussian::new(m, ls.exp())?.moments()?;
        Ok([fm / mean - 1.0, fv / var - 1.0])
    };
    let norm = |r: &[f64; 2]| r[0].abs().max(r[1].abs());
    let (mut m, mut ls) = (start.0, start.1.ln());
    let mut r = residual(m, ls)?;
    for _ in 0..100 {
        if norm(&r) < 1e-10 {
            break;
        }
        let h = 1e-6;
        let rm = residual(m + h, ls)?;
        let rs = residual(m, ls + h)?;
        let j = [
            [(rm[0] - r[0]) / h, (rs[0] - r[0]) / h],
            [(rm[1] - r[1]) / h, (rs[1] - r[1]) / h],
        ];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if det == 0.0 || !det.is_finite() {
            break;
        }
        let dm = -(j[1][1] * r[0] - j[0][1] * r[1]) / det;
        let ds = -(-j[1][0] * r[0] + j[0][0] * r[1]) / det;
        let mut t = 1.0;
        loop {
            let trial = residual(m + t * dm, ls + t * ds)?;
            if norm(&trial) < norm(&r) {
                m += t * dm;
                ls += t * ds;
                r = trial;
                break;
            }
            t *= 0.5;
            if t < 1e-8 {
                break;
            }
        }
        if t < 1e-8 {
            break;
        }
    }
    if norm(&r) > 1e-6 {
        return Err(Error::Numerical(format!(
            "softplus-Gaussian moment match stalled at relative residual {:e}",
            norm(&r)
        )));
    }
    SoftplusGaussian::new(m, ls.exp())
}

/// Root of a decreasing function of `ln s` by bisection.
fn bisect_ln_s(f: impl Fn(f64) -> f64) -> Result<f64> {
    let (mut lo, mut hi) = (-30.0_f64, 10.0_f64);
    if !(f(lo) > 0.0 && f(hi) < 0.0) {
        return Err(Error::Numerical("mode match has no bracketed root".into()));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}

/// Matches the location of the target's mode and the density there.
pub fn mode_match(target: &InverseGamma, family: Family) -> Result<FittedDist> {
    let y0 = target.mode();
    let ln_f0 = target.ln_pdf(y0);
    let ln_sqrt_2pi = math::LN_SQRT_2PI;
    match family {
        Family::LogNormal => {
            // mode e^(m − s²), height e^(−s²/2) / (s y₀ √2π)
            let rhs = ln_f0 + y0.ln() + ln_sqrt_2pi;
            let s = bisect_ln_s(|ls| {
                let s = ls.exp();
                -0.5 * s * s - ls - rhs
            })?;
            Ok(FittedDist::LogNormal(LogNormal::new(y0.ln() + s * s, s)?))
        }
        Family::SoftplusGaussian => {
            // stationarity gives softplus⁻¹(y₀) − m = −s² e^(−y₀)
            let u0 = math::softplus_inv(y0);
            let ln_jac = -(-(-y0).exp_m1()).ln();
            let c = (-2.0 * y0).exp();
            let rhs = ln_f0 + ln_sqrt_2pi - ln_jac;
            let s = bisect_ln_s(|ls| {
                let s = ls.exp();
                -0.5 * s * s * c - ls - rhs
            })?;
            Ok(FittedDist::SoftplusGaussian(SoftplusGaussian::new(
                u0 + s * s * (-y0).exp(),
                s,
            )?))
        }
    }
}

/// Moment match when the target's moments exist, otherwise match its mode.
pub fn fit(target: &InverseGamma, family: Family) -> Result<Fitted> {
    match moment_match(target, family) {
        Ok(dist) => Ok(Fitted {
            dist,
            method: FitMethod::Moments,
        }),
        Err(Error::UndefinedMoments(_)) => Ok(Fitted {
            dist: mode_match(target, family)?,
            method: FitMethod::Mode,
        }),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApproximationRow {
    pub k: f64,
    pub theta: f64,
    pub method: FitMethod,
    pub softplus_gaussian: (f64, f64),
    pub log_normal: (f64, f64),
    pub kl_softplus_gaussian: f64,
    pub kl_log_normal: f64,
}

impl ApproximationRow {
    pub fn softplus_gaussian_wins(&self) -> bool {
        self.kl_softplus_gaussian < self.kl_log_normal
    }
}

/// Fits both families to each `(k, θ)` target and reports `KL(target ‖ fit)`.
pub fn compare_approximations(targets: &[(f64, f64)]) -> Result<Vec<ApproximationRow>> {
    targets
        .iter()
        .map(|&(k, theta)| {
            let ig = InverseGamma::new(k, theta)?;
            let sg = fit(&ig, Family::SoftplusGaussian)?;
            let ln = fit(&ig, Family::LogNormal)?;
            let mode = ig.mode();
            let grid = Grid::positive_support(&ig, mode * 1e-6, mode * 1e14, GRID_POINTS)?;
            Ok(ApproximationRow {
                k,
                theta,
                method: sg.method,
                softplus_gaussian: sg.dist.params(),
                log_normal: ln.dist.params(),
                kl_softplus_gaussian: kl_divergence(&ig, &sg.dist, &grid)?,
                kl_log_normal: kl_divergence(&ig, &ln.dist, &grid)?,
            })
        })
        .collect()
}
