//! Numeric KL divergence on explicit support grids.

use super::quadrature::trapezoid;
use super::Density;
use crate::error::{Error, Result};

/// Default number of grid points.
pub const GRID_POINTS: usize = 4096;

/// Support is cut where the density falls below this fraction of its peak.
pub const TRUNCATION: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    points: Vec<f64>,
}

impl Grid {
    pub fn from_points(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 || points.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Argument(
                "grid needs at least two strictly increasing points".into(),
            ));
        }
        Ok(Grid { points })
    }

    pub fn uniform(a: f64, b: f64, n: usize) -> Result<Self> {
        if n < 2 || !(b > a) {
            return Err(Error::Argument(format!("bad uniform grid [{a}, {b}] x {n}")));
        }
        let h = (b - a) / (n - 1) as f64;
        Self::from_points((0..n).map(|i| a + h * i as f64).collect())
    }

    /// Points evenly spaced in `ln x`; `0 < a < b`.
    pub fn geometric(a: f64, b: f64, n: usize) -> Result<Self> {
        if !(a > 0.0) || !(b > a) || n < 2 {
            return Err(Error::Argument(format!("bad geometric grid [{a}, {b}] x {n}")));
        }
        let (la, lb) = (a.ln(), b.ln());
        let h = (lb - la) / (n - 1) as f64;
        Self::from_points((0..n).map(|i| (la + h * i as f64).exp()).collect())
    }

    /// Geometric grid over the part of `(lo, hi)` where `p` is within
    /// [`TRUNCATION`] of its peak, located by a coarse scan.
    pub fn positive_support(p: &impl Density, lo: f64, hi: f64, n: usize) -> Result<Self> {
        let scan = Grid::geometric(lo, hi, 8 * n)?;
        let lp: Vec<f64> = scan.points.iter().map(|&x| p.ln_pdf(x)).collect();
        let peak = lp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !peak.is_finite() {
            return Err(Error::Numerical("density has no finite peak on scan".into()));
        }
        let floor = peak + TRUNCATION.ln();
        let first = lp.iter().position(|&v| v >= floor).unwrap_or(0);
        let last = lp.iter().rposition(|&v| v >= floor).unwrap_or(lp.len() - 1);
        let a = scan.points[first.saturating_sub(1)];
        let b = scan.points[(last + 1).min(lp.len() - 1)];
        Grid::geometric(a, b, n)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }
}

/// `∫ p ln(p/q)` by the trapezoid rule on `grid`. Small negative results
/// from discretization are clipped to zero.
pub fn kl_divergence(p: &impl Density, q: &impl Density, grid: &Grid) -> Result<f64> {
    let mut ys = Vec::with_capacity(grid.points.len());
    for &x in &grid.points {
        let lp = p.ln_pdf(x);
        if lp == f64::NEG_INFINITY {
            ys.push(0.0);
            continue;
        }
        let lq = q.ln_pdf(x);
        if lq == f64::NEG_INFINITY {
            return Err(Error::Divergence(format!(
                "q vanishes at x = {x} where p = {}",
                lp.exp()
            )));
        }
        ys.push(lp.exp() * (lp - lq));
    }
    let kl = trapezoid(&grid.points, &ys);
    if !kl.is_finite() {
        return Err(Error::Numerical(format!("KL evaluated to {kl}")));
    }
    Ok(kl.max(0.0))
}
