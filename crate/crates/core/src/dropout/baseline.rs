//! Fixed-rate multiplicative dropouts used as baselines.

use serde::{Deserialize, Serialize};

use super::{Mode, Noise};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Var};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum BaselineDropout {
    #[default]
    None,
    /// Keeps each unit with probability `p`; eval scales by `p`.
    Bernoulli { p: f64 },
    /// Multiplies by `N(1, v)` noise; identity in eval.
    Gaussian { v: f64 },
}

impl BaselineDropout {
    pub fn validate(&self) -> Result<()> {
        match *self {
            BaselineDropout::Bernoulli { p } if !(p > 0.0 && p < 1.0) => Err(Error::Argument(
                format!("bernoulli keep probability must be in (0, 1), got {p}"),
            )),
            BaselineDropout::Gaussian { v } if !(v > 0.0 && v.is_finite()) => Err(
                Error::Argument(format!("gaussian dropout variance must be positive, got {v}")),
            ),
            _ => Ok(()),
        }
    }

    pub fn is_stochastic(&self) -> bool {
        !matches!(self, BaselineDropout::None)
    }

    pub fn forward(&self, g: &mut Graph, pre: Var, mode: Mode, noise: &mut Noise) -> Result<Var> {
        let shape = g.value(pre).shape().to_vec();
        match (*self, mode) {
            (BaselineDropout::None, _) => Ok(pre),
            (BaselineDropout::Bernoulli { p }, Mode::Eval) => Ok(g.scale(pre, p)),
            (BaselineDropout::Gaussian { .. }, Mode::Eval) => Ok(pre),
            (BaselineDropout::Bernoulli { p }, _) => {
                let u = noise.uniform(&shape)?;
                let m = g.constant(u.map(|u| if u < p { 1.0 } else { 0.0 }));
                g.mul(m, pre)
            }
            (BaselineDropout::Gaussian { v }, _) => {
                let sd = v.sqrt();
                let e = noise.normal(&shape)?;
                let m = g.constant(e.map(|e| 1.0 + sd * e));
                g.mul(m, pre)
            }
        }
    }
}
