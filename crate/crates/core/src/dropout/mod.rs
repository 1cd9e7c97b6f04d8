//! Dropout sites: the advanced layer and fixed-rate baselines.

mod advanced;
mod baseline;
mod noise;

use serde::{Deserialize, Serialize};

pub use advanced::{
    AdvancedConfig, AdvancedDropoutLayer, EncoderKeys, EvalConditioning, NoiseSharing,
    PriorShape, ENCODER_INIT_SD, MAX_HIDDEN,
};
pub use baseline::BaselineDropout;
pub use noise::Noise;

use crate::error::Result;
use crate::tensor::{Graph, Var};

/// How a forward pass treats stochastic sites.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Sample masks and update any training-time statistics.
    Train,
    /// Deterministic: masks replaced by their expectations.
    Eval,
    /// Sample masks without touching training-time statistics.
    Sample,
}

/// One maskable position in a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DropoutSite {
    Baseline(BaselineDropout),
    Advanced(AdvancedDropoutLayer),
}

impl DropoutSite {
    pub fn forward(
        &mut self,
        g: &mut Graph,
        vars: &[Var],
        pre: Var,
        mode: Mode,
        noise: &mut Noise,
    ) -> Result<Var> {
        match self {
            DropoutSite::Baseline(b) => b.forward(g, pre, mode, noise),
            DropoutSite::Advanced(a) => a.forward(g, vars, pre, mode, noise),
        }
    }

    pub fn is_stochastic(&self) -> bool {
        match self {
            DropoutSite::Baseline(b) => b.is_stochastic(),
            DropoutSite::Advanced(_) => true,
        }
    }

    pub fn as_advanced(&self) -> Option<&AdvancedDropoutLayer> {
        match self {
            DropoutSite::Advanced(a) => Some(a),
            _ => None,
        }
    }

    pub fn as_advanced_mut(&mut self) -> Option<&mut AdvancedDropoutLayer> {
        match self {
            DropoutSite::Advanced(a) => Some(a),
            _ => None,
        }
    }
}
