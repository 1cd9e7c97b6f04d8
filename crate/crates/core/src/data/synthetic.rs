//! Small reproducible toy datasets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, Targets};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticKind {
    /// Two unit-variance Gaussian classes centred at `±(2, 2)`.
    TwoGaussians,
    /// `y = w·x + b` without noise, 4 features.
    LinearRegression,
    /// Class is the sign of `x₁·x₂`, inputs uniform on `[-1, 1]²`.
    Xor,
}

/// Weights of the noiseless linear target.
pub const LINEAR_WEIGHTS: [f64; 4] = [1.5, -2.0, 0.5, 3.0];
pub const LINEAR_BIAS: f64 = 0.25;

pub fn synthetic(kind: SyntheticKind, n: usize, seed: u64) -> Result<Dataset> {
    if n < 4 {
        return Err(Error::Argument(format!("synthetic set needs n >= 4, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match kind {
        SyntheticKind::TwoGaussians => {
            let mut x = Vec::with_capacity(2 * n);
            let mut labels = Vec::with_capacity(n);
            for i in 0..n {
                let c = i % 2;
                let centre = if c == 1 { 2.0 } else { -2.0 };
                for _ in 0..2 {
                    x.push(centre + rng.sample::<f64, _>(StandardNormal));
                }
                labels.push(c);
            }
            Dataset::new(
                Tensor::new(vec![n, 2], x)?,
                Targets::Classes {
                    labels,
                    n_classes: 2,
                },
            )
        }
        SyntheticKind::LinearRegression => {
            let d = LINEAR_WEIGHTS.len();
            let x = Tensor::from_fn(vec![n, d], |_| rng.sample(StandardNormal));
            let y = (0..n)
                .map(|i| {
                    x.row(i)
                        .iter()
                        .zip(LINEAR_WEIGHTS)
                        .map(|(a, w)| a * w)
                        .sum::<f64>()
                        + LINEAR_BIAS
                })
                .collect();
            Dataset::new(x, Targets::Values(y))
        }
        SyntheticKind::Xor => {
            let x = Tensor::from_fn(vec![n, 2], |_| rng.random_range(-1.0..1.0));
            let labels = (0..n)
                .map(|i| (x.row(i)[0] * x.row(i)[1] > 0.0) as usize)
                .collect();
            Dataset::new(
                x,
                Targets::Classes {
                    labels,
                    n_classes: 2,
                },
            )
        }
    }
}
