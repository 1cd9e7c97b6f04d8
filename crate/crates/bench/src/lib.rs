//! Shared fixtures for the benchmarks.

use advdrop::data::{Dataset, Targets};
use advdrop::network::{DropoutPolicy, FcSpec, Model};
use advdrop::Tensor;

/// Deterministic pseudo-random matrix with entries in [-1, 1).
pub fn matrix(rows: usize, cols: usize, salt: u64) -> Tensor {
    Tensor::from_fn(vec![rows, cols], |i| {
        let h = (i as u64 ^ salt).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        (h >> 11) as f64 / (1u64 << 52) as f64 - 1.0
    })
}

/// A fake MNIST-shaped batch.
pub fn mnist_batch(n: usize) -> Dataset {
    let x = matrix(n, 784, 1).map(|v| 0.5 * (v + 1.0));
    let labels = (0..n).map(|i| i % 10).collect();
    Dataset::new(x, Targets::Classes { labels, n_classes: 10 }).expect("valid batch")
}

pub fn mnist_fc(dropout: DropoutPolicy) -> Model {
    Model::build(FcSpec::new(vec![784, 800, 800, 10], dropout, true), 0).expect("valid spec")
}
