//! Sources of the parameter-free noise behind every stochastic mask.
//!
//! Recording and replaying let a test freeze the noise of one forward pass
//! and evaluate the same network again, for example under finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub enum Noise {
    /// Fresh draws from a seeded generator.
    Rng(ChaCha8Rng),
    /// Fresh draws that are also kept for later replay.
    Record { rng: ChaCha8Rng, tape: Vec<Tensor> },
    /// Hands back recorded draws in order.
    Replay { tape: Vec<Tensor>, pos: usize },
    /// Gaussian draws are 0 and uniform draws are 0.5.
    Zero,
}

impl Noise {
    pub fn seeded(seed: u64) -> Self {
        Noise::Rng(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn recording(seed: u64) -> Self {
        Noise::Record {
            rng: ChaCha8Rng::seed_from_u64(seed),
            tape: Vec::new(),
        }
    }

    pub fn replay(tape: Vec<Tensor>) -> Self {
        Noise::Replay { tape, pos: 0 }
    }

    /// Recorded draws so far (empty for other variants).
    pub fn tape(&self) -> &[Tensor] {
        match self {
            Noise::Record { tape, .. } | Noise::Replay { tape, .. } => tape,
            _ => &[],
        }
    }

    pub fn into_tape(self) -> Vec<Tensor> {
        match self {
            Noise::Record { tape, .. } | Noise::Replay { tape, .. } => tape,
            _ => Vec::new(),
        }
    }

    /// Rewinds a replay to its first draw.
    pub fn rewind(&mut self) {
        if let Noise::Replay { pos, .. } = self {
            *pos = 0;
        }
    }

    /// Standard normal draws of the given shape.
    pub fn normal(&mut self, shape: &[usize]) -> Result<Tensor> {
        self.draw(shape, 0.0, |rng| rng.sample(StandardNormal))
    }

    /// Uniform draws on `[0, 1)` of the given shape.
    pub fn uniform(&mut self, shape: &[usize]) -> Result<Tensor> {
        self.draw(shape, 0.5, |rng| rng.random::<f64>())
    }

    fn draw(
        &mut self,
        shape: &[usize],
        neutral: f64,
        mut f: impl FnMut(&mut ChaCha8Rng) -> f64,
    ) -> Result<Tensor> {
        match self {
            Noise::Rng(rng) => Ok(Tensor::from_fn(shape.to_vec(), |_| f(rng))),
            Noise::Record { rng, tape } => {
                let t = Tensor::from_fn(shape.to_vec(), |_| f(rng));
                tape.push(t.clone());
                Ok(t)
            }
            Noise::Replay { tape, pos } => {
                let t = tape
                    .get(*pos)
                    .ok_or_else(|| Error::State(format!("noise tape exhausted after {pos} draws")))?;
                if t.shape() != shape {
                    return Err(Error::shape("noise replay", t.shape(), shape));
                }
                *pos += 1;
                Ok(t.clone())
            }
            Noise::Zero => Ok(Tensor::full(shape.to_vec(), neutral)),
        }
    }
}
