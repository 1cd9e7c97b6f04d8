//! Advanced dropout: logit-normal masks whose parameters come from small
//! encoders conditioned on the masked features.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Mode, Noise};
use crate::distributions::{mean_mask, SIGMA_FLOOR};
use crate::error::{Error, Result};
use crate::math;
use crate::params::{ParamGroup, ParamStore};
use crate::tensor::{Graph, Tensor, Var};

/// Largest encoder hidden width.
pub const MAX_HIDDEN: usize = 64;

/// Standard deviation of the encoder weight initialisation.
pub const ENCODER_INIT_SD: f64 = 0.01;

/// Whether `mu`/`sigma` have one entry per node or one for the whole layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorShape {
    #[default]
    PerNode,
    PerLayer,
}

/// Whether each sample draws its own noise or the batch shares one draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseSharing {
    #[default]
    PerSample,
    PerBatch,
}

/// Where the eval-mode `mu`/`sigma` come from.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum EvalConditioning {
    /// Encoders applied to the evaluated batch.
    #[default]
    Batch,
    /// Exponential moving average of training-time values.
    Running { momentum: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdvancedConfig {
    pub init_mu: f64,
    pub init_sigma: f64,
    #[serde(default)]
    pub prior_shape: PriorShape,
    #[serde(default)]
    pub noise: NoiseSharing,
    #[serde(default)]
    pub eval: EvalConditioning,
}

impl Default for AdvancedConfig {
    fn default() -> Self {
        AdvancedConfig {
            init_mu: 0.0,
            init_sigma: 3.0,
            prior_shape: PriorShape::PerNode,
            noise: NoiseSharing::PerSample,
            eval: EvalConditioning::Batch,
        }
    }
}

/// Parameter keys of one layer's encoders inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderKeys {
    pub w_h: usize,
    pub b_h: usize,
    pub w_mu: usize,
    pub b_mu: usize,
    pub w_sigma: usize,
    pub b_sigma: usize,
}

impl EncoderKeys {
    pub fn all(&self) -> [usize; 6] {
        [
            self.w_h,
            self.b_h,
            self.w_mu,
            self.b_mu,
            self.w_sigma,
            self.b_sigma,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvancedDropoutLayer {
    in_dim: usize,
    hidden_dim: usize,
    keys: EncoderKeys,
    config: AdvancedConfig,
    last_mu: Option<Tensor>,
    last_sigma: Option<Tensor>,
    running: Option<(Tensor, Tensor)>,
}

impl AdvancedDropoutLayer {
    /// Registers encoder parameters under `name` and returns the layer.
    ///
    /// Encoder weights start at `N(0, 0.01²)`; `b_mu = init_mu` and
    /// `b_sigma = softplus⁻¹(init_sigma)`, so the first masks follow
    /// roughly `(init_mu, init_sigma)`.
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        in_dim: usize,
        config: AdvancedConfig,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self> {
        if in_dim == 0 {
            return Err(Error::Argument("dropout site with zero width".into()));
        }
        if !(config.init_sigma > 0.0) {
            return Err(Error::Argument(format!(
                "init_sigma must be positive, got {}",
                config.init_sigma
            )));
        }
        let h = in_dim.min(MAX_HIDDEN);
        let out = match config.prior_shape {
            PriorShape::PerNode => in_dim,
            PriorShape::PerLayer => 1,
        };
        let normal = Normal::new(0.0, ENCODER_INIT_SD).expect("valid sd");
        let mut gauss = |shape: Vec<usize>| Tensor::from_fn(shape, |_| normal.sample(rng));
        let lam = ParamGroup::Lambda;
        let keys = EncoderKeys {
            w_h: store.add(format!("{name}.w_h"), lam, gauss(vec![h, in_dim])),
            b_h: store.add(format!("{name}.b_h"), lam, Tensor::zeros(vec![h])),
            w_mu: store.add(format!("{name}.w_mu"), lam, gauss(vec![out, h])),
            b_mu: store.add(
                format!("{name}.b_mu"),
                lam,
                Tensor::full(vec![out], config.init_mu),
            ),
            w_sigma: store.add(format!("{name}.w_sigma"), lam, gauss(vec![out, h])),
            b_sigma: store.add(
                format!("{name}.b_sigma"),
                lam,
                Tensor::full(vec![out], math::softplus_inv(config.init_sigma)),
            ),
        };
        Ok(AdvancedDropoutLayer {
            in_dim,
            hidden_dim: h,
            keys,
            config,
            last_mu: None,
            last_sigma: None,
            running: None,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn keys(&self) -> &EncoderKeys {
        &self.keys
    }

    pub fn config(&self) -> &AdvancedConfig {
        &self.config
    }

    pub fn last_mu(&self) -> Option<&Tensor> {
        self.last_mu.as_ref()
    }

    pub fn last_sigma(&self) -> Option<&Tensor> {
        self.last_sigma.as_ref()
    }

    /// Running `(mu, sigma)` used by [`EvalConditioning::Running`].
    pub fn running(&self) -> Option<&(Tensor, Tensor)> {
        self.running.as_ref()
    }

    pub fn set_running(&mut self, running: Option<(Tensor, Tensor)>) -> Result<()> {
        if let Some((mu, sigma)) = &running {
            let k = self.in_dim;
            for t in [mu, sigma] {
                if t.shape() != [k] {
                    return Err(Error::shape("running statistics", t.shape(), &[k]));
                }
            }
        }
        self.running = running;
        Ok(())
    }

    /// Clears telemetry and running averages, as for a freshly built layer.
    pub fn reset_state(&mut self) {
        self.last_mu = None;
        self.last_sigma = None;
        self.running = None;
    }

    /// Encoders applied to the features `x: [N×K]`; returns `(mu, sigma)`,
    /// both `[K]` and differentiable with respect to the encoders and `x`.
    ///
    /// `h = W_h x + b_h`, `mu = mean_n(W_mu h + b_mu)`,
    /// `sigma = max(mean_n softplus(W_sigma h + b_sigma), 1e-4)`.
    pub fn prior_params(&mut self, g: &mut Graph, vars: &[Var], x: Var) -> Result<(Var, Var)> {
        let (n, k) = g.value(x).dims2()?;
        if n == 0 {
            return Err(Error::EmptyBatch("prior_params"));
        }
        if k != self.in_dim {
            return Err(Error::shape("prior_params", &[n, k], &[n, self.in_dim]));
        }
        let kk = &self.keys;
        let h = g.matmul_t(x, vars[kk.w_h])?;
        let h = g.bias_add(h, vars[kk.b_h])?;

        let mu = g.matmul_t(h, vars[kk.w_mu])?;
        let mu = g.bias_add(mu, vars[kk.b_mu])?;
        let mu = g.mean(mu, Some(0))?;

        let s = g.matmul_t(h, vars[kk.w_sigma])?;
        let s = g.bias_add(s, vars[kk.b_sigma])?;
        let s = g.softplus(s);
        let s = g.mean(s, Some(0))?;
        let sigma = g.clamp_min(s, SIGMA_FLOOR);

        let (mu, sigma) = match self.config.prior_shape {
            PriorShape::PerNode => (mu, sigma),
            PriorShape::PerLayer => {
                let mu = g.broadcast_rows(mu, k)?;
                let sigma = g.broadcast_rows(sigma, k)?;
                (g.reshape(mu, vec![k])?, g.reshape(sigma, vec![k])?)
            }
        };
        self.last_mu = Some(g.value(mu).clone());
        self.last_sigma = Some(g.value(sigma).clone());
        Ok((mu, sigma))
    }

    /// Applies the masks to `pre: [N×K]`, the linear output of the layer.
    ///
    /// Stochastic modes return `sigmoid(mu + sigma·ε) ⊙ pre`; eval mode
    /// returns `E[m] ⊙ pre` without sampling.
    pub fn forward(
        &mut self,
        g: &mut Graph,
        vars: &[Var],
        pre: Var,
        mode: Mode,
        noise: &mut Noise,
    ) -> Result<Var> {
        let (n, _) = g.value(pre).dims2()?;
        if mode == Mode::Eval {
            if let EvalConditioning::Running { .. } = self.config.eval {
                if let Some((mu, sigma)) = &self.running {
                    let mask = mean_mask_tensor(mu, sigma)?;
                    let m = g.constant(mask);
                    let m = g.broadcast_rows(m, n)?;
                    return g.mul(m, pre);
                }
            }
        }
        let (mu, sigma) = self.prior_params(g, vars, pre)?;
        match mode {
            Mode::Eval => {
                let mask = mean_mask_tensor(g.value(mu), g.value(sigma))?;
                let m = g.constant(mask);
                let m = g.broadcast_rows(m, n)?;
                g.mul(m, pre)
            }
            Mode::Train | Mode::Sample => {
                if mode == Mode::Train {
                    self.update_running(g.value(mu), g.value(sigma))?;
                }
                let k = self.in_dim;
                let eps = match self.config.noise {
                    NoiseSharing::PerSample => noise.normal(&[n, k])?,
                    NoiseSharing::PerBatch => {
                        let e = noise.normal(&[k])?;
                        let mut rows = Vec::with_capacity(n * k);
                        for _ in 0..n {
                            rows.extend_from_slice(e.data());
                        }
                        Tensor::new(vec![n, k], rows)?
                    }
                };
                let eps = g.constant(eps);
                let mu_rows = g.broadcast_rows(mu, n)?;
                let sigma_rows = g.broadcast_rows(sigma, n)?;
                let spread = g.mul(sigma_rows, eps)?;
                let r = g.add(mu_rows, spread)?;
                let m = g.sigmoid(r);
                g.mul(m, pre)
            }
        }
    }

    fn update_running(&mut self, mu: &Tensor, sigma: &Tensor) -> Result<()> {
        let EvalConditioning::Running { momentum } = self.config.eval else {
            return Ok(());
        };
        self.running = Some(match self.running.take() {
            None => (mu.clone(), sigma.clone()),
            Some((rm, rs)) => (
                rm.zip_map(mu, |a, b| momentum * a + (1.0 - momentum) * b)?,
                rs.zip_map(sigma, |a, b| momentum * a + (1.0 - momentum) * b)?,
            ),
        });
        Ok(())
    }

    /// Per-node dropout rates `1 − E[m_j]` from the last computed
    /// `(mu, sigma)`, and their mean as the layer rate.
    pub fn dropout_rate(&self) -> Result<(Vec<f64>, f64)> {
        let (Some(mu), Some(sigma)) = (&self.last_mu, &self.last_sigma) else {
            return Err(Error::State(
                "dropout rate requested before any forward pass".into(),
            ));
        };
        let per_node: Vec<f64> = mu
            .data()
            .iter()
            .zip(sigma.data())
            .map(|(&m, &s)| 1.0 - mean_mask(m, s))
            .collect();
        let layer = per_node.iter().sum::<f64>() / per_node.len() as f64;
        Ok((per_node, layer))
    }
}

fn mean_mask_tensor(mu: &Tensor, sigma: &Tensor) -> Result<Tensor> {
    mu.zip_map(sigma, mean_mask)
}
