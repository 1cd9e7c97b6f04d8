//! Fully connected networks with a dropout site on every hidden layer.
//!
//! Each hidden layer computes `relu(site(θx) + b)`: the mask multiplies the
//! linear output before the bias and the activation. The output layer is
//! linear only and never masked.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dropout::{
    AdvancedConfig, AdvancedDropoutLayer, BaselineDropout, DropoutSite, Mode, Noise,
};
use crate::error::{Error, Result};
use crate::params::{ParamGroup, ParamStore};
use crate::tensor::{Graph, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    Relu,
}

/// Dropout applied at every maskable site of a network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum DropoutPolicy {
    None,
    Bernoulli { p: f64 },
    Gaussian { v: f64 },
    Advanced(AdvancedConfig),
}

impl Default for DropoutPolicy {
    fn default() -> Self {
        DropoutPolicy::Advanced(AdvancedConfig::default())
    }
}

impl DropoutPolicy {
    pub fn name(&self) -> &'static str {
        match self {
            DropoutPolicy::None => "none",
            DropoutPolicy::Bernoulli { .. } => "bernoulli",
            DropoutPolicy::Gaussian { .. } => "gaussian",
            DropoutPolicy::Advanced(_) => "advanced",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FcSpec {
    pub layer_dims: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    pub dropout: DropoutPolicy,
    /// Also mask the raw input features.
    #[serde(default)]
    pub mask_input: bool,
}

impl FcSpec {
    pub fn new(layer_dims: Vec<usize>, dropout: DropoutPolicy, mask_input: bool) -> Self {
        FcSpec {
            layer_dims,
            activation: Activation::Relu,
            dropout,
            mask_input,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.len() < 3 {
            return Err(Error::Argument(format!(
                "need input, at least one hidden and an output layer, got {:?}",
                self.layer_dims
            )));
        }
        if self.layer_dims.contains(&0) {
            return Err(Error::Argument(format!(
                "layer widths must be positive, got {:?}",
                self.layer_dims
            )));
        }
        match self.dropout {
            DropoutPolicy::Bernoulli { p } => BaselineDropout::Bernoulli { p }.validate(),
            DropoutPolicy::Gaussian { v } => BaselineDropout::Gaussian { v }.validate(),
            DropoutPolicy::Advanced(c) if !(c.init_sigma > 0.0) => Err(Error::Argument(
                format!("init_sigma must be positive, got {}", c.init_sigma),
            )),
            _ => Ok(()),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().expect("validated")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: usize,
    pub bias: usize,
    pub fan_in: usize,
    pub fan_out: usize,
}

/// A named dropout site and the width it masks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Site {
    pub name: String,
    pub site: DropoutSite,
}

/// Layer-level dropout rate of one advanced site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRate {
    pub layer: String,
    pub rate: f64,
    pub mu_mean: f64,
    pub sigma_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    spec: FcSpec,
    store: ParamStore,
    linears: Vec<Linear>,
    input_site: Option<Site>,
    hidden_sites: Vec<Site>,
    /// Keep-masks (1 kept, 0 pruned) indexed by parameter key.
    masks: Vec<Option<Tensor>>,
}

impl Model {
    /// Builds a network. Weights use He initialisation `N(0, 2/fan_in)` and
    /// zero biases. Network weights and encoder parameters come from
    /// separate streams of the seed, so models that differ only in their
    /// dropout policy start from identical weights.
    pub fn build(spec: FcSpec, seed: u64) -> Result<Model> {
        spec.validate()?;
        let mut theta_rng = ChaCha8Rng::seed_from_u64(seed);
        theta_rng.set_stream(0);
        let mut lambda_rng = ChaCha8Rng::seed_from_u64(seed);
        lambda_rng.set_stream(1);

        let mut store = ParamStore::new();
        let dims = &spec.layer_dims;
        let mut linears = Vec::with_capacity(dims.len() - 1);
        for (l, w) in dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let he = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("valid sd");
            let weight = Tensor::from_fn(vec![fan_out, fan_in], |_| he.sample(&mut theta_rng));
            linears.push(Linear {
                weight: store.add(format!("fc{}.weight", l + 1), ParamGroup::Theta, weight),
                bias: store.add(
                    format!("fc{}.bias", l + 1),
                    ParamGroup::Theta,
                    Tensor::zeros(vec![fan_out]),
                ),
                fan_in,
                fan_out,
            });
        }

        let mut make_site = |name: String, width: usize| -> Result<Site> {
            let site = match spec.dropout {
                DropoutPolicy::None => DropoutSite::Baseline(BaselineDropout::None),
                DropoutPolicy::Bernoulli { p } => {
                    DropoutSite::Baseline(BaselineDropout::Bernoulli { p })
                }
                DropoutPolicy::Gaussian { v } => {
                    DropoutSite::Baseline(BaselineDropout::Gaussian { v })
                }
                DropoutPolicy::Advanced(cfg) => DropoutSite::Advanced(AdvancedDropoutLayer::new(
                    &name,
                    width,
                    cfg,
                    &mut store,
                    &mut lambda_rng,
                )?),
            };
            Ok(Site { name, site })
        };
        let input_site = if spec.mask_input {
            Some(make_site("input".into(), dims[0])?)
        } else {
            None
        };
        let hidden_sites = (1..dims.len() - 1)
            .map(|l| make_site(format!("hidden{l}"), dims[l]))
            .collect::<Result<Vec<_>>>()?;
        let masks = vec![None; store.len()];
        Ok(Model {
            spec,
            store,
            linears,
            input_site,
            hidden_sites,
            masks,
        })
    }

    pub fn spec(&self) -> &FcSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn linears(&self) -> &[Linear] {
        &self.linears
    }

    pub fn hidden_sites(&self) -> &[Site] {
        &self.hidden_sites
    }

    pub fn input_site(&self) -> Option<&Site> {
        self.input_site.as_ref()
    }

    /// Input site first (if any), then hidden sites in depth order.
    pub fn sites(&self) -> impl Iterator<Item = &Site> {
        self.input_site.iter().chain(self.hidden_sites.iter())
    }

    fn sites_mut(&mut self) -> impl Iterator<Item = &mut Site> {
        self.input_site.iter_mut().chain(self.hidden_sites.iter_mut())
    }

    pub fn is_stochastic(&self) -> bool {
        self.sites().any(|s| s.site.is_stochastic())
    }

    pub fn has_advanced_sites(&self) -> bool {
        self.sites().any(|s| s.site.as_advanced().is_some())
    }

    /// Forward pass on graph inputs; `vars` comes from binding
    /// [`Model::params`] on the same graph.
    pub fn forward(
        &mut self,
        g: &mut Graph,
        vars: &[Var],
        x: Var,
        mode: Mode,
        noise: &mut Noise,
    ) -> Result<Var> {
        let (_, d) = g.value(x).dims2()?;
        if d != self.spec.input_dim() {
            return Err(Error::shape(
                "model input",
                g.value(x).shape(),
                &[g.value(x).shape()[0], self.spec.input_dim()],
            ));
        }
        let mut h = x;
        if let Some(site) = &mut self.input_site {
            h = site.site.forward(g, vars, h, mode, noise)?;
        }
        let last = self.linears.len() - 1;
        for (l, lin) in self.linears.iter().enumerate() {
            let pre = g.matmul_t(h, vars[lin.weight])?;
            if l == last {
                return g.bias_add(pre, vars[lin.bias]);
            }
            let masked = self.hidden_sites[l].site.forward(g, vars, pre, mode, noise)?;
            let z = g.bias_add(masked, vars[lin.bias])?;
            h = match self.spec.activation {
                Activation::Relu => g.relu(z),
            };
        }
        unreachable!("a validated spec has an output layer")
    }

    /// Forward pass without gradients; returns logits or predictions.
    pub fn predict(&mut self, x: &Tensor, mode: Mode, noise: &mut Noise) -> Result<Tensor> {
        let mut g = Graph::new();
        let vars = self.store.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let out = self.forward(&mut g, &vars, xv, mode, noise)?;
        Ok(g.value(out).clone())
    }

    /// Layer rates of every advanced site with telemetry.
    pub fn dropout_rates(&self) -> Vec<LayerRate> {
        self.sites()
            .filter_map(|s| {
                let a = s.site.as_advanced()?;
                let (_, rate) = a.dropout_rate().ok()?;
                Some(LayerRate {
                    layer: s.name.clone(),
                    rate,
                    mu_mean: a.last_mu()?.mean(),
                    sigma_mean: a.last_sigma()?.mean(),
                })
            })
            .collect()
    }

    /// Per-node dropout rates of each hidden site, `None` where the site
    /// is not advanced or has no telemetry yet.
    pub fn hidden_node_rates(&self) -> Vec<Option<Vec<f64>>> {
        self.hidden_sites
            .iter()
            .map(|s| {
                s.site
                    .as_advanced()
                    .and_then(|a| a.dropout_rate().ok())
                    .map(|(r, _)| r)
            })
            .collect()
    }

    /// Drops telemetry and running statistics of all sites.
    pub fn reset_site_state(&mut self) {
        for s in self.sites_mut() {
            if let Some(a) = s.site.as_advanced_mut() {
                a.reset_state();
            }
        }
    }

    /// Running statistics of each site in [`Model::sites`] order.
    pub fn site_running(&self) -> Vec<Option<(Tensor, Tensor)>> {
        self.sites()
            .map(|s| s.site.as_advanced().and_then(|a| a.running().cloned()))
            .collect()
    }

    pub fn set_site_running(&mut self, running: Vec<Option<(Tensor, Tensor)>>) -> Result<()> {
        let n = self.sites().count();
        if running.len() != n {
            return Err(Error::Consistency(format!("{} site states for {n} sites", running.len())));
        }
        for (s, r) in self.sites_mut().zip(running) {
            match s.site.as_advanced_mut() {
                Some(a) => a.set_running(r)?,
                None if r.is_some() => {
                    return Err(Error::Consistency(format!("site {} has no running statistics", s.name)))
                }
                None => {}
            }
        }
        Ok(())
    }

    pub fn mask(&self, key: usize) -> Option<&Tensor> {
        self.masks.get(key).and_then(|m| m.as_ref())
    }

    pub fn masks(&self) -> &[Option<Tensor>] {
        &self.masks
    }

    /// Installs a keep-mask for a parameter and zeroes its pruned entries.
    pub fn set_mask(&mut self, key: usize, mask: Tensor) -> Result<()> {
        let value = self.store.value(key);
        if value.shape() != mask.shape() {
            return Err(Error::shape("prune mask", value.shape(), mask.shape()));
        }
        self.masks[key] = Some(mask);
        self.apply_masks();
        Ok(())
    }

    /// Zeroes every pruned entry.
    pub fn apply_masks(&mut self) {
        for (key, mask) in self.masks.iter().enumerate() {
            if let Some(mask) = mask {
                let v = self.store.value_mut(key);
                for (w, &m) in v.data_mut().iter_mut().zip(mask.data()) {
                    if m == 0.0 {
                        *w = 0.0;
                    }
                }
            }
        }
    }
}
