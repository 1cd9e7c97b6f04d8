//! Mini-batch SGVB training with SGD, momentum and weight decay.
//!
//! The objective is the batch-mean negative log-likelihood under sampled
//! (reparameterized) masks. There is no explicit KL term: weight decay on
//! every parameter acts as the regularizer.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Targets};
use crate::dropout::{Mode, Noise};
use crate::error::{Error, Result};
use crate::eval::{self, EvalMetrics};
use crate::network::{DropoutPolicy, FcSpec, LayerRate, Model};
use crate::params::ParamStore;
use crate::tensor::{Graph, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Multiply by `factor` once the 0-based epoch index reaches each milestone.
    Step { milestones: Vec<usize>, factor: f64 },
}

impl LrSchedule {
    pub fn lr_at(&self, base: f64, epoch: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Step { milestones, factor } => {
                let passed = milestones.iter().filter(|&&m| epoch >= m).count();
                base * factor.powi(passed as i32)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    CrossEntropy,
    Mse,
}

impl LossKind {
    pub fn for_targets(t: &Targets) -> LossKind {
        match t {
            Targets::Classes { .. } => LossKind::CrossEntropy,
            Targets::Values(_) => LossKind::Mse,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_schedule: LrSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub loss: LossKind,
    /// Global gradient-norm clip; off when `None`.
    pub clip_norm: Option<f64>,
    pub init_mu: Option<f64>,
    pub init_sigma: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 256,
            lr: 0.01,
            lr_schedule: LrSchedule::Constant,
            momentum: 0.9,
            weight_decay: 5e-4,
            seed: 0,
            loss: LossKind::CrossEntropy,
            clip_norm: None,
            init_mu: None,
            init_sigma: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Argument(m));
        if !(self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight decay must be >= 0, got {}", self.weight_decay));
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return bad(format!("clip norm must be positive, got {c}"));
            }
        }
        Ok(())
    }

    /// Writes `init_mu`/`init_sigma` into an advanced-dropout spec.
    pub fn apply_init_overrides(&self, spec: &mut FcSpec) {
        if let DropoutPolicy::Advanced(cfg) = &mut spec.dropout {
            if let Some(mu) = self.init_mu {
                cfg.init_mu = mu;
            }
            if let Some(sigma) = self.init_sigma {
                cfg.init_sigma = sigma;
            }
        }
    }
}

/// Batch-mean negative log-likelihood of a train-mode forward pass.
/// Returns `(loss, network output)`.
pub fn sgvb_loss(
    model: &mut Model,
    g: &mut Graph,
    vars: &[Var],
    x: &Tensor,
    targets: &Targets,
    loss: LossKind,
    noise: &mut Noise,
) -> Result<(Var, Var)> {
    if targets.is_empty() {
        return Err(Error::EmptyBatch("sgvb_loss"));
    }
    let xv = g.constant(x.clone());
    let out = model.forward(g, vars, xv, Mode::Train, noise)?;
    let l = match (loss, targets) {
        (LossKind::CrossEntropy, Targets::Classes { labels, .. }) => {
            g.softmax_cross_entropy(out, labels)?
        }
        (LossKind::Mse, Targets::Values(v)) => {
            let t = Tensor::new(vec![v.len(), 1], v.clone())?;
            g.mse(out, &t)?
        }
        (LossKind::Mse, Targets::Classes { .. }) | (LossKind::CrossEntropy, Targets::Values(_)) => {
            return Err(Error::Argument(format!("{loss:?} loss does not fit these targets")))
        }
    };
    Ok((l, out))
}

/// Classical momentum with coupled weight decay:
/// `v ← μv + (g + λw)`, `w ← w − lr·v`.
#[derive(Debug, Clone, Default)]
pub struct Sgd {
    velocity: Vec<Option<Tensor>>,
}

impl Sgd {
    pub fn new() -> Self {
        Self::default()
    }

    /// Updates every parameter. Missing gradients count as zero; masked
    /// entries neither move nor accumulate velocity.
    pub fn step(
        &mut self,
        store: &mut ParamStore,
        grads: &[Option<Tensor>],
        masks: &[Option<Tensor>],
        lr: f64,
        momentum: f64,
        weight_decay: f64,
    ) -> Result<()> {
        if self.velocity.len() < store.len() {
            self.velocity.resize(store.len(), None);
        }
        for (k, p) in store.iter_mut().enumerate() {
            let n = p.value.numel();
            let grad = grads.get(k).and_then(|g| g.as_ref());
            if let Some(g) = grad {
                if g.shape() != p.value.shape() {
                    return Err(Error::shape("sgd step", p.value.shape(), g.shape()));
                }
            }
            let mask = masks.get(k).and_then(|m| m.as_ref()).map(|m| m.data());
            let v = self.velocity[k].get_or_insert_with(|| Tensor::zeros(p.value.shape().to_vec()));
            let vd = v.data_mut();
            let wd = p.value.data_mut();
            for i in 0..n {
                if mask.is_some_and(|m| m[i] == 0.0) {
                    vd[i] = 0.0;
                    wd[i] = 0.0;
                    continue;
                }
                let gi = grad.map_or(0.0, |g| g.data()[i]);
                vd[i] = momentum * vd[i] + gi + weight_decay * wd[i];
                wd[i] -= lr * vd[i];
            }
        }
        Ok(())
    }
}

/// Scales gradients so their global norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_global_norm(grads: &mut [Option<Tensor>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flatten()
        .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut().flatten() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_accuracy: Option<f64>,
    pub train_rmse: Option<f64>,
    pub test_loss: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub test_rmse: Option<f64>,
    /// Layer rates averaged over the epoch's training batches.
    pub rates: Vec<LayerRate>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub config_hash: Option<String>,
    pub rows: Vec<EpochRow>,
    pub final_test: Option<EvalMetrics>,
    pub seconds: f64,
}

impl RunRecord {
    /// One JSON object per epoch row. Without `with_timing` the wall-clock
    /// field is dropped, so identical runs serialize identically.
    pub fn to_jsonl(&self, with_timing: bool) -> Result<String> {
        let mut out = String::new();
        for row in &self.rows {
            let mut v = serde_json::to_value(row)?;
            if let Some(obj) = v.as_object_mut() {
                if !with_timing {
                    obj.remove("seconds");
                }
                obj.insert("seed".into(), self.seed.into());
                if let Some(h) = &self.config_hash {
                    obj.insert("config_hash".into(), h.clone().into());
                }
            }
            out.push_str(&serde_json::to_string(&v)?);
            out.push('\n');
        }
        Ok(out)
    }

    /// `epoch,layer,rate` rows.
    pub fn rates_csv(&self) -> String {
        let mut out = String::from("epoch,layer,rate\n");
        for row in &self.rows {
            for r in &row.rates {
                let _ = writeln!(out, "{},{},{}", row.epoch, r.layer, r.rate);
            }
        }
        out
    }

    /// Final per-layer rates, in site order.
    pub fn final_rates(&self) -> Vec<LayerRate> {
        self.rows.last().map(|r| r.rates.clone()).unwrap_or_default()
    }

    /// Final test accuracy or RMSE, whichever applies.
    pub fn final_metric(&self) -> Option<f64> {
        let t = self.final_test?;
        t.accuracy.or(t.rmse)
    }
}

fn diagnostics(model: &Model) -> String {
    let mut s = String::new();
    for r in model.dropout_rates() {
        let _ = write!(
            s,
            "{}: rate {:.4}, mu {:.4}, sigma {:.4}; ",
            r.layer, r.rate, r.mu_mean, r.sigma_mean
        );
    }
    for p in model.params().iter() {
        if !p.value.all_finite() {
            let _ = write!(s, "{} has non-finite entries; ", p.name);
        }
    }
    let max_w = model
        .params()
        .iter()
        .map(|p| p.value.max_abs())
        .fold(0.0, f64::max);
    let _ = write!(s, "max |param| {max_w:.4e}");
    s
}

pub fn fit(model: &mut Model, train: &Dataset, test: Option<&Dataset>, cfg: &TrainConfig) -> Result<RunRecord> {
    fit_with(model, train, test, cfg, |_, _| Ok(()))
}

/// Trains for `cfg.epochs` epochs of shuffled mini-batches and evaluates
/// `test` deterministically after each. `on_epoch` sees each finished row.
pub fn fit_with(
    model: &mut Model,
    train: &Dataset,
    test: Option<&Dataset>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRow, &Model) -> Result<()>,
) -> Result<RunRecord> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyBatch("fit"));
    }
    if train.dim() != model.spec().input_dim() {
        return Err(Error::shape(
            "fit",
            &[train.dim()],
            &[model.spec().input_dim()],
        ));
    }
    if train.output_dim() != model.spec().output_dim() {
        return Err(Error::Consistency(format!(
            "dataset needs {} outputs, model has {}",
            train.output_dim(),
            model.spec().output_dim()
        )));
    }
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(2);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    noise_rng.set_stream(3);
    let mut noise = Noise::Rng(noise_rng);

    let mut sgd = Sgd::new();
    let start = Instant::now();
    let n = train.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rows = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let t0 = Instant::now();
        let lr = cfg.lr_schedule.lr_at(cfg.lr, epoch);
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut hits = 0usize;
        let mut sq_err = 0.0;
        let mut rate_sums: BTreeMap<String, (usize, f64, f64, f64)> = BTreeMap::new();
        let mut rate_order: Vec<String> = Vec::new();

        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let x = train.features.select_rows(idx)?;
            let y = train.targets.select(idx);
            let mut g = Graph::new();
            let vars = model.params().bind(&mut g, true);
            let (loss, out) = sgvb_loss(model, &mut g, &vars, &x, &y, cfg.loss, &mut noise)?;
            let lv = g.value(loss).item()?;
            if !lv.is_finite() {
                return Err(Error::NonFinite {
                    epoch: epoch + 1,
                    batch: b,
                    diagnostics: diagnostics(model),
                });
            }
            g.backward(loss)?;

            let out = g.value(out).clone();
            loss_sum += lv * idx.len() as f64;
            match &y {
                Targets::Classes { labels, .. } => {
                    let pred = out.argmax_rows()?;
                    hits += pred.iter().zip(labels).filter(|(p, l)| p == l).count();
                }
                Targets::Values(v) => {
                    sq_err += out.data().iter().zip(v).map(|(p, t)| (p - t) * (p - t)).sum::<f64>();
                }
            }

            let mut grads = vec![None; model.params().len()];
            for (k, gr) in g.param_grads() {
                grads[k] = Some(gr.clone());
            }
            drop(g);
            if let Some(c) = cfg.clip_norm {
                clip_global_norm(&mut grads, c);
            }
            let masks = model.masks().to_vec();
            sgd.step(model.params_mut(), &grads, &masks, lr, cfg.momentum, cfg.weight_decay)?;

            for r in model.dropout_rates() {
                let e = rate_sums.entry(r.layer.clone()).or_insert_with(|| {
                    rate_order.push(r.layer.clone());
                    (0, 0.0, 0.0, 0.0)
                });
                e.0 += 1;
                e.1 += r.rate;
                e.2 += r.mu_mean;
                e.3 += r.sigma_mean;
            }
        }

        let rates = rate_order
            .iter()
            .map(|name| {
                let (c, r, m, s) = rate_sums[name];
                let c = c as f64;
                LayerRate {
                    layer: name.clone(),
                    rate: r / c,
                    mu_mean: m / c,
                    sigma_mean: s / c,
                }
            })
            .collect();
        let test_metrics = match test {
            Some(t) => Some(eval::evaluate(model, t)?),
            None => None,
        };
        let classification = train.targets.is_classification();
        let row = EpochRow {
            epoch: epoch + 1,
            lr,
            train_loss: loss_sum / n as f64,
            train_accuracy: classification.then(|| hits as f64 / n as f64),
            train_rmse: (!classification).then(|| (sq_err / n as f64).sqrt()),
            test_loss: test_metrics.map(|m| m.loss),
            test_accuracy: test_metrics.and_then(|m| m.accuracy),
            test_rmse: test_metrics.and_then(|m| m.rmse),
            rates,
            seconds: t0.elapsed().as_secs_f64(),
        };
        on_epoch(&row, model)?;
        rows.push(row);
    }

    let final_test = match test {
        Some(t) => Some(eval::evaluate(model, t)?),
        None => None,
    };
    Ok(RunRecord {
        seed: cfg.seed,
        config_hash: None,
        rows,
        final_test,
        seconds: start.elapsed().as_secs_f64(),
    })
}
