//! Iterative pruning guided by learned dropout rates, with reset to the
//! initial parameters between rounds, plus a random-selection baseline.
//!
//! Only hidden nodes carry rates, so only hidden layers are pruned: node
//! pruning removes a hidden unit's incoming row, bias and outgoing column;
//! parameter pruning removes incoming weights of hidden layers. Encoder
//! parameters are reset each round but never pruned.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::dropout::{Mode, Noise};
use crate::error::{Error, Result};
use crate::network::{FcSpec, Model};
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::training::{fit_with, TrainConfig};

/// Rows of training data used to refresh node rates before ranking.
pub const RATE_ROWS: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Granularity {
    Node,
    Parameter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PruneMethod {
    /// Largest dropout rate first.
    Rate,
    /// Uniform choice among kept entries.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneState {
    pub round: usize,
    pub granularity: Granularity,
    /// Keep flags per hidden layer (node granularity) or per hidden
    /// weight matrix entry (parameter granularity).
    pub kept: Vec<Vec<bool>>,
    /// Parameter values at initialization.
    pub init: ParamStore,
}

impl PruneState {
    /// Snapshots `model` before any training.
    pub fn new(model: &Model, granularity: Granularity) -> Self {
        let hidden = &model.linears()[..model.linears().len() - 1];
        let kept = hidden
            .iter()
            .map(|lin| match granularity {
                Granularity::Node => vec![true; lin.fan_out],
                Granularity::Parameter => vec![true; lin.fan_out * lin.fan_in],
            })
            .collect();
        PruneState {
            round: 0,
            granularity,
            kept,
            init: model.params().clone(),
        }
    }

    pub fn kept_count(&self) -> usize {
        self.kept.iter().flatten().filter(|&&k| k).count()
    }

    pub fn total(&self) -> usize {
        self.kept.iter().map(Vec::len).sum()
    }

    pub fn kept_fraction(&self) -> f64 {
        self.kept_count() as f64 / self.total() as f64
    }
}

/// How many of `kept` entries a `q`% round removes.
pub fn prune_count(kept: usize, q: f64) -> usize {
    if kept == 0 {
        return 0;
    }
    ((kept as f64 * q / 100.0).round() as usize).clamp(1, kept)
}

/// Refreshes per-node rates with a deterministic pass over `x`.
pub fn node_rates(model: &mut Model, x: &Tensor) -> Result<Vec<Vec<f64>>> {
    model.predict(x, Mode::Eval, &mut Noise::Zero)?;
    model
        .hidden_node_rates()
        .into_iter()
        .enumerate()
        .map(|(l, r)| {
            r.ok_or_else(|| {
                Error::State(format!(
                    "hidden layer {} has no dropout rates; rate-guided pruning needs advanced dropout",
                    l + 1
                ))
            })
        })
        .collect()
}

/// Selects `count` of the kept positions; `score` orders candidates,
/// larger first. Ties keep index order, so results are deterministic.
fn select(kept: &[bool], count: usize, score: impl Fn(usize) -> (f64, f64)) -> Vec<usize> {
    let mut cand: Vec<usize> = (0..kept.len()).filter(|&i| kept[i]).collect();
    cand.sort_by(|&a, &b| {
        let (sa, sb) = (score(a), score(b));
        sb.0.total_cmp(&sa.0).then(sb.1.total_cmp(&sa.1))
    });
    cand.truncate(count);
    cand
}

/// One pruning round: removes `q`% of each hidden layer's kept entries and
/// installs the composed masks into `model`.
///
/// `rates` are per-node rates of each hidden layer; they are required for
/// [`PruneMethod::Rate`] and ignored otherwise.
pub fn prune_round(
    model: &mut Model,
    state: &PruneState,
    q: f64,
    method: PruneMethod,
    rates: Option<&[Vec<f64>]>,
    rng: &mut ChaCha8Rng,
) -> Result<PruneState> {
    if !(q > 0.0 && q < 100.0) {
        return Err(Error::Argument(format!("prune percent must be in (0, 100), got {q}")));
    }
    if state.kept_count() == 0 {
        return Err(Error::Exhausted);
    }
    let hidden = model.linears()[..model.linears().len() - 1].to_vec();
    if hidden.len() != state.kept.len() {
        return Err(Error::Consistency(format!(
            "prune state has {} layers, model has {}",
            state.kept.len(),
            hidden.len()
        )));
    }
    let rates = match method {
        PruneMethod::Rate => {
            let r = rates.ok_or_else(|| Error::State("rate-guided pruning needs node rates".into()))?;
            if r.len() != hidden.len() || r.iter().zip(&hidden).any(|(r, lin)| r.len() != lin.fan_out) {
                return Err(Error::Consistency("node rates do not match the hidden layers".into()));
            }
            Some(r)
        }
        PruneMethod::Random => None,
    };

    let mut next = state.clone();
    next.round += 1;
    for (l, lin) in hidden.iter().enumerate() {
        let kept = &state.kept[l];
        let n_kept = kept.iter().filter(|&&k| k).count();
        let count = prune_count(n_kept, q);
        let chosen = match (rates, state.granularity) {
            (None, _) => {
                let mut cand: Vec<usize> = (0..kept.len()).filter(|&i| kept[i]).collect();
                cand.shuffle(rng);
                cand.truncate(count);
                cand
            }
            (Some(r), Granularity::Node) => select(kept, count, |j| (r[l][j], 0.0)),
            (Some(r), Granularity::Parameter) => {
                let w = model.params().value(lin.weight).data();
                // rate of the output node, then smaller magnitude first
                select(kept, count, |i| (r[l][i / lin.fan_in], -w[i].abs()))
            }
        };
        for i in chosen {
            next.kept[l][i] = false;
        }
    }
    install_masks(model, &next)?;
    Ok(next)
}

/// Writes the keep flags of `state` into `model` as parameter masks.
pub fn install_masks(model: &mut Model, state: &PruneState) -> Result<()> {
    let linears = model.linears().to_vec();
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    match state.granularity {
        Granularity::Parameter => {
            for (lin, kept) in linears.iter().zip(&state.kept) {
                let m = Tensor::new(vec![lin.fan_out, lin.fan_in], kept.iter().map(|&k| flag(k)).collect())?;
                model.set_mask(lin.weight, m)?;
            }
        }
        Granularity::Node => {
            // a weight survives when both its source and target nodes do
            for (l, lin) in linears.iter().enumerate() {
                let rows = state.kept.get(l);
                let cols = l.checked_sub(1).map(|p| &state.kept[p]);
                if rows.is_none() && cols.is_none() {
                    continue;
                }
                let m = Tensor::from_fn(vec![lin.fan_out, lin.fan_in], |i| {
                    let r = rows.is_none_or(|k| k[i / lin.fan_in]);
                    let c = cols.is_none_or(|k| k[i % lin.fan_in]);
                    flag(r && c)
                });
                model.set_mask(lin.weight, m)?;
                if let Some(k) = rows {
                    model.set_mask(lin.bias, Tensor::new(vec![lin.fan_out], k.iter().map(|&b| flag(b)).collect())?)?;
                }
            }
        }
    }
    Ok(())
}

/// Resets every parameter to its initial value, re-zeroes pruned entries
/// and clears dropout telemetry.
pub fn reset_to_init(model: &mut Model, state: &PruneState) -> Result<()> {
    model.params_mut().copy_values_from(&state.init)?;
    model.apply_masks();
    model.reset_site_state();
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrunePoint {
    pub round: usize,
    pub kept_fraction: f64,
    pub granularity: Granularity,
    pub method: PruneMethod,
    /// Test accuracy, or RMSE for regression.
    pub metric: f64,
}

fn check_masks(model: &Model) -> Result<()> {
    for (k, mask) in model.masks().iter().enumerate() {
        let Some(mask) = mask else { continue };
        let v = model.params().value(k);
        if v.data().iter().zip(mask.data()).any(|(&w, &m)| m == 0.0 && w != 0.0) {
            return Err(Error::Consistency(format!(
                "pruned entries of {} moved during training",
                model.params().get(k).name
            )));
        }
    }
    Ok(())
}

/// Train, prune, reset and retrain for `rounds` rounds. Returns one point
/// per preservation level, starting with the unpruned network.
#[allow(clippy::too_many_arguments)]
pub fn lottery_cycle(
    spec: &FcSpec,
    model_seed: u64,
    train: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
    rounds: usize,
    q: f64,
    granularity: Granularity,
    method: PruneMethod,
) -> Result<Vec<PrunePoint>> {
    let mut model = Model::build(spec.clone(), model_seed)?;
    let mut state = PruneState::new(&model, granularity);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(4);
    let rate_x = train.features.select_rows(&(0..train.len().min(RATE_ROWS)).collect::<Vec<_>>())?;

    let mut points = Vec::with_capacity(rounds + 1);
    for round in 0..=rounds {
        if round > 0 {
            let rates = match method {
                PruneMethod::Rate => Some(node_rates(&mut model, &rate_x)?),
                PruneMethod::Random => None,
            };
            state = prune_round(&mut model, &state, q, method, rates.as_deref(), &mut rng)?;
            reset_to_init(&mut model, &state)?;
        }
        let rec = fit_with(&mut model, train, Some(test), cfg, |_, m| check_masks(m))?;
        let metric = rec
            .final_metric()
            .ok_or_else(|| Error::State("training produced no test metric".into()))?;
        points.push(PrunePoint {
            round,
            kept_fraction: state.kept_fraction(),
            granularity,
            method,
            metric,
        });
    }
    Ok(points)
}

/// `round,kept_fraction,granularity,method,accuracy` rows.
pub fn points_csv(points: &[PrunePoint]) -> String {
    let mut out = String::from("round,kept_fraction,granularity,method,accuracy\n");
    for p in points {
        let g = match p.granularity {
            Granularity::Node => "node",
            Granularity::Parameter => "parameter",
        };
        let m = match p.method {
            PruneMethod::Rate => "rate",
            PruneMethod::Random => "random",
        };
        out.push_str(&format!("{},{},{g},{m},{}\n", p.round, p.kept_fraction, p.metric));
    }
    out
}
