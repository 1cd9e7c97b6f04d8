//! Metrics, MC uncertainty inference and small statistics helpers.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::data::{Dataset, Targets};
use crate::dropout::{Mode, Noise};
use crate::error::{Error, Result};
use crate::math;
use crate::network::Model;
use crate::tensor::{Graph, Tensor};

/// Rows per forward pass during evaluation.
pub const EVAL_CHUNK: usize = 1000;

/// Default number of stochastic passes.
pub const DEFAULT_PASSES: usize = 50;

pub fn accuracy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let pred = logits.argmax_rows()?;
    if pred.len() != labels.len() {
        return Err(Error::shape("accuracy", logits.shape(), &[labels.len()]));
    }
    if pred.is_empty() {
        return Err(Error::EmptyBatch("accuracy"));
    }
    let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

pub fn rmse(pred: &Tensor, target: &[f64]) -> Result<f64> {
    if pred.numel() != target.len() {
        return Err(Error::shape("rmse", pred.shape(), &[target.len()]));
    }
    if target.is_empty() {
        return Err(Error::EmptyBatch("rmse"));
    }
    let se: f64 = pred
        .data()
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok((se / target.len() as f64).sqrt())
}

/// `counts[true][predicted]`.
pub fn confusion(pred: &[usize], labels: &[usize], n_classes: usize) -> Result<Vec<Vec<usize>>> {
    if pred.len() != labels.len() {
        return Err(Error::shape("confusion", &[pred.len()], &[labels.len()]));
    }
    let mut m = vec![vec![0; n_classes]; n_classes];
    for (&p, &l) in pred.iter().zip(labels) {
        if p >= n_classes || l >= n_classes {
            return Err(Error::Index {
                what: "class",
                index: p.max(l),
                bound: n_classes,
            });
        }
        m[l][p] += 1;
    }
    Ok(m)
}

/// Divides each row by its total; empty rows stay zero.
pub fn row_normalize(counts: &[Vec<usize>]) -> Vec<Vec<f64>> {
    counts
        .iter()
        .map(|row| {
            let total: usize = row.iter().sum();
            row.iter()
                .map(|&c| if total > 0 { c as f64 / total as f64 } else { 0.0 })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub loss: f64,
    pub accuracy: Option<f64>,
    pub rmse: Option<f64>,
}

/// Runs `model` in `mode` over `ds` in chunks and concatenates the outputs.
pub fn predict_all(model: &mut Model, x: &Tensor, mode: Mode, noise: &mut Noise) -> Result<Tensor> {
    let (n, _) = x.dims2()?;
    let c = model.spec().output_dim();
    let mut out = Vec::with_capacity(n * c);
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_CHUNK).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let chunk = x.select_rows(&idx)?;
        out.extend_from_slice(model.predict(&chunk, mode, noise)?.data());
        start = end;
    }
    Tensor::new(vec![n, c], out)
}

/// Deterministic evaluation: loss plus accuracy or RMSE.
pub fn evaluate(model: &mut Model, ds: &Dataset) -> Result<EvalMetrics> {
    let out = predict_all(model, &ds.features, Mode::Eval, &mut Noise::Zero)?;
    let mut g = Graph::new();
    let o = g.constant(out.clone());
    match &ds.targets {
        Targets::Classes { labels, .. } => {
            let loss = g.softmax_cross_entropy(o, labels)?;
            Ok(EvalMetrics {
                loss: g.value(loss).item()?,
                accuracy: Some(accuracy(&out, labels)?),
                rmse: None,
            })
        }
        Targets::Values(v) => {
            let r = rmse(&out, v)?;
            Ok(EvalMetrics {
                loss: r * r,
                accuracy: None,
                rmse: Some(r),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyReport {
    pub passes: usize,
    /// Predictive mean `[N×C]` of the per-pass class probabilities.
    pub mean: Tensor,
    /// Per-class variance `[N×C]`, divided by the number of passes.
    pub variance: Tensor,
    pub max_p: Vec<f64>,
    pub entropy: Vec<f64>,
}

impl UncertaintyReport {
    /// Mean of the per-class variances for each sample.
    pub fn variance_summary(&self) -> Vec<f64> {
        let (n, c) = (self.variance.shape()[0], self.variance.shape()[1]);
        (0..n)
            .map(|i| self.variance.row(i).iter().sum::<f64>() / c as f64)
            .collect()
    }
}

/// Natural-log entropy of a probability vector.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * v.ln())
        .sum::<f64>()
}

/// `passes` stochastic forward passes with sampled masks. Each pass is
/// turned into class probabilities by a softmax (identity for single-output
/// models); mean, variance, max probability and entropy are taken over passes.
pub fn mc_infer(model: &mut Model, x: &Tensor, passes: usize, seed: u64) -> Result<UncertaintyReport> {
    if passes < 1 {
        return Err(Error::Argument("mc_infer needs at least one pass".into()));
    }
    let (n, _) = x.dims2()?;
    let c = model.spec().output_dim();
    let mut noise = Noise::seeded(seed);
    let mut sum = vec![0.0; n * c];
    let mut sq = vec![0.0; n * c];
    for _ in 0..passes {
        let out = predict_all(model, x, Mode::Sample, &mut noise)?;
        let probs = if c > 1 { out.softmax_rows()? } else { out };
        for ((s, q), &p) in sum.iter_mut().zip(sq.iter_mut()).zip(probs.data()) {
            *s += p;
            *q += p * p;
        }
    }
    let t = passes as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / t).collect();
    let variance: Vec<f64> = sq
        .iter()
        .zip(&mean)
        .map(|(q, m)| (q / t - m * m).max(0.0))
        .collect();
    let mean = Tensor::new(vec![n, c], mean)?;
    let variance = Tensor::new(vec![n, c], variance)?;
    let max_p = (0..n)
        .map(|i| mean.row(i).iter().cloned().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let entropy = (0..n).map(|i| entropy(mean.row(i))).collect();
    Ok(UncertaintyReport {
        passes,
        mean,
        variance,
        max_p,
        entropy,
    })
}

/// Probability that a random positive outscores a random negative, ties
/// counted one half (Mann–Whitney U over average ranks).
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape("auroc", &[scores.len()], &[labels.len()]));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Argument("auroc scores contain NaN".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Argument(
            "auroc is undefined unless both classes are present".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their average
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum += order[i..=j].iter().filter(|&&k| labels[k]).count() as f64 * avg;
        i = j + 1;
    }
    let (p, q) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * q))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintySummary {
    pub passes: usize,
    pub accuracy: f64,
    pub auroc_max_p: f64,
    pub auroc_entropy: f64,
    pub confusion: Vec<Vec<usize>>,
    pub confusion_normalized: Vec<Vec<f64>>,
}

/// MC predictions on labelled data. Predictions are the argmax of the MC
/// mean; AUROCs measure how well each score separates correct from wrong
/// predictions (entropy is negated so higher means more confident).
pub fn uncertainty_eval(
    model: &mut Model,
    ds: &Dataset,
    passes: usize,
    seed: u64,
) -> Result<(UncertaintySummary, UncertaintyReport)> {
    let Targets::Classes { labels, n_classes } = &ds.targets else {
        return Err(Error::Argument("uncertainty evaluation needs class labels".into()));
    };
    let report = mc_infer(model, &ds.features, passes, seed)?;
    let pred = report.mean.argmax_rows()?;
    let correct: Vec<bool> = pred.iter().zip(labels).map(|(p, l)| p == l).collect();
    let neg_entropy: Vec<f64> = report.entropy.iter().map(|h| -h).collect();
    let counts = confusion(&pred, labels, *n_classes)?;
    let summary = UncertaintySummary {
        passes,
        accuracy: correct.iter().filter(|&&c| c).count() as f64 / correct.len() as f64,
        auroc_max_p: auroc(&report.max_p, &correct)?,
        auroc_entropy: auroc(&neg_entropy, &correct)?,
        confusion_normalized: row_normalize(&counts),
        confusion: counts,
    };
    Ok((summary, report))
}

/// `sigmoid(a − a′) / sigmoid((t − t′)/t′)`.
pub fn effectiveness_s1(acc: f64, time: f64, base_acc: f64, base_time: f64) -> Result<f64> {
    if !(base_time > 0.0) {
        return Err(Error::Argument(format!("base time must be positive, got {base_time}")));
    }
    Ok(math::sigmoid(acc - base_acc) / math::sigmoid((time - base_time) / base_time))
}

/// `(s1, s2)` with `s2 = ((a − a′)/a′) / ((t − t′)/t′)`; equal times leave
/// `s2` undefined, which is an error (use [`effectiveness_s1`] alone then).
pub fn effectiveness_ratios(acc: f64, time: f64, base_acc: f64, base_time: f64) -> Result<(f64, f64)> {
    let s1 = effectiveness_s1(acc, time, base_acc, base_time)?;
    if time == base_time {
        return Err(Error::Numerical(
            "s2 is undefined when training times are equal".into(),
        ));
    }
    let s2 = ((acc - base_acc) / base_acc) / ((time - base_time) / base_time);
    Ok((s1, s2))
}

/// Min-max scaling onto `[0, 1]`; a constant input maps to zeros.
pub fn min_max_normalize(xs: &[f64]) -> Vec<f64> {
    let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    xs.iter()
        .map(|&x| if hi > lo { (x - lo) / (hi - lo) } else { 0.0 })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    pub p_value: f64,
}

/// Two-sample Student's t-test with pooled variance, two-sided.
pub fn t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Argument("t-test needs at least two values per sample".into()));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let ma = a.iter().sum::<f64>() / na;
    let mb = b.iter().sum::<f64>() / nb;
    let ss = |xs: &[f64], m: f64| xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>();
    let df = na + nb - 2.0;
    let pooled = (ss(a, ma) + ss(b, mb)) / df;
    let se = (pooled * (1.0 / na + 1.0 / nb)).sqrt();
    if se == 0.0 {
        let (t, p) = if ma == mb {
            (0.0, 1.0)
        } else {
            ((ma - mb).signum() * f64::INFINITY, 0.0)
        };
        return Ok(TTest { t, df, p_value: p });
    }
    let t = (ma - mb) / se;
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Numerical(e.to_string()))?;
    let p = 2.0 * dist.cdf(-t.abs());
    Ok(TTest {
        t,
        df,
        p_value: p.min(1.0),
    })
}
