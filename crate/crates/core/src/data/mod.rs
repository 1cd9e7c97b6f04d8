//! Datasets: IDX and CSV ingestion, normalization, splits and toy generators.

mod csv_table;
mod idx;
mod registry;
mod synthetic;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use csv_table::{load_csv, CsvSchema, MissingPolicy, TargetColumn};
pub use idx::{load_idx, IMAGE_MAGIC, LABEL_MAGIC};
pub use registry::{data_dir, load_named, DATA_DIR_ENV, UCI_DATASETS};
pub use synthetic::{synthetic, SyntheticKind};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Targets {
    Classes { labels: Vec<usize>, n_classes: usize },
    Values(Vec<f64>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes { labels, .. } => labels.len(),
            Targets::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Targets {
        match self {
            Targets::Classes { labels, n_classes } => Targets::Classes {
                labels: idx.iter().map(|&i| labels[i]).collect(),
                n_classes: *n_classes,
            },
            Targets::Values(v) => Targets::Values(idx.iter().map(|&i| v[i]).collect()),
        }
    }

    pub fn is_classification(&self) -> bool {
        matches!(self, Targets::Classes { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitTag {
    All,
    Train,
    Test,
}

/// How stored features were derived from raw ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Normalization {
    /// `x / factor`
    Scale { factor: f64 },
    /// `(x − mean) / std` per feature
    ZScore { mean: Vec<f64>, std: Vec<f64> },
}

impl Normalization {
    /// Per-feature mean and population standard deviation of `x: [N×D]`.
    /// Constant columns get unit scale.
    pub fn fit_zscore(x: &Tensor) -> Result<Normalization> {
        let (n, d) = x.dims2()?;
        if n == 0 {
            return Err(Error::EmptyBatch("z-score fit"));
        }
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(x.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for i in 0..n {
            for ((s, v), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n as f64).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Normalization::ZScore { mean, std })
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        self.transform(x, false)
    }

    pub fn invert(&self, x: &Tensor) -> Result<Tensor> {
        self.transform(x, true)
    }

    fn transform(&self, x: &Tensor, inverse: bool) -> Result<Tensor> {
        match self {
            Normalization::Scale { factor } => Ok(if inverse {
                x.scale(*factor)
            } else {
                x.map(|v| v / factor)
            }),
            Normalization::ZScore { mean, std } => {
                let (_, d) = x.dims2()?;
                if d != mean.len() {
                    return Err(Error::shape("normalization", x.shape(), &[mean.len()]));
                }
                Ok(Tensor::from_fn(x.shape().to_vec(), |i| {
                    let (v, j) = (x.data()[i], i % d);
                    if inverse {
                        v * std[j] + mean[j]
                    } else {
                        (v - mean[j]) / std[j]
                    }
                }))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Tensor,
    pub targets: Targets,
    pub split: SplitTag,
    pub normalization: Option<Normalization>,
}

impl Dataset {
    pub fn new(features: Tensor, targets: Targets) -> Result<Dataset> {
        let (n, _) = features.dims2()?;
        if n != targets.len() {
            return Err(Error::Consistency(format!(
                "{n} feature rows but {} targets",
                targets.len()
            )));
        }
        if !features.all_finite() {
            return Err(Error::Format("non-finite feature value".into()));
        }
        if let Targets::Classes { labels, n_classes } = &targets {
            if let Some(&bad) = labels.iter().find(|&&l| l >= *n_classes) {
                return Err(Error::Index {
                    what: "class label",
                    index: bad,
                    bound: *n_classes,
                });
            }
        }
        Ok(Dataset {
            features,
            targets,
            split: SplitTag::All,
            normalization: None,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.shape()[1]
    }

    /// Output width a model needs: class count or 1.
    pub fn output_dim(&self) -> usize {
        match &self.targets {
            Targets::Classes { n_classes, .. } => *n_classes,
            Targets::Values(_) => 1,
        }
    }

    pub fn subset(&self, idx: &[usize]) -> Result<Dataset> {
        Ok(Dataset {
            features: self.features.select_rows(idx)?,
            targets: self.targets.select(idx),
            split: self.split,
            normalization: self.normalization.clone(),
        })
    }

    /// Features in their raw units.
    pub fn raw_features(&self) -> Result<Tensor> {
        match &self.normalization {
            Some(n) => n.invert(&self.features),
            None => Ok(self.features.clone()),
        }
    }
}

/// Seeded random split. Z-score statistics (for datasets that are raw or
/// z-scored) are recomputed on the training part and applied to both parts;
/// fixed scalings such as `/255` are kept.
pub fn split(ds: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Argument(format!(
            "split fraction must be in (0, 1), got {fraction}"
        )));
    }
    let n = ds.len();
    let n_train = (fraction * n as f64).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::Argument(format!(
            "split of {n} rows at {fraction} leaves an empty side"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (tr, te) = idx.split_at(n_train);
    let mut train = ds.subset(tr)?;
    let mut test = ds.subset(te)?;
    train.split = SplitTag::Train;
    test.split = SplitTag::Test;
    if matches!(ds.normalization, None | Some(Normalization::ZScore { .. })) {
        let raw_train = train.raw_features()?;
        let raw_test = test.raw_features()?;
        let norm = Normalization::fit_zscore(&raw_train)?;
        train.features = norm.apply(&raw_train)?;
        test.features = norm.apply(&raw_test)?;
        train.normalization = Some(norm.clone());
        test.normalization = Some(norm);
    }
    Ok((train, test))
}
