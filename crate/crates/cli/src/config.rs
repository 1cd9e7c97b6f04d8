//! Experiment configuration.
//!
//! Values are resolved in three layers: built-in defaults, then the TOML
//! file given by `--config`, then individual command-line flags.

use std::path::{Path, PathBuf};

use advdrop::data::UCI_DATASETS;
use advdrop::dropout::AdvancedConfig;
use advdrop::network::{DropoutPolicy, FcSpec};
use advdrop::pruning::Granularity;
use advdrop::training::{LossKind, TrainConfig};
use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum DropoutKind {
    Advanced,
    Bernoulli,
    Gaussian,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub name: String,
    /// Overrides `$ADVDROP_DATA_DIR`.
    pub dir: Option<PathBuf>,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            name: "mnist-10k".into(),
            dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Hidden widths; 800-800 for classification and 50-50 for regression
    /// when unset.
    pub hidden: Option<Vec<usize>>,
    pub dropout: DropoutKind,
    /// Keep probability of Bernoulli dropout.
    pub p: f64,
    /// Variance of Gaussian dropout.
    pub v: f64,
    /// On for classification, off for regression when unset.
    pub mask_input: Option<bool>,
    pub advanced: AdvancedConfig,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            hidden: None,
            dropout: DropoutKind::Advanced,
            p: 0.5,
            v: 1.0,
            mask_input: None,
            advanced: AdvancedConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub outdir: PathBuf,
    pub seeds: Vec<u64>,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            outdir: "runs".into(),
            seeds: vec![0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UncertaintySection {
    pub passes: usize,
    pub per_sample: bool,
}

impl Default for UncertaintySection {
    fn default() -> Self {
        UncertaintySection {
            passes: advdrop::eval::DEFAULT_PASSES,
            per_sample: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum MethodChoice {
    Rate,
    Random,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneSection {
    pub granularity: Granularity,
    pub q: f64,
    pub rounds: usize,
    pub method: MethodChoice,
}

impl Default for PruneSection {
    fn default() -> Self {
        PruneSection {
            granularity: Granularity::Node,
            q: 10.0,
            rounds: 6,
            method: MethodChoice::Both,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub output: OutputSection,
    pub uncertainty: UncertaintySection,
    pub prune: PruneSection,
}

/// Flag values that override the file; `None` leaves the file value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub dataset: Option<String>,
    pub dropout: Option<DropoutKind>,
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub seeds: Option<Vec<u64>>,
    pub init_mu: Option<f64>,
    pub init_sigma: Option<f64>,
    pub mask_input: Option<bool>,
    pub outdir: Option<PathBuf>,
    pub granularity: Option<Granularity>,
    pub q: Option<f64>,
    pub rounds: Option<usize>,
    pub method: Option<MethodChoice>,
    pub passes: Option<usize>,
    pub per_sample: bool,
}

pub fn is_regression(dataset: &str) -> bool {
    UCI_DATASETS.contains(&dataset) || dataset == "linear-regression"
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn resolve(file: Option<&Path>, o: &Overrides) -> Result<Self> {
        let mut cfg = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                Self::from_toml(&text).with_context(|| format!("parsing config {}", path.display()))?
            }
            None => Self::default(),
        };
        macro_rules! set {
            ($src:expr => $dst:expr) => {
                if let Some(v) = $src.clone() {
                    $dst = v;
                }
            };
        }
        set!(o.dataset => cfg.dataset.name);
        set!(o.dropout => cfg.model.dropout);
        set!(o.epochs => cfg.train.epochs);
        set!(o.lr => cfg.train.lr);
        set!(o.seeds => cfg.output.seeds);
        set!(o.outdir => cfg.output.outdir);
        set!(o.granularity => cfg.prune.granularity);
        set!(o.q => cfg.prune.q);
        set!(o.rounds => cfg.prune.rounds);
        set!(o.method => cfg.prune.method);
        set!(o.passes => cfg.uncertainty.passes);
        if o.init_mu.is_some() {
            cfg.train.init_mu = o.init_mu;
        }
        if o.init_sigma.is_some() {
            cfg.train.init_sigma = o.init_sigma;
        }
        if o.mask_input.is_some() {
            cfg.model.mask_input = o.mask_input;
        }
        cfg.uncertainty.per_sample |= o.per_sample;
        cfg.train.loss = if is_regression(&cfg.dataset.name) {
            LossKind::Mse
        } else {
            LossKind::CrossEntropy
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.output.seeds.is_empty() {
            bail!("at least one seed is required");
        }
        if self.uncertainty.passes == 0 {
            bail!("uncertainty needs at least one pass");
        }
        if let Some(h) = &self.model.hidden {
            if h.is_empty() || h.contains(&0) {
                bail!("hidden widths must be non-empty and positive, got {h:?}");
            }
        }
        Ok(())
    }

    pub fn data_dir(&self) -> PathBuf {
        self.dataset.dir.clone().unwrap_or_else(advdrop::data::data_dir)
    }

    pub fn policy(&self) -> DropoutPolicy {
        match self.model.dropout {
            DropoutKind::Advanced => DropoutPolicy::Advanced(self.model.advanced),
            DropoutKind::Bernoulli => DropoutPolicy::Bernoulli { p: self.model.p },
            DropoutKind::Gaussian => DropoutPolicy::Gaussian { v: self.model.v },
            DropoutKind::None => DropoutPolicy::None,
        }
    }

    pub fn fc_spec(&self, input_dim: usize, output_dim: usize) -> FcSpec {
        let regression = is_regression(&self.dataset.name);
        let hidden = self
            .model
            .hidden
            .clone()
            .unwrap_or_else(|| if regression { vec![50, 50] } else { vec![800, 800] });
        let mut dims = vec![input_dim];
        dims.extend(hidden);
        dims.push(output_dim);
        let mut spec = FcSpec::new(dims, self.policy(), self.model.mask_input.unwrap_or(!regression));
        self.train.apply_init_overrides(&mut spec);
        spec
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            ..self.train.clone()
        }
    }

    /// First 16 hex digits of SHA-256 over everything that determines a
    /// trained model: dataset, model and training sections (seed excluded).
    pub fn hash(&self) -> String {
        #[derive(Serialize)]
        struct Identity<'a> {
            dataset: &'a str,
            model: &'a ModelSection,
            train: TrainConfig,
        }
        let id = Identity {
            dataset: &self.dataset.name,
            model: &self.model,
            train: self.train_config(0),
        };
        let json = serde_json::to_vec(&id).expect("config serializes");
        Sha256::digest(&json)[..8]
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output.outdir.join(self.hash())
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.run_dir().join(seed.to_string())
    }
}
