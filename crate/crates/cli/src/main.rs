//! `advdrop`: train, evaluate and prune networks with advanced dropout.
//!
//! Exit status: 0 success, 1 failure (or a lost distribution check),
//! 2 missing data or checkpoint, 3 quadrature failure, 4 checkpoint/config
//! hash mismatch.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use advdrop::pruning::Granularity;
use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};

use commands::Exit;
use config::{DropoutKind, ExperimentConfig, MethodChoice, Overrides};

#[derive(Parser)]
#[command(name = "advdrop", version, about = "Advanced dropout experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model per seed and write metrics, rates and checkpoints.
    Train(Common),
    /// Evaluate saved checkpoints on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Monte Carlo predictive uncertainty and AUROC of its scores.
    Uncertainty {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Number of stochastic passes.
        #[arg(long = "T")]
        passes: Option<usize>,
        /// Include per-sample means and variances in the report.
        #[arg(long)]
        per_sample: bool,
    },
    /// Iterative rate-guided pruning with reset to initialization.
    Prune {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        granularity: Option<GranularityArg>,
        /// Percent of kept entries pruned per round.
        #[arg(long)]
        q: Option<f64>,
        #[arg(long)]
        rounds: Option<usize>,
        #[arg(long, value_enum)]
        method: Option<MethodChoice>,
    },
    /// Model-free pdf curves and the softplus-Gaussian vs log-normal KL table.
    Distcheck {
        #[arg(long, default_value = "runs")]
        outdir: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// TOML experiment file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long, value_enum)]
    dropout: Option<DropoutKind>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long, allow_hyphen_values = true)]
    init_mu: Option<f64>,
    #[arg(long)]
    init_sigma: Option<f64>,
    #[arg(long, action = clap::ArgAction::Set)]
    mask_input: Option<bool>,
    #[arg(long)]
    outdir: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum GranularityArg {
    Node,
    Parameter,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            dataset: self.dataset.clone(),
            dropout: self.dropout,
            epochs: self.epochs,
            lr: self.lr,
            seeds: self.seeds.clone(),
            init_mu: self.init_mu,
            init_sigma: self.init_sigma,
            mask_input: self.mask_input,
            outdir: self.outdir.clone(),
            ..Default::default()
        }
    }

    fn resolve(&self, extra: impl FnOnce(&mut Overrides)) -> Result<ExperimentConfig> {
        let mut o = self.overrides();
        extra(&mut o);
        ExperimentConfig::resolve(self.config.as_deref(), &o)
    }
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Train(common) => commands::train(&common.resolve(|_| {})?),
        Command::Eval { common, checkpoint } => {
            commands::eval(&common.resolve(|_| {})?, checkpoint.as_deref())
        }
        Command::Uncertainty {
            common,
            checkpoint,
            passes,
            per_sample,
        } => {
            let cfg = common.resolve(|o| {
                o.passes = passes;
                o.per_sample = per_sample;
            })?;
            commands::uncertainty(&cfg, checkpoint.as_deref())
        }
        Command::Prune {
            common,
            granularity,
            q,
            rounds,
            method,
        } => {
            let cfg = common.resolve(|o| {
                o.granularity = granularity.map(|g| match g {
                    GranularityArg::Node => Granularity::Node,
                    GranularityArg::Parameter => Granularity::Parameter,
                });
                o.q = q;
                o.rounds = rounds;
                o.method = method;
            })?;
            commands::prune(&cfg)
        }
        Command::Distcheck { outdir } => commands::distcheck(&outdir),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(e.downcast_ref::<Exit>().map_or(1, |x| x.code))
        }
    }
}
