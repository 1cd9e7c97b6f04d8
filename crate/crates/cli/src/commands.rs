use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use advdrop::checkpoint;
use advdrop::data::{load_named, Dataset, DATA_DIR_ENV};
use advdrop::distributions::{compare_approximations, FitMethod, ModelFreeDist};
use advdrop::eval;
use advdrop::network::Model;
use advdrop::pruning::{lottery_cycle, points_csv, Granularity, PruneMethod};
use advdrop::training::fit_with;
use advdrop::Error;
use anyhow::{Context, Result};
use serde_json::json;

use crate::config::{is_regression, ExperimentConfig, MethodChoice};

/// An error that maps to a specific process exit status.
#[derive(Debug)]
pub struct Exit {
    pub code: u8,
    pub msg: String,
}

impl Exit {
    pub fn new(code: u8, msg: impl Into<String>) -> Self {
        Exit { code, msg: msg.into() }
    }
}

impl std::fmt::Display for Exit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.msg)
    }
}

impl std::error::Error for Exit {}

pub const EXIT_MISSING_INPUT: u8 = 2;
pub const EXIT_QUADRATURE: u8 = 3;
pub const EXIT_HASH_MISMATCH: u8 = 4;

/// Parameter settings of the model-free pdf curves.
pub const PDF_SETTINGS: [(f64, f64); 5] = [(0.0, 3.0), (0.0, 1.6), (0.0, 150.0), (0.0, 1.0), (-1.0, 1.0)];

/// Inverse-gamma `(k, θ)` targets of the approximation table.
pub const KL_TARGETS: [(f64, f64); 4] = [(5.0, 0.1), (8.0, 0.1), (2.0, 0.5), (0.5, 3.0)];

fn missing(path: &Path, what: &str) -> anyhow::Error {
    Exit::new(
        EXIT_MISSING_INPUT,
        format!("missing {what}: {} (set {DATA_DIR_ENV} or run scripts/prepare_data.py)", path.display()),
    )
    .into()
}

fn load_data(cfg: &ExperimentConfig, seed: u64) -> Result<(Dataset, Dataset)> {
    load_named(&cfg.dataset.name, &cfg.data_dir(), seed).map_err(|e| match e {
        Error::Io { path, .. } => missing(&path, "data file"),
        other => other.into(),
    })
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write(path, text)
}

/// Appends `seed` and `config_hash` columns to a CSV with a header row.
fn tag_csv(csv: &str, seed: u64, hash: &str) -> String {
    let mut out = String::with_capacity(csv.len() * 2);
    for (i, line) in csv.lines().enumerate() {
        if i == 0 {
            let _ = writeln!(out, "{line},seed,config_hash");
        } else {
            let _ = writeln!(out, "{line},{seed},{hash}");
        }
    }
    out
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn metric_name(cfg: &ExperimentConfig) -> &'static str {
    if is_regression(&cfg.dataset.name) {
        "rmse"
    } else {
        "accuracy"
    }
}

pub fn train(cfg: &ExperimentConfig) -> Result<u8> {
    let hash = cfg.hash();
    let run_dir = cfg.run_dir();
    fs::create_dir_all(&run_dir).with_context(|| format!("creating {}", run_dir.display()))?;
    write(&run_dir.join("config.toml"), cfg.to_toml()?)?;

    let mut finals = Vec::new();
    for &seed in &cfg.output.seeds {
        let (train, test) = load_data(cfg, seed)?;
        let spec = cfg.fc_spec(train.dim(), train.output_dim());
        let mut model = Model::build(spec, seed)?;
        let mut rec = fit_with(&mut model, &train, Some(&test), &cfg.train_config(seed), |row, _| {
            let rates: Vec<String> = row.rates.iter().map(|r| format!("{}={:.3}", r.layer, r.rate)).collect();
            eprintln!(
                "seed {seed} epoch {:>3} loss {:.4} test {:.4} {}",
                row.epoch,
                row.train_loss,
                row.test_accuracy.or(row.test_rmse).unwrap_or(f64::NAN),
                rates.join(" ")
            );
            Ok(())
        })?;
        rec.config_hash = Some(hash.clone());
        let metric = rec.final_metric().context("training produced no test metric")?;

        let dir = cfg.seed_dir(seed);
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        write(&dir.join("metrics.jsonl"), rec.to_jsonl(false)?)?;
        write(&dir.join("rates.csv"), tag_csv(&rec.rates_csv(), seed, &hash))?;
        checkpoint::save(dir.join("checkpoint"), &model, &hash, seed)?;
        write_json(
            &dir.join("summary.json"),
            &json!({
                "config_hash": hash,
                "seed": seed,
                "dataset": cfg.dataset.name,
                "dropout": cfg.policy().name(),
                "epochs": cfg.train.epochs,
                "final_test": rec.final_test,
                "final_rates": rec.final_rates(),
            }),
        )?;
        let mut timing = String::from("epoch,seconds\n");
        for row in &rec.rows {
            let _ = writeln!(timing, "{},{}", row.epoch, row.seconds);
        }
        write(&dir.join("timing.log"), timing)?;

        println!("seed {seed}: test {} {}", metric_name(cfg), fmt_metric(cfg, metric));
        finals.push(metric);
    }

    let (mean, std) = mean_std(&finals);
    write_json(
        &run_dir.join("summary.json"),
        &json!({
            "config_hash": hash,
            "dataset": cfg.dataset.name,
            "dropout": cfg.policy().name(),
            "seeds": cfg.output.seeds,
            "metric": metric_name(cfg),
            "values": finals,
            "mean": mean,
            "std": std,
        }),
    )?;
    if is_regression(&cfg.dataset.name) {
        println!("rmse mean±std: {mean:.4}±{std:.4}");
    } else {
        println!("acc mean±std: {:.2}±{:.2}", 100.0 * mean, 100.0 * std);
    }
    println!("outputs: {}", run_dir.display());
    Ok(0)
}

fn fmt_metric(cfg: &ExperimentConfig, v: f64) -> String {
    if is_regression(&cfg.dataset.name) {
        format!("{v:.4}")
    } else {
        format!("{:.2}%", 100.0 * v)
    }
}

/// Checkpoints named on the command line, or those of every configured seed.
fn checkpoint_paths(cfg: &ExperimentConfig, explicit: Option<&Path>) -> Vec<PathBuf> {
    match explicit {
        Some(p) => vec![p.to_path_buf()],
        None => cfg.output.seeds.iter().map(|&s| cfg.seed_dir(s).join("checkpoint")).collect(),
    }
}

fn open_checkpoint(cfg: &ExperimentConfig, path: &Path) -> Result<(Model, checkpoint::Header)> {
    let (model, header) = checkpoint::load(path).map_err(|e| match e {
        Error::Io { path, .. } => missing(&path, "checkpoint"),
        other => other.into(),
    })?;
    let hash = cfg.hash();
    if header.config_hash != hash {
        return Err(Exit::new(
            EXIT_HASH_MISMATCH,
            format!(
                "checkpoint {} was written under config {}, the current config hashes to {hash}",
                path.display(),
                header.config_hash
            ),
        )
        .into());
    }
    Ok((model, header))
}

fn out_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."))
}

pub fn eval(cfg: &ExperimentConfig, explicit: Option<&Path>) -> Result<u8> {
    for path in checkpoint_paths(cfg, explicit) {
        let (mut model, header) = open_checkpoint(cfg, &path)?;
        let (_, test) = load_data(cfg, header.seed)?;
        let m = eval::evaluate(&mut model, &test)?;
        write_json(
            &out_dir(&path).join("eval.json"),
            &json!({
                "config_hash": header.config_hash,
                "seed": header.seed,
                "loss": m.loss,
                "accuracy": m.accuracy,
                "rmse": m.rmse,
            }),
        )?;
        let v = m.accuracy.or(m.rmse).unwrap_or(f64::NAN);
        println!("seed {}: test {} {} loss {:.4}", header.seed, metric_name(cfg), fmt_metric(cfg, v), m.loss);
    }
    Ok(0)
}

pub fn uncertainty(cfg: &ExperimentConfig, explicit: Option<&Path>) -> Result<u8> {
    for path in checkpoint_paths(cfg, explicit) {
        let (mut model, header) = open_checkpoint(cfg, &path)?;
        if !model.has_advanced_sites() {
            anyhow::bail!("uncertainty estimation needs a model with advanced dropout sites");
        }
        let (_, test) = load_data(cfg, header.seed)?;
        let passes = cfg.uncertainty.passes;
        let (summary, report) = eval::uncertainty_eval(&mut model, &test, passes, header.seed)?;
        let per_sample_var = report.variance_summary();
        let mean_variance = per_sample_var.iter().sum::<f64>() / per_sample_var.len() as f64;
        let mut doc = json!({
            "config_hash": header.config_hash,
            "seed": header.seed,
            "passes": passes,
            "accuracy": summary.accuracy,
            "auroc_maxP": summary.auroc_max_p,
            "auroc_entropy": summary.auroc_entropy,
            "mean_variance": mean_variance,
        });
        if cfg.uncertainty.per_sample {
            doc["per_sample"] = json!({
                "mean": report.mean,
                "variance": report.variance,
                "max_p": report.max_p,
                "entropy": report.entropy,
            });
        }
        let dir = out_dir(&path);
        write_json(&dir.join("uncertainty.json"), &doc)?;
        let mut csv = String::from("true,pred,count,fraction\n");
        for (t, row) in summary.confusion.iter().enumerate() {
            for (p, &c) in row.iter().enumerate() {
                let _ = writeln!(csv, "{t},{p},{c},{}", summary.confusion_normalized[t][p]);
            }
        }
        write(&dir.join("confusion.csv"), tag_csv(&csv, header.seed, &header.config_hash))?;
        println!(
            "seed {}: T={passes} accuracy {:.2}% auroc maxP {:.4} auroc entropy {:.4}",
            header.seed,
            100.0 * summary.accuracy,
            summary.auroc_max_p,
            summary.auroc_entropy
        );
    }
    Ok(0)
}

pub fn prune(cfg: &ExperimentConfig) -> Result<u8> {
    let hash = cfg.hash();
    let p = &cfg.prune;
    let methods: &[PruneMethod] = match p.method {
        MethodChoice::Rate => &[PruneMethod::Rate],
        MethodChoice::Random => &[PruneMethod::Random],
        MethodChoice::Both => &[PruneMethod::Rate, PruneMethod::Random],
    };
    let gran = match p.granularity {
        Granularity::Node => "node",
        Granularity::Parameter => "parameter",
    };
    fs::create_dir_all(cfg.run_dir())?;
    write(&cfg.run_dir().join("config.toml"), cfg.to_toml()?)?;
    for &seed in &cfg.output.seeds {
        let (train, test) = load_data(cfg, seed)?;
        let spec = cfg.fc_spec(train.dim(), train.output_dim());
        let dir = cfg.seed_dir(seed);
        fs::create_dir_all(&dir)?;
        for &method in methods {
            let points = lottery_cycle(
                &spec,
                seed,
                &train,
                &test,
                &cfg.train_config(seed),
                p.rounds,
                p.q,
                p.granularity,
                method,
            )?;
            let name = match method {
                PruneMethod::Rate => "rate",
                PruneMethod::Random => "random",
            };
            let file = dir.join(format!("prune-{gran}-{name}-q{}-r{}.csv", p.q, p.rounds));
            write(&file, tag_csv(&points_csv(&points), seed, &hash))?;
            for pt in &points {
                println!(
                    "seed {seed} {name:>6} round {} kept {:.4} {} {}",
                    pt.round,
                    pt.kept_fraction,
                    metric_name(cfg),
                    fmt_metric(cfg, pt.metric)
                );
            }
        }
    }
    Ok(0)
}

fn quadrature_failure(e: Error) -> anyhow::Error {
    match e {
        Error::Numerical(_) | Error::Divergence(_) => {
            Exit::new(EXIT_QUADRATURE, format!("quadrature failed: {e}")).into()
        }
        other => other.into(),
    }
}

pub fn distcheck(outdir: &Path) -> Result<u8> {
    let dir = outdir.join("distcheck");
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    for (mu, sigma) in PDF_SETTINGS {
        let d = ModelFreeDist::new(mu, sigma);
        let mut csv = String::from("m,pdf\n");
        for i in 0..1000 {
            let m = (i as f64 + 0.5) / 1000.0;
            let _ = writeln!(csv, "{m},{}", d.pdf(m)?);
        }
        write(&dir.join(format!("pdf_mu{mu}_sigma{sigma}.csv")), csv)?;
    }

    let rows = compare_approximations(&KL_TARGETS).map_err(quadrature_failure)?;
    let mut csv = String::from("k,theta,method,sg_m,sg_s,ln_m,ln_s,kl_softplus_gaussian,kl_log_normal,winner,note\n");
    let mut lost = Vec::new();
    println!("{:>5} {:>5} {:>8} {:>14} {:>14}  winner", "k", "theta", "method", "KL(IG||SG)", "KL(IG||LN)");
    for r in &rows {
        let winner = if r.softplus_gaussian_wins() { "softplus-gaussian" } else { "log-normal" };
        let (method, note) = match r.method {
            FitMethod::Moments => ("moments", ""),
            FitMethod::Mode => ("mode", "moments undefined, mode-matched"),
        };
        if r.method == FitMethod::Moments && !r.softplus_gaussian_wins() {
            lost.push((r.k, r.theta));
        }
        let _ = writeln!(
            csv,
            "{},{},{method},{},{},{},{},{},{},{winner},{note}",
            r.k,
            r.theta,
            r.softplus_gaussian.0,
            r.softplus_gaussian.1,
            r.log_normal.0,
            r.log_normal.1,
            r.kl_softplus_gaussian,
            r.kl_log_normal
        );
        println!(
            "{:>5} {:>5} {method:>8} {:>14.6e} {:>14.6e}  {winner}",
            r.k, r.theta, r.kl_softplus_gaussian, r.kl_log_normal
        );
    }
    write(&dir.join("kl_table.csv"), csv)?;
    println!("outputs: {}", dir.display());
    if lost.is_empty() {
        Ok(0)
    } else {
        eprintln!("softplus-Gaussian is not closer on moment-matched targets {lost:?}");
        Ok(1)
    }
}
