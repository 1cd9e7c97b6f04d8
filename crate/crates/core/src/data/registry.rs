//! Named datasets resolved under a data directory.
//!
//! Layout:
//!
//! ```text
//! <dir>/mnist/{train,t10k}-{images-idx3,labels-idx1}-ubyte
//! <dir>/mnist-10k/…                      same names, 8000/2000 subset
//! <dir>/uci/<name>.csv                   header row, target last
//! ```

use std::path::{Path, PathBuf};

use super::{load_csv, load_idx, split, synthetic, CsvSchema, Dataset, SplitTag, SyntheticKind, TargetColumn};
use crate::error::{Error, Result};

pub const DATA_DIR_ENV: &str = "ADVDROP_DATA_DIR";

pub const UCI_DATASETS: [&str; 4] = ["boston", "concrete", "wine-red", "yacht"];

/// Rows generated for the synthetic sets.
const SYNTHETIC_ROWS: usize = 1000;

/// Train fraction for sets without an official split.
const TRAIN_FRACTION: f64 = 0.8;

/// `$ADVDROP_DATA_DIR`, or `data` relative to the working directory.
pub fn data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"))
}

fn require(path: PathBuf) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::io(
            &path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset file not found"),
        ))
    }
}

fn idx_pair(dir: &Path, prefix: &str) -> Result<Dataset> {
    load_idx(
        require(dir.join(format!("{prefix}-images-idx3-ubyte")))?,
        require(dir.join(format!("{prefix}-labels-idx1-ubyte")))?,
    )
}

/// Loads `(train, test)` for a named dataset. `seed` picks the random split
/// of sets that have no official one.
pub fn load_named(name: &str, dir: &Path, seed: u64) -> Result<(Dataset, Dataset)> {
    let synthetic_kind = match name {
        "two-gaussians" => Some(SyntheticKind::TwoGaussians),
        "xor" => Some(SyntheticKind::Xor),
        "linear-regression" => Some(SyntheticKind::LinearRegression),
        _ => None,
    };
    if let Some(kind) = synthetic_kind {
        let ds = synthetic(kind, SYNTHETIC_ROWS, seed)?;
        return split(&ds, TRAIN_FRACTION, seed);
    }
    match name {
        "mnist" | "mnist-10k" => {
            let d = dir.join(name);
            let mut train = idx_pair(&d, "train")?;
            let mut test = idx_pair(&d, "t10k")?;
            train.split = SplitTag::Train;
            test.split = SplitTag::Test;
            Ok((train, test))
        }
        uci if UCI_DATASETS.contains(&uci) => {
            let path = require(dir.join("uci").join(format!("{uci}.csv")))?;
            let ds = load_csv(path, &TargetColumn::Last, &CsvSchema::default())?;
            split(&ds, TRAIN_FRACTION, seed)
        }
        other => Err(Error::Argument(format!(
            "unknown dataset {other:?}; known: mnist, mnist-10k, {}, two-gaussians, xor, linear-regression",
            UCI_DATASETS.join(", ")
        ))),
    }
}
