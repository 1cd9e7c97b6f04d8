//! Numeric CSV tables for regression.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, Targets};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetColumn {
    #[default]
    Last,
    Index(usize),
    Name(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MissingPolicy {
    #[default]
    Error,
    DropRow,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub has_header: bool,
    pub missing: MissingPolicy,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            has_header: true,
            missing: MissingPolicy::Error,
        }
    }
}

fn is_missing(cell: &str) -> bool {
    matches!(cell, "" | "NA" | "NaN" | "nan" | "?")
}

/// Reads a rectangular numeric table. Features are returned raw; [`super::split`]
/// z-scores them with training statistics. Targets are kept in raw units.
pub fn load_csv(path: impl AsRef<Path>, target: &TargetColumn, schema: &CsvSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(schema.has_header)
        .trim(csv::Trim::All)
        .from_reader(file);
    let csv_err = |row: usize, e: csv::Error| Error::Parse {
        path: path.to_path_buf(),
        row,
        col: 0,
        msg: e.to_string(),
    };

    let header: Option<Vec<String>> = if schema.has_header {
        Some(
            reader
                .headers()
                .map_err(|e| csv_err(1, e))?
                .iter()
                .map(str::to_owned)
                .collect(),
        )
    } else {
        None
    };

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (i, rec) in reader.records().enumerate() {
        // 1-based line number in the file
        let line = i + 1 + schema.has_header as usize;
        let rec = rec.map_err(|e| csv_err(line, e))?;
        if *width.get_or_insert(rec.len()) != rec.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                row: line,
                col: rec.len(),
                msg: format!("expected {} columns", width.unwrap_or(0)),
            });
        }
        let mut row = Vec::with_capacity(rec.len());
        let mut missing = false;
        for (j, cell) in rec.iter().enumerate() {
            if is_missing(cell) {
                missing = true;
                if schema.missing == MissingPolicy::Error {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        row: line,
                        col: j + 1,
                        msg: "missing value".into(),
                    });
                }
                continue;
            }
            row.push(cell.parse::<f64>().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                row: line,
                col: j + 1,
                msg: format!("not a number: {cell:?}"),
            })?);
        }
        if !missing {
            rows.push(row);
        }
    }
    let width = width.ok_or_else(|| Error::Format(format!("{}: no data rows", path.display())))?;
    if width < 2 {
        return Err(Error::Format(format!(
            "{}: need at least one feature and a target",
            path.display()
        )));
    }
    let t = match target {
        TargetColumn::Last => width - 1,
        TargetColumn::Index(j) if *j < width => *j,
        TargetColumn::Index(j) => {
            return Err(Error::Index {
                what: "target column",
                index: *j,
                bound: width,
            })
        }
        TargetColumn::Name(name) => header
            .as_ref()
            .and_then(|h| h.iter().position(|c| c == name))
            .ok_or_else(|| Error::Format(format!("{}: no column named {name:?}", path.display())))?,
    };
    let n = rows.len();
    let mut features = Vec::with_capacity(n * (width - 1));
    let mut targets = Vec::with_capacity(n);
    for row in rows {
        for (j, v) in row.into_iter().enumerate() {
            if j == t {
                targets.push(v);
            } else {
                features.push(v);
            }
        }
    }
    Dataset::new(Tensor::new(vec![n, width - 1], features)?, Targets::Values(targets))
}
