//! Big-endian IDX image and label files.

use std::path::Path;

use super::{Dataset, Normalization, Targets};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format(format!("{}: truncated header", path.display())))
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let found = be_u32(bytes, 0, path)?;
    if found != expected {
        return Err(Error::Magic {
            path: path.to_path_buf(),
            found,
            expected,
        });
    }
    Ok(())
}

/// Loads an image file and its label file. Pixels are divided by 255 and
/// each image is flattened to one row.
pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images.as_ref(), labels.as_ref());
    let ib = read(ip)?;
    let lb = read(lp)?;
    check_magic(&ib, IMAGE_MAGIC, ip)?;
    check_magic(&lb, LABEL_MAGIC, lp)?;

    let n = be_u32(&ib, 4, ip)? as usize;
    let rows = be_u32(&ib, 8, ip)? as usize;
    let cols = be_u32(&ib, 12, ip)? as usize;
    let d = rows * cols;
    let pixels = ib.get(16..16 + n * d).ok_or_else(|| {
        Error::Format(format!(
            "{}: expected {} pixel bytes, found {}",
            ip.display(),
            n * d,
            ib.len().saturating_sub(16)
        ))
    })?;

    let nl = be_u32(&lb, 4, lp)? as usize;
    if nl != n {
        return Err(Error::Consistency(format!(
            "{} holds {n} images but {} holds {nl} labels",
            ip.display(),
            lp.display()
        )));
    }
    let raw_labels = lb.get(8..8 + n).ok_or_else(|| {
        Error::Format(format!("{}: expected {n} label bytes", lp.display()))
    })?;

    let features = Tensor::new(vec![n, d], pixels.iter().map(|&p| p as f64 / 255.0).collect())?;
    let labels: Vec<usize> = raw_labels.iter().map(|&l| l as usize).collect();
    let n_classes = labels.iter().max().map_or(0, |m| m + 1).max(10);
    let mut ds = Dataset::new(features, Targets::Classes { labels, n_classes })?;
    ds.normalization = Some(Normalization::Scale { factor: 255.0 });
    Ok(ds)
}
