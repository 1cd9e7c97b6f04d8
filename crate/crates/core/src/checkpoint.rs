//! Binary model checkpoints.
//!
//! ```text
//! offset  size  content
//! 0       8     magic "ADVDCKPT"
//! 8       4     format version, u32 little-endian
//! 12      8     header length H, u64 little-endian
//! 20      H     UTF-8 JSON header (see `Header`)
//! 20+H    ...   parameter values then mask values, f64 little-endian,
//!               in header order
//! ```
//!
//! The model is rebuilt from the spec and seed in the header; stored values
//! then overwrite the freshly initialised parameters.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{FcSpec, Model};
use crate::params::ParamGroup;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"ADVDCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub group: ParamGroup,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub config_hash: String,
    pub seed: u64,
    pub spec: FcSpec,
    pub params: Vec<ParamEntry>,
    /// Keys of parameters with a prune mask.
    pub masked: Vec<usize>,
    pub site_running: Vec<Option<(Tensor, Tensor)>>,
}

fn put_f64s(out: &mut Vec<u8>, t: &Tensor) {
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode(model: &Model, config_hash: &str, seed: u64) -> Result<Vec<u8>> {
    let header = Header {
        config_hash: config_hash.to_owned(),
        seed,
        spec: model.spec().clone(),
        params: model
            .params()
            .iter()
            .map(|p| ParamEntry {
                name: p.name.clone(),
                group: p.group,
                shape: p.value.shape().to_vec(),
            })
            .collect(),
        masked: (0..model.params().len()).filter(|&k| model.mask(k).is_some()).collect(),
        site_running: model.site_running(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(20 + json.len() + 8 * model.params().iter().map(|p| p.value.numel()).sum::<usize>());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for p in model.params().iter() {
        put_f64s(&mut out, &p.value);
    }
    for &k in &header.masked {
        put_f64s(&mut out, model.mask(k).expect("listed as masked"));
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!("checkpoint truncated at byte {} (wanted {n} more)", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn tensor(&mut self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let raw = self.take(n * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Tensor::new(shape.to_vec(), data)
    }
}

/// Reads only the header.
pub fn decode_header(bytes: &[u8]) -> Result<(Header, usize)> {
    let mut c = Cursor { bytes, pos: 0 };
    let magic = c.take(8)?;
    if magic != MAGIC {
        return Err(Error::Format(format!("not a checkpoint: magic {magic:02x?}")));
    }
    let version = u32::from_le_bytes(c.take(4)?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Format(format!("checkpoint version {version}, expected {VERSION}")));
    }
    let len = u64::from_le_bytes(c.take(8)?.try_into().expect("8 bytes")) as usize;
    let header: Header = serde_json::from_slice(c.take(len)?)?;
    Ok((header, c.pos))
}

pub fn decode(bytes: &[u8]) -> Result<(Model, Header)> {
    let (header, pos) = decode_header(bytes)?;
    let mut model = Model::build(header.spec.clone(), header.seed)?;
    if model.params().len() != header.params.len() {
        return Err(Error::Consistency(format!(
            "checkpoint lists {} parameters, its spec builds {}",
            header.params.len(),
            model.params().len()
        )));
    }
    let mut c = Cursor { bytes, pos };
    for (k, entry) in header.params.iter().enumerate() {
        let p = model.params().get(k);
        if p.name != entry.name || p.value.shape() != entry.shape.as_slice() {
            return Err(Error::Consistency(format!(
                "checkpoint parameter {} {:?} does not match {} {:?}",
                entry.name,
                entry.shape,
                p.name,
                p.value.shape()
            )));
        }
        *model.params_mut().value_mut(k) = c.tensor(&entry.shape)?;
    }
    for &k in &header.masked {
        let shape = header
            .params
            .get(k)
            .ok_or(Error::Index {
                what: "masked parameter",
                index: k,
                bound: header.params.len(),
            })?
            .shape
            .clone();
        let mask = c.tensor(&shape)?;
        model.set_mask(k, mask)?;
    }
    if c.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after checkpoint data",
            bytes.len() - c.pos
        )));
    }
    model.set_site_running(header.site_running.clone())?;
    Ok((model, header))
}

pub fn save(path: impl AsRef<Path>, model: &Model, config_hash: &str, seed: u64) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(model, config_hash, seed)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<(Model, Header)> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
