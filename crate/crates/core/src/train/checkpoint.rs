//! Binary checkpoint: magic and version, a JSON header with the
//! configuration, vocabularies and tag frequencies, then every parameter
//! as name, shape and little-endian `f32` values.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{FrequencyTable, TagOrder, Vocab};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"TAGSEQCK";
pub const VERSION: u32 = 1;

/// A trained model together with everything needed to use it.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub source_vocab: Vocab,
    pub target_vocab: Vocab,
    pub freq: FrequencyTable,
    pub order: TagOrder,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    order: TagOrder,
    seed: u64,
    source_vocab: Vocab,
    target_vocab: Vocab,
    freq: FrequencyTable,
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated while reading {what} at byte {}", self.at))
        })?;
        let out = &self.buf[self.at..end];
        self.at = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        usize::try_from(self.u64(what)?).map_err(|_| Error::Checkpoint(format!("{what} does not fit in memory")))
    }
}

impl Checkpoint {
    /// Training-set tag inventory.
    pub fn inventory(&self) -> BTreeSet<String> {
        self.freq.iter().map(|(t, _)| t.to_string()).collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&Header {
            model: self.model.config().clone(),
            order: self.order,
            seed: self.seed,
            source_vocab: self.source_vocab.clone(),
            target_vocab: self.target_vocab.clone(),
            freq: self.freq.clone(),
        })?;
        let params = self.model.params();
        let mut out = Vec::with_capacity(header.len() + 4 * params.numel() + 64);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(params.len() as u64).to_le_bytes());
        for (name, t) in params.iter() {
            out.extend_from_slice(&(name.len() as u64).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u64).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in t.data() {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, at: 0 };
        let magic = r.take(MAGIC.len(), "magic")?;
        if magic != MAGIC {
            return Err(Error::CheckpointHeader {
                expected: String::from_utf8_lossy(MAGIC).into_owned(),
                found: String::from_utf8_lossy(magic).into_owned(),
            });
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::CheckpointHeader {
                expected: format!("version {VERSION}"),
                found: format!("version {version}"),
            });
        }
        let n = r.len("header length")?;
        let header: Header = serde_json::from_slice(r.take(n, "header")?)?;

        let count = r.len("parameter count")?;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let n = r.len("name length")?;
            let name = std::str::from_utf8(r.take(n, "name")?)
                .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
                .to_string();
            let rank = r.len("rank")?;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(r.len("shape")?);
            }
            let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| {
                Error::Checkpoint(format!("shape {shape:?} of `{name}` overflows"))
            })?;
            let raw = r.take(numel.checked_mul(4).unwrap_or(usize::MAX), &format!("values of `{name}`"))?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect();
            params.insert(name, Tensor::new(shape, data)?)?;
        }
        if r.at != buf.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - r.at)));
        }
        Ok(Checkpoint {
            model: Model::from_params(header.model, params)?,
            source_vocab: header.source_vocab,
            target_vocab: header.target_vocab,
            freq: header.freq,
            order: header.order,
            seed: header.seed,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&buf)
    }
}
