//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "SLF1"
//! u32 config length, config bytes (UTF-8 key=value lines)
//! u32 tensor count
//! per tensor: u32 name length, name, u32 rank, u64 dims[rank], f64 data[]
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use tensor::{ParameterStore, Tensor};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};

pub const MAGIC: &[u8; 4] = b"SLF1";

fn config_text(c: &ModelConfig) -> String {
    format!(
        "patches={}\ndim={}\nheads={}\nvision_layers={}\nsequence_layers={}\nffn_dim={}\n\
         survival_hidden={}\ncovariates={}\ndropout={:?}\nseed={}\nsequence_position={}\nmax_visits={}\n",
        c.patches,
        c.dim,
        c.heads,
        c.vision_layers,
        c.sequence_layers,
        c.ffn_dim,
        c.survival_hidden,
        c.covariates,
        c.dropout,
        c.seed,
        c.sequence_position,
        c.max_visits
    )
}

fn parse_config(text: &str) -> Result<ModelConfig> {
    let mut map = BTreeMap::new();
    for line in text.lines().filter(|l| !l.is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Input(format!("bad checkpoint config line {line:?}")))?;
        map.insert(k, v);
    }
    fn get<T: std::str::FromStr>(map: &BTreeMap<&str, &str>, key: &str) -> Result<T> {
        map.get(key)
            .ok_or_else(|| Error::Input(format!("checkpoint config lacks {key}")))?
            .parse()
            .map_err(|_| Error::Input(format!("checkpoint config has a bad {key}")))
    }
    let config = ModelConfig {
        patches: get(&map, "patches")?,
        dim: get(&map, "dim")?,
        heads: get(&map, "heads")?,
        vision_layers: get(&map, "vision_layers")?,
        sequence_layers: get(&map, "sequence_layers")?,
        ffn_dim: get(&map, "ffn_dim")?,
        survival_hidden: get(&map, "survival_hidden")?,
        covariates: get(&map, "covariates")?,
        dropout: get(&map, "dropout")?,
        seed: get(&map, "seed")?,
        sequence_position: get(&map, "sequence_position")?,
        max_visits: get(&map, "max_visits")?,
    };
    config.validate()?;
    Ok(config)
}

pub fn encode(model: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    let text = config_text(&model.config);
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for (name, t) in model.params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Input("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<usize> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")) as usize)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Input("checkpoint text is not UTF-8".into()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Input("not a checkpoint (bad magic)".into()));
    }
    let config = parse_config(&r.string()?)?;
    let count = r.u32()?;
    let mut params = ParameterStore::new();
    for _ in 0..count {
        let name = r.string()?;
        let rank = r.u32()?;
        let dims = (0..rank).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let n = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        let n = n.ok_or_else(|| Error::Input(format!("tensor {name} is too large")))?;
        let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Input("tensor too large".into()))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        params.insert(name, Tensor::new(dims, data)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Input("trailing bytes after checkpoint".into()));
    }
    Model::from_parts(config, params)
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, encode(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
