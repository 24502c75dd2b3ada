//! `SGNR` checkpoints: model configuration plus every parameter, all
//! little-endian.
//!
//! ```text
//! "SGNR"  version:u32
//! channels sdb_count scale res_blocks attention_ratio : u32
//! lambda1 lambda2 gamma1 gamma2 : f64   seed : u64
//! repeated until end of file, in lexicographic name order:
//!   name_len:u32 name:[u8] rank:u32 extents:[u32; rank] values:[f64]
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{LossWeights, ModelConfig};
use crate::params::ParamStore;

pub const MAGIC: &[u8; 4] = b"SGNR";
pub const VERSION: u32 = 1;
/// Bytes taken by the configuration block.
pub const CONFIG_BYTES: usize = 5 * 4 + 4 * 8 + 8;

fn ckpt_err(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn u32_of(v: usize, what: &str) -> Result<[u8; 4]> {
    u32::try_from(v)
        .map(u32::to_le_bytes)
        .map_err(|_| ckpt_err(format!("{what} {v} does not fit in u32")))
}

pub fn encode(store: &ParamStore, config: &ModelConfig) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(64 + store.num_scalars() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for (v, what) in [
        (config.channels, "channels"),
        (config.sdb_count, "sdb_count"),
        (config.scale, "scale"),
        (config.res_blocks, "res_blocks"),
        (config.attention_ratio, "attention_ratio"),
    ] {
        out.extend_from_slice(&u32_of(v, what)?);
    }
    let w = config.loss;
    for v in [w.lambda1, w.lambda2, w.gamma1, w.gamma2] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&config.seed.to_le_bytes());
    for (name, p) in store.iter() {
        out.extend_from_slice(&u32_of(name.len(), "name length")?);
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&u32_of(p.dims().len(), "rank")?);
        for &d in p.dims() {
            out.extend_from_slice(&u32_of(d, "extent")?);
        }
        for v in p.tensor().data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            ckpt_err(format!(
                "payload mismatch: {what} needs {n} bytes at offset {}, {} remain",
                self.pos,
                self.bytes.len() - self.pos
            ))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        let b = self.take(8, what)?;
        Ok(f64::from_le_bytes(b.try_into().expect("eight bytes")))
    }

    fn at_end(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

pub fn decode(bytes: &[u8]) -> Result<(ParamStore, ModelConfig)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic").ok() != Some(&MAGIC[..]) {
        return Err(ckpt_err("bad magic, not an SGNR checkpoint"));
    }
    let version = r.u32("version")?;
    if version != VERSION as usize {
        return Err(ckpt_err(format!("version {version} is not supported (expected {VERSION})")));
    }
    let channels = r.u32("channels")?;
    let sdb_count = r.u32("sdb_count")?;
    let scale = r.u32("scale")?;
    let res_blocks = r.u32("res_blocks")?;
    let attention_ratio = r.u32("attention_ratio")?;
    let loss = LossWeights {
        lambda1: r.f64("lambda1")?,
        lambda2: r.f64("lambda2")?,
        gamma1: r.f64("gamma1")?,
        gamma2: r.f64("gamma2")?,
    };
    let seed = u64::from_le_bytes(r.take(8, "seed")?.try_into().expect("eight bytes"));
    let config = ModelConfig {
        channels,
        sdb_count,
        scale,
        res_blocks,
        attention_ratio,
        loss,
        seed,
    };

    let mut store = ParamStore::new();
    while !r.at_end() {
        let len = r.u32("name length")?;
        let name = std::str::from_utf8(r.take(len, "name")?).map_err(|_| ckpt_err("parameter name is not UTF-8"))?;
        let rank = r.u32("rank")?;
        let dims = (0..rank).map(|_| r.u32("extent")).collect::<Result<Vec<_>>>()?;
        let count = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| ckpt_err("extent overflow"))?;
        let raw = r.take(count.checked_mul(8).ok_or_else(|| ckpt_err("extent overflow"))?, name)?;
        let data = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("eight bytes"))).collect();
        match store.insert(name, &dims, data) {
            Err(Error::DuplicateParameter(n)) => return Err(ckpt_err(format!("duplicate parameter `{n}`"))),
            other => other.map_err(|e| ckpt_err(format!("parameter `{name}`: {e}")))?,
        }
    }
    Ok((store, config))
}

pub fn save(path: impl AsRef<Path>, store: &ParamStore, config: &ModelConfig) -> Result<()> {
    Ok(fs::write(path, encode(store, config)?)?)
}

pub fn load(path: impl AsRef<Path>) -> Result<(ParamStore, ModelConfig)> {
    decode(&fs::read(path)?)
}
