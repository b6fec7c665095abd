//! Binary parameter checkpoints.
//!
//! Layout (little-endian throughout):
//!
//! ```text
//! "MCST" | version: u32 | count: u32
//! count × { name_len: u16 | name: utf-8 | rank: u8 | extents: rank × u64 | payload: f64 × prod(extents) }
//! ```

use std::fs;
use std::path::Path;

use crate::codec::Reader;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{numel, Tensor};

pub const MAGIC: &[u8; 4] = b"MCST";
pub const VERSION: u32 = 1;

pub fn encode(store: &ParamStore) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + store.numel() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for p in store.iter() {
        let name = p.name.as_bytes();
        let name_len = u16::try_from(name.len())
            .map_err(|_| Error::Contract(format!("parameter name too long: {}", p.name)))?;
        let rank = u8::try_from(p.value.rank())
            .map_err(|_| Error::Contract(format!("rank of {} exceeds 255", p.name)))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name);
        out.push(rank);
        for &e in p.value.shape() {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<ParamStore> {
    let mut r = Reader::new(bytes);
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Format {
            offset: 0,
            detail: "not an MCST checkpoint".into(),
        });
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Format {
            offset: 4,
            detail: format!("unsupported checkpoint version {version}"),
        });
    }
    let count = r.u32("parameter count")?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let at = r.pos;
        let len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Format {
                offset: at + 2,
                detail: "parameter name is not utf-8".into(),
            })?
            .to_string();
        let rank = r.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64("extent")? as usize);
        }
        let n = numel(&shape);
        let payload = r.take(n.saturating_mul(8), "payload")?;
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        store
            .add(name, Tensor::new(shape, data)?)
            .map_err(|e| Error::Format {
                offset: at,
                detail: e.to_string(),
            })?;
    }
    if r.pos != bytes.len() {
        return Err(Error::Format {
            offset: r.pos,
            detail: "trailing bytes after last parameter".into(),
        });
    }
    Ok(store)
}

pub fn save(store: &ParamStore, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(store)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<ParamStore> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
