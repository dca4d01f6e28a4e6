//! Parameter archive.
//!
//! ```text
//! "ACMCKPT\0"  u32 version  u32 meta_len  meta (JSON)  u32 count
//! count × { u32 name_len  name  u8 dtype  u8 ndim  ndim × u32 dim  data (LE) }
//! ```
//! Only dtype 1 (f64) is written; it round-trips bit-exactly.

use std::path::Path;

use acm_core::{ModelBundle, Preset, Tensor};
use serde::{Deserialize, Serialize};

use crate::config::AttentionSpec;
use crate::error::{self, Error, Result};

pub const MAGIC: &[u8; 8] = b"ACMCKPT\0";
pub const VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub preset: String,
    pub in_channels: usize,
    pub attention: AttentionSpec,
    /// Optimizer steps taken when the checkpoint was written.
    pub step: u64,
}

pub fn encode(bundle: &ModelBundle, step: u64) -> Vec<u8> {
    let meta = CheckpointMeta {
        preset: bundle.preset.to_string(),
        in_channels: bundle.in_channels,
        attention: bundle.attention.into(),
        step,
    };
    let meta = serde_json::to_vec(&meta).expect("metadata serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta);
    out.extend_from_slice(&(bundle.params.len() as u32).to_le_bytes());
    for (name, t) in bundle.params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(DTYPE_F64);
        out.push(t.ndim() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
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
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::format(self.path, format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Rebuilds the model stored in `bytes`.
pub fn decode(bytes: &[u8], path: &Path) -> Result<(ModelBundle, CheckpointMeta)> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(8)? != MAGIC {
        return Err(Error::format(path, "not a checkpoint (bad magic)"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
    }
    let meta_len = r.u32()? as usize;
    let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len)?).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    let preset: Preset = meta.preset.parse()?;
    let mut bundle = ModelBundle::new(preset, meta.in_channels, meta.attention.into(), 0)?;

    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::format(path, "parameter name is not UTF-8"))?
            .to_owned();
        let dtype = r.u8()?;
        if dtype != DTYPE_F64 {
            return Err(Error::format(path, format!("{name}: unsupported dtype {dtype}")));
        }
        let ndim = r.u8()? as usize;
        let shape = (0..ndim).map(|_| Ok(r.u32()? as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = r
            .take(n * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        entries.push((name, Tensor::new(&shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes after last parameter"));
    }
    bundle.load_params(entries.iter().map(|(n, t)| (n.as_str(), t.clone())))?;
    Ok((bundle, meta))
}

pub fn save(path: &Path, bundle: &ModelBundle, step: u64) -> Result<()> {
    error::write(path, &encode(bundle, step))
}

pub fn load(path: &Path) -> Result<(ModelBundle, CheckpointMeta)> {
    decode(&error::read(path)?, path)
}
