//! Binary weight files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "SVAMW1"  u32 count
//! count × { u32 name_len, name bytes (UTF-8), u32 rank, rank × u32 extent, numel × f32 }
//! u64 FNV-1a of every preceding byte
//! ```
//!
//! Entries are written in name order, so equal parameter sets always
//! serialize to identical bytes.

use std::hash::Hasher;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::tensor::{Element, Shape, Tensor};

pub const MAGIC: &[u8; 6] = b"SVAMW1";

fn checksum(bytes: &[u8]) -> u64 {
    let mut h = fnv::FnvHasher::default();
    h.write(bytes);
    h.finish()
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::WeightFormat(format!("value {v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

/// Serializes parameters at 32-bit precision.
pub fn encode<T: Element>(params: &ModelParams<T>) -> Result<Vec<u8>> {
    let mut out = MAGIC.to_vec();
    put_u32(&mut out, params.len())?;
    for (name, t) in params.iter() {
        put_u32(&mut out, name.len())?;
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.dims().len())?;
        for &d in t.dims() {
            put_u32(&mut out, d)?;
        }
        for &v in t.data() {
            out.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
        }
    }
    let sum = checksum(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::WeightFormat(format!("unexpected end of data at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
}

/// Parses and verifies a serialized parameter set.
pub fn decode<T: Element>(bytes: &[u8]) -> Result<ModelParams<T>> {
    if bytes.len() < MAGIC.len() + 4 + 8 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::WeightFormat("bad magic".into()));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(trailer.try_into().expect("8 bytes"));
    if checksum(body) != stored {
        return Err(Error::WeightFormat("checksum mismatch (corrupt or truncated file)".into()));
    }
    let mut r = Reader {
        buf: body,
        pos: MAGIC.len(),
    };
    let count = r.u32()?;
    let mut params = ModelParams::new();
    for _ in 0..count {
        let len = r.u32()?;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::WeightFormat("parameter name is not UTF-8".into()))?
            .to_owned();
        let rank = r.u32()?;
        let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let shape = Shape::new(dims).map_err(|e| Error::WeightFormat(format!("`{name}`: {e}")))?;
        let raw = r.take(shape.numel().checked_mul(4).ok_or_else(|| Error::WeightFormat("size overflow".into()))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| T::from_f64(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
            .collect();
        if params.insert(name.clone(), Tensor::new(shape, data)?).is_some() {
            return Err(Error::WeightFormat(format!("duplicate parameter `{name}`")));
        }
    }
    if r.pos != body.len() {
        return Err(Error::WeightFormat(format!("{} trailing bytes", body.len() - r.pos)));
    }
    Ok(params)
}

pub fn export_weights<T: Element>(params: &ModelParams<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(params)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn import_weights<T: Element>(path: impl AsRef<Path>) -> Result<ModelParams<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Overwrites the entries of `target` named in `loaded`, leaving the rest as
/// they are. Nothing changes unless every name exists in `target` with the
/// same shape. Returns the replaced names.
pub fn load_into<T: Element>(target: &mut ModelParams<T>, loaded: &ModelParams<T>) -> Result<Vec<String>> {
    let unknown: Vec<&str> = loaded.names().filter(|n| !target.contains(n)).collect();
    if !unknown.is_empty() {
        return Err(Error::WeightFormat(format!("unknown parameters: {}", unknown.join(", "))));
    }
    for (name, t) in loaded.iter() {
        let have = target.get(name).expect("checked").shape();
        if have != t.shape() {
            return Err(Error::WeightFormat(format!(
                "`{name}` has shape {} in the file but {have} in the model",
                t.shape()
            )));
        }
    }
    let mut replaced = Vec::with_capacity(loaded.len());
    for (name, t) in loaded.iter() {
        target.insert(name, t.clone());
        replaced.push(name.to_owned());
    }
    Ok(replaced)
}
