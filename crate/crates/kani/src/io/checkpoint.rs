use std::path::Path;

use kani_core::autodiff::Tensor;
use kani_core::model::ParamStore;

use super::{read_bytes, write_bytes};
use crate::error::{Error, Result};

const HEADER: &[u8] = b"NFCKPT 1\n";

// Record layout after the header and a u32 record count:
// u32 name length, name bytes, u32 rank, rank × u64 dims, f64 values.
pub fn encode_checkpoint(params: &ParamStore) -> Vec<u8> {
    let mut out = HEADER.to_vec();
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::parse(self.path, 0, format!("truncated checkpoint at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<usize> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")) as usize)
    }
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<ParamStore> {
    if !bytes.starts_with(b"NFCKPT ") {
        let found = String::from_utf8_lossy(&bytes[..bytes.len().min(6)]).into_owned();
        return Err(Error::BadMagic { path: path.to_path_buf(), found });
    }
    if !bytes.starts_with(HEADER) {
        let line = bytes.split(|&c| c == b'\n').next().unwrap_or_default();
        return Err(Error::BadVersion { path: path.to_path_buf(), found: String::from_utf8_lossy(line).into_owned() });
    }
    let mut c = Cursor { bytes, pos: HEADER.len(), path };
    let count = c.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = c.u32()?;
        let name = std::str::from_utf8(c.take(len)?).map_err(|_| Error::parse(path, 0, "parameter name is not UTF-8"))?;
        let rank = c.u32()?;
        let shape = (0..rank).map(|_| c.u64()).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = c.take(n * 8)?;
        let data: Vec<f64> = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinitePayload { path: path.to_path_buf(), index });
        }
        store.push(name, Tensor::new(shape, data)?)?;
    }
    if c.pos != bytes.len() {
        return Err(Error::parse(path, 0, "trailing bytes after the last record"));
    }
    Ok(store)
}

pub fn write_checkpoint(params: &ParamStore, path: &Path) -> Result<()> {
    write_bytes(path, &encode_checkpoint(params))
}

pub fn read_checkpoint(path: &Path) -> Result<ParamStore> {
    decode_checkpoint(&read_bytes(path)?, path)
}
