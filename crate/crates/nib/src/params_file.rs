//! Binary parameter files.
//!
//! ```text
//! "NIBP"            4 bytes
//! version           u32 LE (currently 1)
//! tensor count      u32 LE
//! per tensor:
//!   name length     u32 LE, then UTF-8 name bytes
//!   rows, cols      u32 LE each
//!   values          rows·cols f64 LE, row-major
//! ```

use std::fs;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use nib_core::net::ParamStore;
use nib_core::Tensor2;

pub const MAGIC: &[u8; 4] = b"NIBP";
pub const VERSION: u32 = 1;

pub fn encode_params(params: &ParamStore) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(p.value.cols() as u32).to_le_bytes());
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .bytes
            .get(self.pos..self.pos + n)
            .with_context(|| format!("params file truncated at byte {}", self.pos))?;
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into()?) as usize)
    }
}

pub fn decode_params(bytes: &[u8]) -> Result<ParamStore> {
    let mut c = Cursor { bytes, pos: 0 };
    ensure!(c.take(4)? == MAGIC, "not a params file (bad magic)");
    let version = c.u32()?;
    if version != VERSION as usize {
        bail!("unsupported params file version {version}");
    }
    let count = c.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = c.u32()?;
        let name = std::str::from_utf8(c.take(len)?).context("tensor name is not UTF-8")?.to_owned();
        let (rows, cols) = (c.u32()?, c.u32()?);
        let data = c
            .take(rows * cols * 8)?
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
            .collect();
        store.insert(name, Tensor2::from_vec(rows, cols, data)?)?;
    }
    ensure!(c.pos == bytes.len(), "trailing data at byte {}", c.pos);
    Ok(store)
}

pub fn write_params(path: &Path, params: &ParamStore) -> Result<()> {
    fs::write(path, encode_params(params)).with_context(|| format!("writing {}", path.display()))
}

pub fn read_params(path: &Path) -> Result<ParamStore> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    decode_params(&bytes).with_context(|| format!("decoding {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut p = ParamStore::new();
        p.insert("a.weight", Tensor2::from_rows(&[[1.5, -0.0, f64::MIN_POSITIVE]])).unwrap();
        p.insert("log_sigma", Tensor2::from_rows(&[[-2.25]])).unwrap();
        let bytes = encode_params(&p);
        let q = decode_params(&bytes).unwrap();
        assert_eq!(encode_params(&q), bytes);
        assert_eq!(q.get("a.weight").unwrap().value, p.get("a.weight").unwrap().value);
    }

    #[test]
    fn rejects_corruption() {
        let mut p = ParamStore::new();
        p.insert("w", Tensor2::zeros(2, 2)).unwrap();
        let bytes = encode_params(&p);
        assert!(decode_params(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_params(&bad).is_err());
    }
}
