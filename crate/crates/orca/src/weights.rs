//! Weights files: the line `ORCAW v1`, then per array a u32 name length,
//! the UTF-8 name, a u32 rank, `rank` u32 extents and the values as
//! little-endian f32. All integers are little-endian.

use std::path::Path;

use orca_core::params::NamedArray;

use crate::error::{io_err, Error, Result};

const MAGIC: &[u8] = b"ORCAW v1\n";

pub fn encode_weights(arrays: &[NamedArray]) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    let u32le = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
    for a in arrays {
        u32le(&mut out, a.name.len());
        out.extend_from_slice(a.name.as_bytes());
        u32le(&mut out, a.shape.len());
        for &e in &a.shape {
            u32le(&mut out, e);
        }
        for v in &a.data {
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
        if self.bytes.len() - self.pos < n {
            return Err(Error::Load(format!("weights truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn decode_weights(bytes: &[u8]) -> Result<Vec<NamedArray>> {
    if !bytes.starts_with(MAGIC) {
        return Err(Error::Load("missing \"ORCAW v1\" header".into()));
    }
    let mut c = Cursor { bytes, pos: MAGIC.len() };
    let mut out = Vec::new();
    while c.pos < bytes.len() {
        let len = c.u32()?;
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|_| Error::Load(format!("array name at byte {} is not UTF-8", c.pos)))?
            .to_string();
        let rank = c.u32()?;
        let shape = (0..rank).map(|_| c.u32()).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = c.take(n * 4)?.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        out.push(NamedArray { name, shape, data });
    }
    Ok(out)
}

pub fn write_weights(path: &Path, arrays: &[NamedArray]) -> Result<()> {
    std::fs::write(path, encode_weights(arrays)).map_err(io_err(path))
}

pub fn read_weights(path: &Path) -> Result<Vec<NamedArray>> {
    decode_weights(&std::fs::read(path).map_err(io_err(path))?)
}
