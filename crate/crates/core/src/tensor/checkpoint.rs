//! Versioned parameter container.
//!
//! Byte layout (all integers little-endian):
//!
//! | field        | size                | content                                   |
//! |--------------|---------------------|-------------------------------------------|
//! | magic        | 8                   | `b"Y2NETCKP"`                             |
//! | version      | 4 (u32)             | [`CHECKPOINT_VERSION`]                    |
//! | config_len   | 4 (u32)             | byte length of the config JSON            |
//! | config       | config_len          | UTF-8 JSON model configuration            |
//! | digest       | 32                  | SHA-256 of the config bytes               |
//! | n_records    | 4 (u32)             | number of parameter records               |
//! | records      | ...                 | `n_records` times the record below        |
//!
//! Record: `name_len` (u16), `name` (UTF-8), `ndim` (u8), `dims` (`ndim` x
//! u32), `values` (product of dims x f32).

use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{ParamSet, Parameter, Scalar, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"Y2NETCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn config_digest(config_json: &str) -> [u8; 32] {
    Sha256::digest(config_json.as_bytes()).into()
}

pub fn encode<T: Scalar>(config_json: &str, params: &ParamSet<T>) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(64 + params.num_values() * 4);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(config_json.len() as u32).to_le_bytes());
    out.extend_from_slice(config_json.as_bytes());
    out.extend_from_slice(&config_digest(config_json));
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params.iter() {
        let name = p.name.as_bytes();
        let name_len = u16::try_from(name.len())
            .map_err(|_| Error::Checkpoint(format!("parameter name too long: {}", p.name)))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name);
        let shape = p.tensor.shape();
        out.push(u8::try_from(shape.len()).map_err(|_| Error::Checkpoint("rank > 255".into()))?);
        for &d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in p.tensor.data() {
            out.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Decode a checkpoint into its config JSON and parameters.
pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<(String, ParamSet<T>)> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = c.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let len = c.u32()? as usize;
    let config = std::str::from_utf8(c.take(len)?)
        .map_err(|e| Error::Checkpoint(format!("config not UTF-8: {e}")))?
        .to_string();
    if c.take(32)? != config_digest(&config) {
        return Err(Error::Checkpoint("config digest mismatch".into()));
    }
    let n = c.u32()?;
    let mut params = ParamSet::new();
    for _ in 0..n {
        let name_len = u16::from_le_bytes(c.take(2)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(c.take(name_len)?)
            .map_err(|e| Error::Checkpoint(format!("name not UTF-8: {e}")))?
            .to_string();
        let ndim = c.take(1)?[0] as usize;
        let shape = (0..ndim).map(|_| c.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let count: usize = shape.iter().product();
        let raw = c.take(count * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| T::from_f64(f32::from_le_bytes(b.try_into().unwrap()) as f64))
            .collect();
        params.push(Parameter::new(name, Tensor::from_vec(shape, data)?))?;
    }
    if c.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    Ok((config, params))
}

pub fn save<T: Scalar>(path: impl AsRef<Path>, config_json: &str, params: &ParamSet<T>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(config_json, params)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load<T: Scalar>(path: impl AsRef<Path>) -> Result<(String, ParamSet<T>)> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamSet<f32> {
        let mut ps = ParamSet::new();
        ps.push(Parameter::new("a.w", Tensor::from_vec(vec![2, 1, 3], vec![1.0, -2.0, 0.5, 3.25, 0.0, -7.0]).unwrap()))
            .unwrap();
        ps.push(Parameter::new("a.b", Tensor::from_vec(vec![3], vec![0.1, 0.2, 0.3]).unwrap()))
            .unwrap();
        ps
    }

    #[test]
    fn byte_layout_header() {
        let bytes = encode("{}", &sample()).unwrap();
        assert_eq!(&bytes[..8], b"Y2NETCKP");
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &2u32.to_le_bytes());
        assert_eq!(&bytes[16..18], b"{}");
        assert_eq!(&bytes[18..50], &config_digest("{}"));
        assert_eq!(&bytes[50..54], &2u32.to_le_bytes());
        // first record: name_len, "a.w", ndim 3, dims 2 1 3, first value 1.0f32
        assert_eq!(&bytes[54..56], &3u16.to_le_bytes());
        assert_eq!(&bytes[56..59], b"a.w");
        assert_eq!(bytes[59], 3);
        assert_eq!(&bytes[60..72], &[2, 0, 0, 0, 1, 0, 0, 0, 3, 0, 0, 0]);
        assert_eq!(&bytes[72..76], &1.0f32.to_le_bytes());
        let total = 54 + (2 + 3 + 1 + 12 + 24) + (2 + 3 + 1 + 4 + 12);
        assert_eq!(bytes.len(), total);
    }

    #[test]
    fn decode_round_trip_and_corruption() {
        let ps = sample();
        let bytes = encode("{\"x\":1}", &ps).unwrap();
        let (cfg, back) = decode::<f32>(&bytes).unwrap();
        assert_eq!(cfg, "{\"x\":1}");
        assert_eq!(back, ps);

        let mut bad = bytes.clone();
        bad[17] ^= 1; // flips a config byte, digest no longer matches
        assert!(decode::<f32>(&bad).is_err());
        assert!(decode::<f32>(&bytes[..bytes.len() - 1]).is_err());
        let mut bad_magic = bytes;
        bad_magic[0] = b'X';
        assert!(decode::<f32>(&bad_magic).is_err());
    }
}
