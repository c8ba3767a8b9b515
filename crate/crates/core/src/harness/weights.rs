//! Binary weight files.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "EFCN"  u8 version=1  u32 count
//! count x { u16 name_len  name (UTF-8)  u8 rank  rank x u32 dim  prod(dims) x f32 }
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"EFCN";
pub const VERSION: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

pub fn encode(tensors: &[NamedTensor]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    let count = u32::try_from(tensors.len()).map_err(|_| Error::Validation("too many tensors".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for t in tensors {
        let name = t.name.as_bytes();
        let len = u16::try_from(name.len()).map_err(|_| Error::Validation(format!("name too long: {}", t.name)))?;
        let rank = u8::try_from(t.dims.len()).map_err(|_| Error::Validation(format!("rank too high: {}", t.name)))?;
        if t.dims.iter().product::<usize>() != t.data.len() {
            return Err(Error::Validation(format!(
                "{}: dims {:?} do not match {} values",
                t.name,
                t.dims,
                t.data.len()
            )));
        }
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name);
        out.push(rank);
        for &d in &t.dims {
            let d = u32::try_from(d).map_err(|_| Error::Validation(format!("dimension too large: {}", t.name)))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos,
                msg: format!("truncated {what}: need {n} bytes, {} left", self.buf.len() - self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

pub fn decode(buf: &[u8]) -> Result<Vec<NamedTensor>> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: "bad magic".into(),
        });
    }
    let version = r.u8("version")?;
    if version != VERSION {
        return Err(Error::Format {
            offset: 4,
            msg: format!("unsupported version {version}"),
        });
    }
    let count = r.u32("tensor count")?;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = r.u16("name length")? as usize;
        let at = r.pos;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|e| Error::Format {
                offset: at,
                msg: format!("name is not UTF-8: {e}"),
            })?
            .to_string();
        let rank = r.u8("rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32("dimension")? as usize);
        }
        let numel: usize = dims.iter().product();
        let bytes = r.take(numel.saturating_mul(4), "tensor data")?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        out.push(NamedTensor { name, dims, data });
    }
    if r.pos != buf.len() {
        return Err(Error::Format {
            offset: r.pos,
            msg: format!("{} trailing bytes", buf.len() - r.pos),
        });
    }
    Ok(out)
}

pub fn save_weights(tensors: &[NamedTensor], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(tensors)?).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<Vec<NamedTensor>> {
    let path = path.as_ref();
    decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Every parameter, running statistics included, in store order.
pub fn store_to_named<T: Scalar>(store: &ParamStore<T>) -> Vec<NamedTensor> {
    store
        .iter()
        .map(|(_, p)| NamedTensor {
            name: p.name.clone(),
            dims: p.dims.clone(),
            data: p.tensor.data().iter().map(|v| v.to_f64_lossy() as f32).collect(),
        })
        .collect()
}

/// Overwrites every parameter of `store` from `tensors`, matching by name.
pub fn load_into_store<T: Scalar>(store: &mut ParamStore<T>, tensors: &[NamedTensor]) -> Result<()> {
    for p in store.iter_mut() {
        let t = tensors
            .iter()
            .find(|t| t.name == p.name)
            .ok_or_else(|| Error::Validation(format!("weights lack parameter {}", p.name)))?;
        if t.dims != p.dims {
            return Err(Error::Validation(format!(
                "parameter {} has dims {:?} in the file, expected {:?}",
                p.name, t.dims, p.dims
            )));
        }
        for (dst, &v) in p.tensor.data_mut().iter_mut().zip(&t.data) {
            *dst = T::of(v as f64);
        }
    }
    Ok(())
}
