//! Named-tensor container file.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   b"RQNT"
//! version u32 (1)
//! meta    u64 length + UTF-8 JSON bytes
//! count   u32
//! table   count x { name: u32 len + UTF-8, dtype: u32 (0 = f32, 1 = f64),
//!                   ndim: u32, dims: ndim x u64, offset: u64 }
//! data    tensor payloads, little-endian, at `offset` from the start of data
//! ```
//!
//! Entries are written in sorted-name order, so equal inputs produce
//! byte-identical files.

use std::path::Path;

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::scalar::{DType, Scalar};

const MAGIC: &[u8; 4] = b"RQNT";
const VERSION: u32 = 1;

/// Metadata JSON plus named tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Container<T> {
    pub meta: String,
    pub tensors: ParamStore<T>,
}

pub fn write_container<T: Scalar>(path: &Path, container: &Container<T>) -> Result<()> {
    let bytes = encode(container);
    crate::util::write_atomic(path, &bytes)
}

pub fn read_container<T: Scalar>(path: &Path) -> Result<Container<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|m| Error::format(path, m))
}

pub(crate) fn encode<T: Scalar>(c: &Container<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(c.meta.len() as u64).to_le_bytes());
    out.extend_from_slice(c.meta.as_bytes());
    out.extend_from_slice(&(c.tensors.len() as u32).to_le_bytes());
    let mut offset = 0u64;
    for (name, t) in c.tensors.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&T::DTYPE.code().to_le_bytes());
        out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.extend_from_slice(&offset.to_le_bytes());
        offset += (t.len() * T::DTYPE.size()) as u64;
    }
    for (_, t) in c.tensors.iter() {
        for &v in t.data() {
            v.write_le(&mut out);
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| format!("truncated container at byte {}", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self, len: usize) -> Result<String, String> {
        String::from_utf8(self.take(len)?.to_vec()).map_err(|e| e.to_string())
    }
}

pub(crate) fn decode<T: Scalar>(bytes: &[u8]) -> Result<Container<T>, String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err("not a tensor container (bad magic)".into());
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(format!("unsupported container version {}", version));
    }
    let meta_len = r.u64()? as usize;
    let meta = r.string(meta_len)?;
    let count = r.u32()? as usize;

    let mut table = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = r.string(name_len)?;
        let dtype = DType::from_code(r.u32()?).ok_or("unknown dtype code")?;
        let ndim = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u64()? as usize);
        }
        let offset = r.u64()? as usize;
        table.push((name, dtype, shape, offset));
    }
    let data = &bytes[r.pos..];
    let mut tensors = ParamStore::new();
    for (name, dtype, shape, offset) in table {
        let n: usize = shape.iter().product();
        let size = dtype.size();
        let end = offset
            .checked_add(n * size)
            .filter(|&e| e <= data.len())
            .ok_or_else(|| format!("tensor `{}` extends past end of file", name))?;
        let raw = &data[offset..end];
        let values: Vec<T> = match dtype {
            DType::F32 => raw.chunks_exact(4).map(|b| T::of(f32::read_le(b) as f64)).collect(),
            DType::F64 => raw.chunks_exact(8).map(|b| T::of(f64::read_le(b))).collect(),
        };
        let t = Tensor::new(shape, values).map_err(|e| e.to_string())?;
        tensors.insert(name, t);
    }
    Ok(Container { meta, tensors })
}
