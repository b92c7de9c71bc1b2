//! Binary parameter archive.
//!
//! Layout, all integers little-endian: magic `LPCA`, version u32, entry
//! count u32, then per entry name length u32, UTF-8 name, dtype tag u8,
//! rank u8, dims u32×rank, payload; finally CRC32 of every preceding byte.

use std::fs;
use std::path::Path;

use lpca_tensor::{DType, Element, Module, ModuleExt, Shape, Tensor};

use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"LPCA";
pub const VERSION: u32 = 1;

pub fn encode<T: Element>(entries: &[(String, Tensor<T>)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(T::DTYPE.tag());
        let dims = t.shape().dims();
        out.push(dims.len() as u8);
        for d in dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            v.write_le(&mut out);
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail(&self, reason: impl Into<String>) -> Error {
        Error::Format {
            what: "checkpoint".into(),
            offset: self.pos,
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.fail("truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode<T: Element>(bytes: &[u8]) -> Result<Vec<(String, Tensor<T>)>> {
    if bytes.len() < 16 {
        return Err(Error::Format {
            what: "checkpoint".into(),
            offset: bytes.len(),
            reason: "file too short".into(),
        });
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(Error::Format {
            what: "checkpoint".into(),
            offset: body.len(),
            reason: "CRC mismatch".into(),
        });
    }
    let mut r = Reader { bytes: body, pos: 0 };
    if r.take(4)? != MAGIC {
        r.pos = 0;
        return Err(r.fail("bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(r.fail(format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| r.fail("name is not UTF-8"))?
            .to_string();
        let tag = r.u8()?;
        match DType::from_tag(tag) {
            Some(d) if d == T::DTYPE => {}
            Some(d) => return Err(r.fail(format!("{name}: stored as {d:?}, expected {:?}", T::DTYPE))),
            None => return Err(r.fail(format!("{name}: unknown dtype tag {tag}"))),
        }
        let rank = r.u8()?;
        if rank != 4 {
            return Err(r.fail(format!("{name}: rank {rank}, expected 4")));
        }
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = r.u32()? as usize;
        }
        let shape = Shape::from_dims(dims).map_err(|e| r.fail(format!("{name}: {e}")))?;
        let width = match T::DTYPE {
            DType::F32 => 4,
            DType::F64 => 8,
        };
        let payload = r.take(shape.numel().checked_mul(width).ok_or_else(|| r.fail("size overflow"))?)?;
        let data = payload.chunks_exact(width).map(T::read_le).collect();
        entries.push((name, Tensor::new(shape, data)?));
    }
    if r.pos != body.len() {
        return Err(r.fail("trailing bytes before CRC"));
    }
    Ok(entries)
}

/// Write via a temporary file and rename so a crash never leaves a torn
/// checkpoint behind.
pub fn save<T: Element, M: Module<T> + ?Sized>(model: &M, path: &Path) -> Result<()> {
    save_entries(&model.state(), path)
}

pub fn save_entries<T: Element>(entries: &[(String, Tensor<T>)], path: &Path) -> Result<()> {
    let bytes = encode(entries);
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read<T: Element>(path: &Path) -> Result<Vec<(String, Tensor<T>)>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Load into `model`; a name or shape mismatch is rejected with the
/// differences listed.
pub fn load<T: Element, M: Module<T> + ?Sized>(model: &mut M, path: &Path) -> Result<()> {
    let entries = read::<T>(path)?;
    model.load_state(&entries).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}
