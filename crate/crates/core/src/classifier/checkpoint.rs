//! Model checkpoint format, all integers and floats little-endian:
//!
//! ```text
//! b"FABRICNN"            magic
//! u32                    format version (1)
//! u32 x 6                stem, stage1, stage2, hidden, classes, input_side
//! u64                    seed
//! u32                    tensor count
//! per tensor: u64 length, then `length` f64 values
//! ```
//!
//! Tensors appear in [`ClassifierModel::tensors`] order. Anything after the
//! last tensor is rejected.

use std::path::Path;

use super::model::{Architecture, ClassifierModel, CLASSES};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"FABRICNN";
pub const VERSION: u32 = 1;

pub fn encode(model: &ClassifierModel) -> Vec<u8> {
    let a = model.arch;
    let mut out = Vec::with_capacity(64 + 8 * model.parameter_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [
        a.stem_channels,
        a.stage1_channels,
        a.stage2_channels,
        a.hidden,
        CLASSES,
        a.input_side,
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&model.seed.to_le_bytes());
    let tensors = model.tensors();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.len() as u64).to_le_bytes());
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::CorruptCheckpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<ClassifierModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::CorruptCheckpoint(format!("unsupported version {version}")));
    }
    let mut dims = [0usize; 6];
    for d in &mut dims {
        *d = r.u32()? as usize;
    }
    if dims[4] != CLASSES {
        return Err(Error::CorruptCheckpoint(format!("expected {CLASSES} classes, got {}", dims[4])));
    }
    if dims.contains(&0) || dims.iter().any(|&d| d > 1 << 16) {
        return Err(Error::CorruptCheckpoint(format!("implausible architecture {dims:?}")));
    }
    let arch = Architecture {
        stem_channels: dims[0],
        stage1_channels: dims[1],
        stage2_channels: dims[2],
        hidden: dims[3],
        input_side: dims[5],
    };
    let seed = r.u64()?;
    let mut model = ClassifierModel::zeros(arch, seed);
    let count = r.u32()? as usize;
    let mut tensors = model.tensors_mut();
    if count != tensors.len() {
        return Err(Error::CorruptCheckpoint(format!(
            "expected {} tensors, found {count}",
            tensors.len()
        )));
    }
    for (i, t) in tensors.iter_mut().enumerate() {
        let len = r.u64()?;
        if len != t.len() as u64 {
            return Err(Error::CorruptCheckpoint(format!(
                "tensor {i}: expected {} values, found {len}",
                t.len()
            )));
        }
        for v in t.iter_mut() {
            let x = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
            if !x.is_finite() {
                return Err(Error::CorruptCheckpoint(format!("tensor {i}: non-finite value")));
            }
            *v = x;
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::CorruptCheckpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(model)
}

pub fn save(model: &ClassifierModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<ClassifierModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::CorruptCheckpoint(msg) => Error::CorruptCheckpoint(format!("{}: {msg}", path.display())),
        other => other,
    })
}
