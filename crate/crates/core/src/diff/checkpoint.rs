//! Binary checkpoint format.
//!
//! Layout (all integers little-endian):
//! `"FMS1"`, `u32` entry count, then per entry: `u16` name length, UTF-8 name,
//! `u8` rank, `rank x u32` dims, `product(dims) x f32` values.

use std::fs;
use std::path::Path;

use super::params::ParameterStore;
use super::tensor::Tensor;
use super::DiffError;

pub const MAGIC: &[u8; 4] = b"FMS1";

pub fn encode<'a>(entries: impl IntoIterator<Item = (&'a str, &'a Tensor<f32>)>) -> Result<Vec<u8>, DiffError> {
    let entries: Vec<_> = entries.into_iter().collect();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    let count = u32::try_from(entries.len()).map_err(|_| DiffError::Checkpoint("too many entries".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, t) in entries {
        let len = u16::try_from(name.len())
            .map_err(|_| DiffError::Checkpoint(format!("name too long: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let rank = u8::try_from(t.shape().len())
            .map_err(|_| DiffError::Checkpoint(format!("rank too large for {name}")))?;
        out.push(rank);
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| DiffError::Checkpoint(format!("dim too large in {name}")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for &x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DiffError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| DiffError::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, DiffError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, DiffError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, DiffError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor<f32>)>, DiffError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4).ok() != Some(MAGIC.as_slice()) {
        return Err(DiffError::Checkpoint("bad magic, not an FMS1 checkpoint".into()));
    }
    let count = r.u32()?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| DiffError::Checkpoint("name is not UTF-8".into()))?
            .to_string();
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(4).ok_or_else(|| DiffError::Checkpoint("size overflow".into()))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(DiffError::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(out)
}

pub fn save(store: &ParameterStore<f32>, path: &Path) -> Result<(), DiffError> {
    let bytes = encode(store.iter())?;
    fs::write(path, bytes).map_err(|e| DiffError::Checkpoint(format!("{}: {e}", path.display())))
}

pub fn load(path: &Path) -> Result<Vec<(String, Tensor<f32>)>, DiffError> {
    let bytes = fs::read(path).map_err(|e| DiffError::Checkpoint(format!("{}: {e}", path.display())))?;
    decode(&bytes)
}

/// Loads a checkpoint into an already-shaped store, naming the first offending tensor on mismatch.
pub fn load_into(store: &mut ParameterStore<f32>, path: &Path) -> Result<(), DiffError> {
    let entries = load(path)?;
    store.load_values(entries.iter().map(|(n, t)| (n.as_str(), t)))
}
