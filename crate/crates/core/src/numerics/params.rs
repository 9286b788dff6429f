//! Named parameter storage and the `MIMCKPT v1` checkpoint container.
//!
//! Layout after the `MIMCKPT v1\n` header line, repeated until end of file:
//! name length (`u32` LE), name bytes (UTF-8), rank (`u32` LE), each dim
//! (`u64` LE), then `product(dims)` little-endian `f64` values.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::tensor::Tensor;
use crate::error::{MimError, Result};

pub const CHECKPOINT_MAGIC: &[u8] = b"MIMCKPT v1\n";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(MimError::Invalid(format!("duplicate parameter {name}")));
        }
        self.index.insert(name.clone(), self.values.len());
        self.names.push(name);
        self.values.push(value);
        Ok(ParamId(self.values.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// SHA-256 over names, shapes and value bits, hex encoded.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.iter() {
            h.update(name.as_bytes());
            for d in t.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Overwrites values of `self` with same-named entries of `other`;
    /// every parameter must be present with a matching shape.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        for (i, name) in self.names.iter().enumerate() {
            let src = other
                .id(name)
                .map(|id| other.get(id))
                .ok_or_else(|| MimError::Format(format!("checkpoint lacks {name}")))?;
            if src.shape() != self.values[i].shape() {
                return Err(MimError::Format(format!(
                    "{name}: checkpoint shape {:?}, model shape {:?}",
                    src.shape(),
                    self.values[i].shape()
                )));
            }
            self.values[i] = src.clone();
        }
        Ok(())
    }

    pub fn write_checkpoint(&self, mut w: impl Write) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        for (name, t) in self.iter() {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.rank() as u32).to_le_bytes())?;
            for d in t.shape() {
                w.write_all(&(*d as u64).to_le_bytes())?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_checkpoint(mut r: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut cur = Cursor { bytes: &bytes, pos: 0 };
        if cur.take(CHECKPOINT_MAGIC.len())? != CHECKPOINT_MAGIC {
            return Err(MimError::Format("missing MIMCKPT v1 header".into()));
        }
        let mut store = ParamStore::new();
        while cur.pos < bytes.len() {
            let name_len = u32::from_le_bytes(cur.array()?) as usize;
            let name = String::from_utf8(cur.take(name_len)?.to_vec())
                .map_err(|_| MimError::Format("parameter name is not UTF-8".into()))?;
            let rank = u32::from_le_bytes(cur.array()?) as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u64::from_le_bytes(cur.array()?) as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(f64::from_le_bytes(cur.array()?));
            }
            store.add(name, Tensor::new(shape, data)?)?;
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_checkpoint(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_checkpoint(std::fs::File::open(path)?)
    }
}

pub(crate) struct Cursor<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> Cursor<'a> {
    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| MimError::Format("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let s = self.take(N)?;
        let mut a = [0u8; N];
        a.copy_from_slice(s);
        Ok(a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut s = ParamStore::new();
        s.add("a.weight", Tensor::new(vec![2, 3], vec![0.1, -0.0, f64::MIN_POSITIVE, 1e300, -7.5, 3.0]).unwrap())
            .unwrap();
        s.add("b", Tensor::new(vec![4], vec![1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
        let mut buf = Vec::new();
        s.write_checkpoint(&mut buf).unwrap();
        assert!(buf.starts_with(b"MIMCKPT v1\n"));
        let back = ParamStore::read_checkpoint(&buf[..]).unwrap();
        assert_eq!(back.len(), 2);
        for ((n1, t1), (n2, t2)) in s.iter().zip(back.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            let b1: Vec<u64> = t1.data().iter().map(|v| v.to_bits()).collect();
            let b2: Vec<u64> = t2.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(b1, b2);
        }
        assert_eq!(s.checksum(), back.checksum());
    }

    #[test]
    fn truncated_checkpoint_is_an_error() {
        let mut s = ParamStore::new();
        s.add("w", Tensor::row(vec![1.0, 2.0])).unwrap();
        let mut buf = Vec::new();
        s.write_checkpoint(&mut buf).unwrap();
        buf.pop();
        assert!(ParamStore::read_checkpoint(&buf[..]).is_err());
        assert!(ParamStore::read_checkpoint(&b"NOPE"[..]).is_err());
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new();
        s.add("w", Tensor::scalar(1.0)).unwrap();
        assert!(s.add("w", Tensor::scalar(2.0)).is_err());
    }
}
