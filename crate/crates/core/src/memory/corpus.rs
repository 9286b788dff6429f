//! Deduplicated embedding memory with cosine top-K retrieval.

use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;

use crate::error::{MimError, Result};
use crate::numerics::params::Cursor;

const MAGIC: &[u8] = b"MIMMEM v1\n";

/// `a·b / (‖a‖‖b‖)`; zero-norm inputs are an error.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(MimError::Shape(format!("cosine of lengths {} and {}", a.len(), b.len())));
    }
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(MimError::ZeroNorm);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok(dot / (na * nb))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct MemoryCorpus {
    tau: f64,
    capacity: usize,
    dim: usize,
    entries: VecDeque<Vec<f64>>,
}

impl MemoryCorpus {
    pub fn new(dim: usize, tau: f64, capacity: usize) -> Result<Self> {
        if dim == 0 || capacity == 0 || !tau.is_finite() {
            return Err(MimError::Invalid(format!("corpus dim {dim}, capacity {capacity}, tau {tau}")));
        }
        Ok(Self {
            tau,
            capacity,
            dim,
            entries: VecDeque::new(),
        })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entry `i`, oldest first.
    pub fn get(&self, i: usize) -> &[f64] {
        &self.entries[i]
    }

    pub fn entries(&self) -> impl Iterator<Item = &[f64]> {
        self.entries.iter().map(|e| e.as_slice())
    }

    fn check(&self, e: &[f64]) -> Result<()> {
        if e.len() != self.dim {
            return Err(MimError::Shape(format!("embedding of length {} for corpus dim {}", e.len(), self.dim)));
        }
        if e.iter().any(|v| !v.is_finite()) {
            return Err(MimError::NonFinite("query embedding"));
        }
        if e.iter().all(|&v| v == 0.0) {
            return Err(MimError::ZeroNorm);
        }
        Ok(())
    }

    /// Highest cosine similarity to any entry, `None` when empty.
    pub fn max_similarity(&self, e: &[f64]) -> Result<Option<f64>> {
        self.check(e)?;
        let mut best: Option<f64> = None;
        for entry in &self.entries {
            let c = cosine(e, entry)?;
            best = Some(best.map_or(c, |b| b.max(c)));
        }
        Ok(best)
    }

    /// Stores `e` iff its highest similarity is strictly below τ, evicting
    /// the oldest entry when full.
    pub fn maybe_insert(&mut self, e: &[f64]) -> Result<bool> {
        let admit = match self.max_similarity(e)? {
            None => true,
            Some(s) => s < self.tau,
        };
        if admit {
            if self.entries.len() == self.capacity {
                self.entries.pop_front();
            }
            self.entries.push_back(e.to_vec());
        }
        Ok(admit)
    }

    /// Indices of the `k` most similar entries, best first; equal
    /// similarities keep insertion order. Returns fewer when the corpus
    /// holds fewer than `k`.
    pub fn retrieve_top_k(&self, e: &[f64], k: usize) -> Result<Vec<usize>> {
        self.check(e)?;
        if k == 0 {
            return Err(MimError::Invalid("top-K needs K ≥ 1".into()));
        }
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        for (i, entry) in self.entries.iter().enumerate() {
            let c = cosine(e, entry)?;
            if best.len() == k && c <= best[k - 1].0 {
                continue;
            }
            let at = best.partition_point(|&(b, _)| b >= c);
            best.insert(at, (c, i));
            best.truncate(k);
        }
        Ok(best.into_iter().map(|(_, i)| i).collect())
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&self.tau.to_le_bytes())?;
        w.write_all(&(self.dim as u64).to_le_bytes())?;
        w.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        for e in &self.entries {
            for v in e {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Parses a corpus file. The capacity is not stored; pass the one to use.
    pub fn read_from(bytes: &[u8], capacity: usize) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(MAGIC.len())? != MAGIC {
            return Err(MimError::Format("missing MIMMEM v1 header".into()));
        }
        let tau = f64::from_le_bytes(cur.array()?);
        let dim = u64::from_le_bytes(cur.array()?) as usize;
        let count = u64::from_le_bytes(cur.array()?) as usize;
        let mut corpus = Self::new(dim, tau, capacity.max(count))?;
        for _ in 0..count {
            let e = (0..dim).map(|_| cur.array().map(f64::from_le_bytes)).collect::<Result<Vec<_>>>()?;
            corpus.entries.push_back(e);
        }
        if cur.pos != bytes.len() {
            return Err(MimError::Format("trailing bytes after corpus entries".into()));
        }
        Ok(corpus)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(std::fs::write(path, buf)?)
    }

    pub fn load(path: impl AsRef<Path>, capacity: usize) -> Result<Self> {
        Self::read_from(&std::fs::read(path)?, capacity)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basis(i: usize) -> Vec<f64> {
        let mut v = vec![0.0; 4];
        v[i] = 1.0;
        v
    }

    #[test]
    fn insertion_rule_examples() {
        let mut c = MemoryCorpus::new(2, 0.8, 16).unwrap();
        assert!(c.maybe_insert(&[0.8, 0.6]).unwrap());
        assert!(!c.maybe_insert(&[0.8, 0.6]).unwrap());
        // cos([1,0], [0.8,0.6]) = 0.8 exactly: rejected
        assert_eq!(c.max_similarity(&[1.0, 0.0]).unwrap(), Some(0.8));
        assert!(!c.maybe_insert(&[1.0, 0.0]).unwrap());
        assert!(c.maybe_insert(&[-0.6, 0.8]).unwrap());
        assert!(matches!(c.maybe_insert(&[0.0, 0.0]), Err(MimError::ZeroNorm)));
    }

    #[test]
    fn fifo_eviction() {
        let mut c = MemoryCorpus::new(4, 0.8, 3).unwrap();
        for i in 0..4 {
            assert!(c.maybe_insert(&basis(i)).unwrap());
        }
        assert_eq!(c.len(), 3);
        assert_eq!(c.get(0), &basis(1)[..]);
    }

    #[test]
    fn retrieval_examples() {
        let mut c = MemoryCorpus::new(4, 0.8, 16).unwrap();
        for i in 0..4 {
            c.maybe_insert(&basis(i)).unwrap();
        }
        assert_eq!(c.retrieve_top_k(&basis(1), 1).unwrap(), vec![1]);
        // three-way tie at 0 after the match: insertion order
        assert_eq!(c.retrieve_top_k(&basis(2), 7).unwrap(), vec![2, 0, 1, 3]);
        let empty = MemoryCorpus::new(4, 0.8, 16).unwrap();
        assert!(empty.retrieve_top_k(&basis(0), 3).unwrap().is_empty());
        assert!(c.retrieve_top_k(&basis(0), 0).is_err());
    }

    #[test]
    fn file_round_trip() {
        let mut c = MemoryCorpus::new(3, 0.8, 8).unwrap();
        c.maybe_insert(&[0.1, -2.5, 1e-300]).unwrap();
        c.maybe_insert(&[-1.0, 0.0, 3.0]).unwrap();
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), MAGIC.len() + 24 + 6 * 8);
        let back = MemoryCorpus::read_from(&buf, 8).unwrap();
        assert_eq!(back, c);
        assert!(MemoryCorpus::read_from(&buf[..buf.len() - 1], 8).is_err());
        assert!(MemoryCorpus::read_from(b"MIMMEM v2\n", 8).is_err());
    }
}
