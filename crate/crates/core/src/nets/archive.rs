//! `LFW1` weight archive: named little-endian f32 tensors.

use std::collections::HashSet;

use thiserror::Error;

use super::{Module, Slot};
use crate::autodiff::{Real, Tensor, Var};

pub const MAGIC: &[u8; 4] = b"LFW1";

#[derive(Debug, Error, PartialEq)]
pub enum ArchiveError {
    #[error("not a weight archive (bad magic)")]
    BadMagic,
    #[error("archive truncated")]
    Truncated,
    #[error("tensor name is not valid UTF-8")]
    BadName,
    #[error("duplicate tensor `{0}`")]
    Duplicate(String),
    #[error("missing tensor `{0}`")]
    Missing(String),
    #[error("unexpected tensor `{0}`")]
    Unexpected(String),
    #[error("tensor `{name}` has dims {found:?}, expected {expected:?}")]
    DimMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("invalid network configuration in `{0}`")]
    BadConfig(String),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightArchive {
    entries: Vec<(String, Vec<usize>, Vec<f32>)>,
}

impl WeightArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.0.as_str())
    }

    pub fn push(&mut self, name: &str, dims: Vec<usize>, data: Vec<f32>) -> Result<(), ArchiveError> {
        if self.get(name).is_some() {
            return Err(ArchiveError::Duplicate(name.to_string()));
        }
        assert_eq!(dims.iter().product::<usize>(), data.len(), "payload length of `{name}`");
        self.entries.push((name.to_string(), dims, data));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<(&[usize], &[f32])> {
        self.entries
            .iter()
            .find(|e| e.0 == name)
            .map(|e| (e.1.as_slice(), e.2.as_slice()))
    }

    /// Removes every tensor whose name starts with `prefix`.
    pub fn remove_prefix(&mut self, prefix: &str) {
        self.entries.retain(|e| !e.0.starts_with(prefix));
    }

    /// Stores a small integer vector (network hyper-parameters).
    pub fn push_config(&mut self, name: &str, values: &[usize]) -> Result<(), ArchiveError> {
        self.push(name, vec![values.len()], values.iter().map(|&v| v as f32).collect())
    }

    pub fn config(&self, name: &str) -> Result<Vec<usize>, ArchiveError> {
        let (dims, data) = self.get(name).ok_or_else(|| ArchiveError::Missing(name.to_string()))?;
        if dims.len() != 1 || data.iter().any(|v| *v < 0.0 || v.fract() != 0.0 || *v > 16_777_216.0) {
            return Err(ArchiveError::BadConfig(name.to_string()));
        }
        Ok(data.iter().map(|&v| v as usize).collect())
    }

    /// Stores every parameter and buffer of `module` under `prefix`.
    pub fn store<T: Real>(&mut self, module: &mut dyn Module<T>, prefix: &str) -> Result<(), ArchiveError> {
        let mut out = Ok(());
        module.visit(prefix, &mut |name, slot| {
            let t = match slot {
                Slot::Param(v) => v.value().clone(),
                Slot::Buffer(t) => t.clone(),
            };
            let data = t.data().iter().map(|v| v.to_f32().expect("finite")).collect();
            if out.is_ok() {
                out = self.push(name, t.shape().to_vec(), data);
            }
        });
        out
    }

    /// Overwrites every slot of `module` under `prefix`; every slot must be
    /// present with matching dims and no extra tensors may share the prefix.
    pub fn restore<T: Real>(&self, module: &mut dyn Module<T>, prefix: &str) -> Result<(), ArchiveError> {
        let mut seen = HashSet::new();
        let mut err = None;
        module.visit(prefix, &mut |name, slot| {
            if err.is_some() {
                return;
            }
            let Some((dims, data)) = self.get(name) else {
                err = Some(ArchiveError::Missing(name.to_string()));
                return;
            };
            seen.insert(name.to_string());
            let expected = match &slot {
                Slot::Param(v) => v.shape().to_vec(),
                Slot::Buffer(t) => t.shape().to_vec(),
            };
            if dims != expected.as_slice() {
                err = Some(ArchiveError::DimMismatch {
                    name: name.to_string(),
                    expected,
                    found: dims.to_vec(),
                });
                return;
            }
            let t = Tensor::new(expected, data.iter().map(|&v| T::from_f32(v).expect("f32")).collect())
                .expect("dims checked");
            match slot {
                Slot::Param(v) => *v = Var::leaf(t).detached(v.requires_grad()),
                Slot::Buffer(b) => *b = t,
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        let scope = format!("{prefix}.");
        if let Some(extra) = self
            .names()
            .find(|n| n.starts_with(&scope) && !seen.contains(*n) && !n.ends_with(".config"))
        {
            return Err(ArchiveError::Unexpected(extra.to_string()));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, dims, data) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
            for &d in dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Parses an archive; returns it with the number of bytes consumed so
    /// that trailing sections (optimizer state) can follow.
    pub fn from_bytes_prefix(bytes: &[u8]) -> Result<(Self, usize), ArchiveError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(ArchiveError::BadMagic);
        }
        let count = r.u32()? as usize;
        let mut archive = WeightArchive::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?).map_err(|_| ArchiveError::BadName)?.to_string();
            let rank = r.u32()? as usize;
            let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let n = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or(ArchiveError::Truncated)?;
            let raw = r.take(n.checked_mul(4).ok_or(ArchiveError::Truncated)?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            archive.push(&name, dims, data)?;
        }
        Ok((archive, r.pos))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ArchiveError> {
        Self::from_bytes_prefix(bytes).map(|(a, _)| a)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ArchiveError> {
        let end = self.pos.checked_add(n).ok_or(ArchiveError::Truncated)?;
        let s = self.bytes.get(self.pos..end).ok_or(ArchiveError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ArchiveError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> WeightArchive {
        let mut a = WeightArchive::new();
        a.push("x.w", vec![2, 3], vec![1.0, -2.5, 3.25, f32::MIN_POSITIVE, 0.0, -0.0]).unwrap();
        a.push_config("x.config", &[4, 5, 6]).unwrap();
        a
    }

    #[test]
    fn bytes_round_trip() {
        let a = sample();
        let b = WeightArchive::from_bytes(&a.to_bytes()).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert_eq!(b.config("x.config").unwrap(), vec![4, 5, 6]);
    }

    #[test]
    fn layout_is_little_endian() {
        let bytes = sample().to_bytes();
        assert_eq!(&bytes[..4], b"LFW1");
        assert_eq!(&bytes[4..8], &[2, 0, 0, 0]);
        assert_eq!(&bytes[8..12], &[3, 0, 0, 0]);
        assert_eq!(&bytes[12..15], b"x.w");
        // rank 2, dims 2 and 3, then 1.0f32
        assert_eq!(&bytes[15..27], &[2, 0, 0, 0, 2, 0, 0, 0, 3, 0, 0, 0]);
        assert_eq!(&bytes[27..31], &[0, 0, 0x80, 0x3f]);
    }

    #[test]
    fn truncation_and_magic_are_detected() {
        let bytes = sample().to_bytes();
        for cut in [0, 3, 9, 20, bytes.len() - 1] {
            let e = WeightArchive::from_bytes(&bytes[..cut]).unwrap_err();
            assert!(matches!(e, ArchiveError::Truncated | ArchiveError::BadMagic), "{cut}: {e}");
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert_eq!(WeightArchive::from_bytes(&bad), Err(ArchiveError::BadMagic));
    }

    #[test]
    fn duplicates_are_rejected() {
        let mut a = sample();
        assert_eq!(a.push("x.w", vec![1], vec![0.0]), Err(ArchiveError::Duplicate("x.w".into())));
    }
}
