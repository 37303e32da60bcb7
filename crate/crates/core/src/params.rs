//! Named parameter collections, their binary blob format and content hashes.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use crate::autograd::{Gradients, Tape, Var};
use crate::error::{CoreError, Result};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

const BLOB_MAGIC: &[u8; 4] = b"RSPB";
const BLOB_VERSION: u32 = 1;

/// Ordered name -> matrix map; iteration order (and therefore the blob layout) is by name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet<T> {
    params: BTreeMap<String, Matrix<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            params: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix<T>) {
        self.params.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&Matrix<T>> {
        self.params
            .get(name)
            .ok_or_else(|| CoreError::Checkpoint(format!("missing parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix<T>> {
        self.params.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Matrix<T>)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Matrix<T>)> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.params.values().map(Matrix::len).sum()
    }

    /// Puts every parameter on the tape.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Binding {
        let vars = self
            .params
            .iter()
            .map(|(name, m)| {
                let v = if trainable {
                    tape.param(m.clone())
                } else {
                    tape.constant(m.clone())
                };
                (name.clone(), v)
            })
            .collect();
        Binding { vars }
    }

    /// Serialises as `magic | version | count | (name_len name rows cols f64-le*)*`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.scalar_count() * 8);
        out.extend_from_slice(BLOB_MAGIC);
        out.extend_from_slice(&BLOB_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, m) in &self.params {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
            out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
            for v in m.as_slice() {
                out.extend_from_slice(&v.as_f64().to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(4)? != BLOB_MAGIC {
            return Err(CoreError::Checkpoint("bad parameter blob magic".into()));
        }
        let version = r.u32()?;
        if version != BLOB_VERSION {
            return Err(CoreError::Checkpoint(format!("unsupported blob version {version}")));
        }
        let count = r.u32()? as usize;
        let mut params = BTreeMap::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| CoreError::Checkpoint("parameter name is not UTF-8".into()))?;
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                let b: [u8; 8] = r.take(8)?.try_into().expect("8 bytes");
                data.push(T::of(f64::from_le_bytes(b)));
            }
            params.insert(name, Matrix::from_vec(rows, cols, data)?);
        }
        if r.pos != bytes.len() {
            return Err(CoreError::Checkpoint("trailing bytes in parameter blob".into()));
        }
        Ok(Self { params })
    }

    /// Hex SHA-256 of [`Self::to_bytes`].
    pub fn content_hash(&self) -> String {
        sha256_hex(&self.to_bytes())
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            params: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Little-endian cursor shared by the binary artifact formats.
pub(crate) struct ByteReader<'a> {
    pub(crate) bytes: &'a [u8],
    pub(crate) pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| CoreError::Checkpoint("truncated binary data".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Tape variables for a bound [`ParamSet`].
#[derive(Debug, Clone, Default)]
pub struct Binding {
    vars: BTreeMap<String, Var>,
}

impl Binding {
    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} not bound"))
    }

    pub fn has(&self, name: &str) -> bool {
        self.vars.contains_key(name)
    }

    /// Adds another binding's variables (names must not collide).
    pub fn extend(&mut self, other: Binding) {
        for (k, v) in other.vars {
            let prev = self.vars.insert(k, v);
            debug_assert!(prev.is_none(), "duplicate parameter binding");
        }
    }

    /// Collects the gradient of every parameter of `set` (zeros where none flowed).
    pub fn gradients<T: Scalar>(&self, set: &ParamSet<T>, grads: &mut Gradients<T>) -> ParamSet<T> {
        let mut out = ParamSet::new();
        for (name, m) in set.iter() {
            let g = self
                .vars
                .get(name)
                .and_then(|&v| grads.take(v))
                .unwrap_or_else(|| Matrix::zeros(m.rows(), m.cols()));
            out.insert(name.clone(), g);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_round_trip_and_hash() {
        let mut ps: ParamSet<f32> = ParamSet::new();
        ps.insert("b", Matrix::from_fn(2, 3, |r, c| (r * 3 + c) as f32 * 0.1));
        ps.insert("a", Matrix::filled(1, 1, -2.5));
        let bytes = ps.to_bytes();
        let back = ParamSet::<f32>::from_bytes(&bytes).unwrap();
        assert_eq!(back, ps);
        assert_eq!(back.content_hash(), ps.content_hash());
        assert!(ParamSet::<f32>::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        ps.get_mut("a").unwrap().set(0, 0, 1.0);
        assert_ne!(back.content_hash(), ps.content_hash());
    }
}
