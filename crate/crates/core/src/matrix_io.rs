//! Portable binary matrices: `"RSMX" | u32 version | u64 rows | u64 cols | f64-le*`.

use std::fs;
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::params::ByteReader;
use crate::scalar::Scalar;
use crate::tensor::Matrix;

const MAGIC: &[u8; 4] = b"RSMX";
const VERSION: u32 = 1;

pub fn matrix_to_bytes<T: Scalar>(m: &Matrix<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + m.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for v in m.as_slice() {
        out.extend_from_slice(&v.as_f64().to_le_bytes());
    }
    out
}

pub fn matrix_from_bytes<T: Scalar>(bytes: &[u8]) -> Result<Matrix<T>> {
    let mut r = ByteReader::new(bytes);
    if r.take(4)? != MAGIC {
        return Err(CoreError::Checkpoint("bad matrix magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CoreError::Checkpoint(format!("unsupported matrix version {version}")));
    }
    let rows = r.u64()? as usize;
    let cols = r.u64()? as usize;
    let n = rows
        .checked_mul(cols)
        .filter(|&n| n.checked_mul(8) == Some(bytes.len() - r.pos))
        .ok_or_else(|| CoreError::Checkpoint("matrix payload size does not match header".into()))?;
    let data = (0..n).map(|_| r.f64().map(T::of)).collect::<Result<Vec<T>>>()?;
    Matrix::from_vec(rows, cols, data)
}

pub fn write_matrix<T: Scalar>(m: &Matrix<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, matrix_to_bytes(m)).map_err(|e| CoreError::io(path, e))
}

pub fn read_matrix<T: Scalar>(path: impl AsRef<Path>) -> Result<Matrix<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| CoreError::io(path, e))?;
    matrix_from_bytes(&bytes)
}
