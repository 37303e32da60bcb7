//! Dense row-major matrices over a [`Scalar`].

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

/// Which operand of a product is read transposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Layout {
    Normal,
    Transposed,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(CoreError::Shape(format!(
                "buffer of {} values cannot form a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(CoreError::Shape("ragged rows".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn row_vector(values: &[T]) -> Self {
        Self {
            rows: 1,
            cols: values.len(),
            data: values.to_vec(),
        }
    }

    /// Gaussian entries with the given standard deviation.
    pub fn randn<R: Rng + ?Sized>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Self {
        Self::from_fn(rows, cols, |_, _| {
            let z: f64 = StandardNormal.sample(rng);
            T::of(z * std)
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[T]> {
        (0..self.rows).map(move |r| self.row(r))
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        debug_assert_eq!(self.shape(), other.shape());
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_assign(&mut self, s: T) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn sum_squares(&self) -> T {
        self.data.iter().map(|&v| v * v).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    /// Rows `start..start + len`.
    pub fn slice_rows(&self, start: usize, len: usize) -> Self {
        Self {
            rows: len,
            cols: self.cols,
            data: self.data[start * self.cols..(start + len) * self.cols].to_vec(),
        }
    }

    pub fn slice_cols(&self, start: usize, len: usize) -> Self {
        Self::from_fn(self.rows, len, |r, c| self.get(r, start + c))
    }

    pub fn vstack(parts: &[&Self]) -> Result<Self> {
        let cols = parts.first().map_or(0, |m| m.cols);
        if parts.iter().any(|m| m.cols != cols) {
            return Err(CoreError::Shape("vstack width mismatch".into()));
        }
        let mut data = Vec::with_capacity(parts.iter().map(|m| m.len()).sum());
        for m in parts {
            data.extend_from_slice(&m.data);
        }
        Ok(Self {
            rows: parts.iter().map(|m| m.rows).sum(),
            cols,
            data,
        })
    }

    pub fn hstack(parts: &[&Self]) -> Result<Self> {
        let rows = parts.first().map_or(0, |m| m.rows);
        if parts.iter().any(|m| m.rows != rows) {
            return Err(CoreError::Shape("hstack height mismatch".into()));
        }
        let cols = parts.iter().map(|m| m.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for m in parts {
                data.extend_from_slice(m.row(r));
            }
        }
        Ok(Self { rows, cols, data })
    }

    /// Replicates a single row `rows` times.
    pub fn broadcast_row(row: &[T], rows: usize) -> Self {
        let mut data = Vec::with_capacity(rows * row.len());
        for _ in 0..rows {
            data.extend_from_slice(row);
        }
        Self {
            rows,
            cols: row.len(),
            data,
        }
    }

    pub fn mean_rows(&self) -> Self {
        let mut out = Self::zeros(1, self.cols);
        for r in self.iter_rows() {
            for (o, &v) in out.data.iter_mut().zip(r) {
                *o += v;
            }
        }
        if self.rows > 0 {
            out.scale_assign(T::one() / T::of(self.rows as f64));
        }
        out
    }

    /// `self · other`
    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul inner dims");
        gemm(self, Layout::Normal, other, Layout::Normal)
    }

    /// `self · otherᵀ`
    pub fn matmul_t(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.cols, "matmul_t inner dims");
        gemm(self, Layout::Normal, other, Layout::Transposed)
    }

    /// `selfᵀ · other`
    pub fn t_matmul(&self, other: &Self) -> Self {
        assert_eq!(self.rows, other.rows, "t_matmul inner dims");
        gemm(self, Layout::Transposed, other, Layout::Normal)
    }
}

fn gemm<T: Scalar>(a: &Matrix<T>, la: Layout, b: &Matrix<T>, lb: Layout) -> Matrix<T> {
    let (m, k) = match la {
        Layout::Normal => (a.rows, a.cols),
        Layout::Transposed => (a.cols, a.rows),
    };
    let n = match lb {
        Layout::Normal => b.cols,
        Layout::Transposed => b.rows,
    };
    let mut out = Matrix::zeros(m, n);
    if m == 0 || n == 0 || k == 0 {
        return out;
    }
    let (rsa, csa) = match la {
        Layout::Normal => (a.cols as isize, 1),
        Layout::Transposed => (1, a.cols as isize),
    };
    let (rsb, csb) = match lb {
        Layout::Normal => (b.cols as isize, 1),
        Layout::Transposed => (1, b.cols as isize),
    };
    let rsc = n as isize;
    // SAFETY: T is exactly f32 / f64 in the respective branches (checked via TypeId),
    // strides describe the row-major buffers above and `out` is m x n.
    unsafe {
        if T::is_f32() {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                1.0,
                a.data.as_ptr() as *const f32,
                rsa,
                csa,
                b.data.as_ptr() as *const f32,
                rsb,
                csb,
                0.0,
                out.data.as_mut_ptr() as *mut f32,
                rsc,
                1,
            );
            return out;
        }
        if T::is_f64() {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.data.as_ptr() as *const f64,
                rsa,
                csa,
                b.data.as_ptr() as *const f64,
                rsb,
                csb,
                0.0,
                out.data.as_mut_ptr() as *mut f64,
                rsc,
                1,
            );
            return out;
        }
    }
    for i in 0..m {
        for p in 0..k {
            let av = a.data[(i as isize * rsa + p as isize * csa) as usize];
            for j in 0..n {
                let bv = b.data[(p as isize * rsb + j as isize * csb) as usize];
                out.data[i * n + j] += av * bv;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Matrix<f64>, b: &Matrix<f64>) -> Matrix<f64> {
        Matrix::from_fn(a.rows(), b.cols(), |i, j| {
            (0..a.cols()).map(|k| a.get(i, k) * b.get(k, j)).sum()
        })
    }

    #[test]
    fn products_match_naive() {
        let a = Matrix::from_fn(3, 4, |r, c| (r * 4 + c) as f64 * 0.5 - 1.0);
        let b = Matrix::from_fn(4, 2, |r, c| (r as f64 - c as f64) * 0.25);
        assert!(a.matmul(&b).max_abs_diff(&naive(&a, &b)) < 1e-12);
        let bt = b.transpose();
        assert!(a.matmul_t(&bt).max_abs_diff(&naive(&a, &b)) < 1e-12);
        let at = a.transpose();
        assert!(at.t_matmul(&b).max_abs_diff(&naive(&a, &b)) < 1e-12);
        let af: Matrix<f32> = a.cast();
        let bf: Matrix<f32> = b.cast();
        let cf: Matrix<f64> = af.matmul(&bf).cast();
        assert!(cf.max_abs_diff(&naive(&a, &b)) < 1e-5);
    }

    #[test]
    fn stacking() {
        let a = Matrix::from_fn(2, 2, |r, c| (r * 2 + c) as f32);
        let b = Matrix::from_fn(1, 2, |_, c| 10.0 + c as f32);
        let v = Matrix::vstack(&[&a, &b]).unwrap();
        assert_eq!(v.shape(), (3, 2));
        assert_eq!(v.row(2), &[10.0, 11.0]);
        let h = Matrix::hstack(&[&a, &a]).unwrap();
        assert_eq!(h.row(1), &[2.0, 3.0, 2.0, 3.0]);
        assert!(Matrix::from_vec(2, 2, vec![0.0f32; 3]).is_err());
    }
}
