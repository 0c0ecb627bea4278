//! Dense matrices with the notation used throughout the controller
//! derivation: Hadamard and Kronecker products, `vec`, `reshape` and row
//! slicing.
//!
//! Two conventions here are easy to trip over:
//!
//! * [`Mat::vec_rowmajor`] walks **rows first**: `[A(1,1), .., A(1,m), A(2,1), ..]`.
//! * [`reshape`] fills **columns first**: column `j` of `reshape(x, n, m)` holds
//!   `x[(j-1)n+1 ..= jn]`.
//!
//! They are not inverses of each other. The identity that does hold is
//! `vec_rowmajor(reshape(v, n, m).transpose()) == v`, which is exactly the
//! pairing used when the concatenate layer flattens `vec(Φᵀ)` and the
//! backward pass un-flattens it again.
//!
//! Indexing through `m[(i, j)]` is zero-based like any Rust container. The
//! operations that take indices in their mathematical contract
//! ([`Mat::entry`], [`Mat::row_slice`]) are one-based.

use std::ops::{Index, IndexMut};

use crate::error::{shape, Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Mat<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Mat<T> {
    /// Builds a matrix from row-major storage.
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(shape("Mat::new", format!("empty dimensions {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(shape(
                "Mat::new",
                format!("{rows}x{cols} needs {} entries, got {}", rows * cols, data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[&[T]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(shape("Mat::from_rows", "ragged rows"));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    /// `k × k` diagonal matrix.
    pub fn diag(values: &[T]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    /// Single-row matrix.
    pub fn row_vector(values: &[T]) -> Self {
        Self::zeros(1, values.len()).with_data(values.to_vec())
    }

    /// Single-column matrix.
    pub fn column_vector(values: &[T]) -> Self {
        Self::zeros(values.len(), 1).with_data(values.to_vec())
    }

    fn with_data(mut self, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), self.data.len());
        self.data = data;
        self
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Row-major storage.
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// Zero-based row view.
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    /// One-based element access, `A_(i,j)`.
    pub fn entry(&self, i: usize, j: usize) -> Result<T> {
        if i == 0 || j == 0 || i > self.rows || j > self.cols {
            return Err(Error::Bounds {
                op: "Mat::entry",
                detail: format!("({i}, {j}) outside 1..={} x 1..={}", self.rows, self.cols),
            });
        }
        Ok(self[(i - 1, j - 1)])
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|x| x * s)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "Mat::add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "Mat::sub", |a, b| a - b)
    }

    /// Elementwise product `A ⊙ B`.
    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "hadamard", |a, b| a * b)
    }

    fn zip_with(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(shape(
                op,
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            ));
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Kronecker product `A ⊗ B`: block `(i, j)` is `A(i,j) · B`.
    pub fn kronecker(&self, other: &Self) -> Self {
        let (br, bc) = other.shape();
        Self::from_fn(self.rows * br, self.cols * bc, |i, j| {
            self[(i / br, j / bc)] * other[(i % br, j % bc)]
        })
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(shape(
                "matmul",
                format!("{:?} x {:?}", self.shape(), other.shape()),
            ));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                let orow = other.row(k);
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, &b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    /// Matrix-vector product `A x`.
    pub fn mul_vec(&self, x: &[T]) -> Result<Vec<T>> {
        if self.cols != x.len() {
            return Err(shape(
                "mul_vec",
                format!("{:?} times vector of length {}", self.shape(), x.len()),
            ));
        }
        Ok((0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(&a, &b)| a * b).sum())
            .collect())
    }

    /// Transposed matrix-vector product `Aᵀ x`.
    pub fn tr_mul_vec(&self, x: &[T]) -> Result<Vec<T>> {
        if self.rows != x.len() {
            return Err(shape(
                "tr_mul_vec",
                format!("{:?}ᵀ times vector of length {}", self.shape(), x.len()),
            ));
        }
        let mut out = vec![T::zero(); self.cols];
        for (i, &xi) in x.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * xi;
            }
        }
        Ok(out)
    }

    /// `vec(A)`, walking rows first.
    pub fn vec_rowmajor(&self) -> Vec<T> {
        self.data.clone()
    }

    /// `row_(i:j)(A)`: rows `i..=j`, one-based.
    pub fn row_slice(&self, i: usize, j: usize) -> Result<Self> {
        if i == 0 || i > j || j > self.rows {
            return Err(Error::Bounds {
                op: "row_slice",
                detail: format!("rows {i}..={j} of a {}-row matrix", self.rows),
            });
        }
        Ok(Self {
            rows: j - i + 1,
            cols: self.cols,
            data: self.data[(i - 1) * self.cols..j * self.cols].to_vec(),
        })
    }

    /// Sum of all entries.
    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|&x| x * x).sum::<T>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Inverse by Gauss-Jordan elimination with partial pivoting.
    pub fn inverse(&self) -> Result<Self> {
        if self.rows != self.cols {
            return Err(shape("inverse", format!("non-square {:?}", self.shape())));
        }
        let n = self.rows;
        let mut a = self.clone();
        let mut inv = Self::identity(n);
        let scale = self.max_abs().max(T::min_positive_value());
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&r, &s| {
                    a[(r, col)]
                        .abs()
                        .partial_cmp(&a[(s, col)].abs())
                        .unwrap_or(std::cmp::Ordering::Equal)
                })
                .unwrap();
            if a[(pivot, col)].abs() <= T::epsilon() * scale * T::lit(n as f64) {
                return Err(Error::Config("matrix is singular".into()));
            }
            if pivot != col {
                for j in 0..n {
                    a.data.swap(pivot * n + j, col * n + j);
                    inv.data.swap(pivot * n + j, col * n + j);
                }
            }
            let p = a[(col, col)];
            for j in 0..n {
                a[(col, j)] /= p;
                inv[(col, j)] /= p;
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let factor = a[(r, col)];
                if factor == T::zero() {
                    continue;
                }
                for j in 0..n {
                    let (ac, ic) = (a[(col, j)], inv[(col, j)]);
                    a[(r, j)] -= factor * ac;
                    inv[(r, j)] -= factor * ic;
                }
            }
        }
        Ok(inv)
    }
}

/// `reshape(x, n, m)`: an `n × m` matrix filled column by column.
pub fn reshape<T: Scalar>(x: &[T], n: usize, m: usize) -> Result<Mat<T>> {
    if n == 0 || m == 0 || x.len() != n * m {
        return Err(shape(
            "reshape",
            format!("vector of length {} into {n}x{m}", x.len()),
        ));
    }
    Ok(Mat::from_fn(n, m, |i, j| x[j * n + i]))
}

impl<T> Index<(usize, usize)> for Mat<T> {
    type Output = T;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Mat<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}
