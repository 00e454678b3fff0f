//! Dense square matrices indexed by environment states.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::MatrixError;
use crate::scalar::Scalar;

/// Row-major dense square matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<T>>", into = "Vec<Vec<T>>")]
#[serde(bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct Matrix<T> {
    dim: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, data: vec![T::zero(); dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_rows(rows: Vec<Vec<T>>) -> Result<Self, MatrixError> {
        let dim = rows.len();
        let mut data = Vec::with_capacity(dim * dim);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != dim {
                return Err(MatrixError::NotSquare { row: i, len: row.len(), expected: dim });
            }
            data.extend(row);
        }
        Ok(Self { dim, data })
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                data.push(f(i, j));
            }
        }
        Self { dim, data }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> Vec<Vec<T>> {
        (0..self.dim).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn entries(&self) -> &[T] {
        &self.data
    }

    pub fn row_sums(&self) -> Vec<T> {
        (0..self.dim).map(|i| self.row(i).iter().copied().sum()).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.dim, |i, j| self[(j, i)])
    }

    pub fn mul(&self, rhs: &Self) -> Self {
        assert_eq!(self.dim, rhs.dim, "dimension mismatch in matrix product");
        let n = self.dim;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == T::zero() {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] = out.data[i * n + j] + a * rhs.data[k * n + j];
                }
            }
        }
        out
    }

    /// `self += a * b` without allocating for the sum.
    pub fn add_product(&mut self, a: &Self, b: &Self) {
        let n = self.dim;
        for i in 0..n {
            for k in 0..n {
                let x = a.data[i * n + k];
                if x == T::zero() {
                    continue;
                }
                for j in 0..n {
                    self.data[i * n + j] = self.data[i * n + j] + x * b.data[k * n + j];
                }
            }
        }
    }

    pub fn add(&self, rhs: &Self) -> Self {
        let data = self.data.iter().zip(&rhs.data).map(|(&a, &b)| a + b).collect();
        Self { dim: self.dim, data }
    }

    pub fn scale(&self, c: T) -> Self {
        Self { dim: self.dim, data: self.data.iter().map(|&a| a * c).collect() }
    }

    /// Row vector times matrix: `v M`.
    pub fn left_mul(&self, v: &[T]) -> Vec<T> {
        let n = self.dim;
        let mut out = vec![T::zero(); n];
        for (i, &vi) in v.iter().enumerate() {
            for j in 0..n {
                out[j] = out[j] + vi * self.data[i * n + j];
            }
        }
        out
    }

    /// Matrix times column vector: `M v`.
    pub fn right_mul(&self, v: &[T]) -> Vec<T> {
        (0..self.dim)
            .map(|i| self.row(i).iter().zip(v).map(|(&a, &b)| a * b).sum())
            .collect()
    }

    /// `self^n` by repeated multiplication; `n = 0` gives the identity.
    pub fn pow(&self, n: usize) -> Self {
        let mut acc = Self::identity(self.dim);
        for _ in 0..n {
            acc = acc.mul(self);
        }
        acc
    }

    /// Largest absolute entry of `self - rhs`.
    pub fn sup_dist(&self, rhs: &Self) -> T {
        self.data
            .iter()
            .zip(&rhs.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &a| m.max(a.abs()))
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { dim: self.dim, data: self.data.iter().map(|&a| f(a)).collect() }
    }

    /// Directed graph of strictly positive entries is strongly connected.
    pub fn is_irreducible(&self) -> bool {
        self.unreachable_from_zero().is_empty() && self.transpose().unreachable_from_zero().is_empty()
    }

    /// States not reachable from state 0 along strictly positive entries.
    pub(crate) fn unreachable_from_zero(&self) -> Vec<usize> {
        if self.dim == 0 {
            return Vec::new();
        }
        let mut seen = vec![false; self.dim];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for (v, &p) in self.row(u).iter().enumerate() {
                if p > T::zero() && !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        (0..self.dim).filter(|&v| !seen[v]).collect()
    }

    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix { dim: self.dim, data: self.data.iter().map(|&a| U::lit(a.as_f64())).collect() }
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.dim + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.dim + j]
    }
}

impl<T: Scalar> TryFrom<Vec<Vec<T>>> for Matrix<T> {
    type Error = MatrixError;
    fn try_from(rows: Vec<Vec<T>>) -> Result<Self, Self::Error> {
        Self::from_rows(rows)
    }
}

impl<T: Scalar> From<Matrix<T>> for Vec<Vec<T>> {
    fn from(m: Matrix<T>) -> Self {
        m.rows()
    }
}

/// Nonnegative square matrix whose row sums are at most one.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
#[serde(bound(serialize = "T: Scalar + Serialize"))]
pub struct SubstochasticMatrix<T>(Matrix<T>);

impl<T: Scalar> SubstochasticMatrix<T> {
    pub fn new(m: Matrix<T>) -> Result<Self, MatrixError> {
        let tol = T::exact_tol();
        for i in 0..m.dim() {
            let mut sum = T::zero();
            for (j, &x) in m.row(i).iter().enumerate() {
                if !x.is_finite() || x < T::zero() || x > T::one() + tol {
                    return Err(MatrixError::EntryOutOfRange { row: i, col: j, value: x.as_f64() });
                }
                sum = sum + x;
            }
            if sum > T::one() + tol {
                return Err(MatrixError::RowSumExceedsOne { row: i, sum: sum.as_f64() });
            }
        }
        Ok(Self(m))
    }

    /// Wraps a matrix the caller has already shown to be substochastic.
    pub(crate) fn new_unchecked(m: Matrix<T>) -> Self {
        Self(m)
    }

    pub fn zero(dim: usize) -> Self {
        Self(Matrix::zeros(dim))
    }

    pub fn identity(dim: usize) -> Self {
        Self(Matrix::identity(dim))
    }

    #[inline]
    pub fn matrix(&self) -> &Matrix<T> {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix<T> {
        self.0
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    /// Every row sums to one within the exact tolerance.
    pub fn is_stochastic(&self) -> bool {
        self.0.row_sums().iter().all(|&s| (s - T::one()).abs() <= T::exact_tol())
    }

    /// Entrywise `self <= other` up to `slack`.
    pub fn le(&self, other: &Self, slack: T) -> bool {
        self.0.entries().iter().zip(other.0.entries()).all(|(&a, &b)| a <= b + slack)
    }

    pub fn pow(&self, n: usize) -> Self {
        Self(self.0.pow(n))
    }
}

impl<T> Index<(usize, usize)> for SubstochasticMatrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, ij: (usize, usize)) -> &T {
        &self.0[ij]
    }
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
/// Returns `None` when a pivot falls below `pivot_floor`.
pub fn lu_solve<T: Scalar>(a: &Matrix<T>, b: &[T], pivot_floor: T) -> Option<Vec<T>> {
    let n = a.dim();
    assert_eq!(b.len(), n);
    let mut m: Vec<T> = a.entries().to_vec();
    let mut x: Vec<T> = b.to_vec();
    for col in 0..n {
        let (pivot_row, pivot) = (col..n)
            .map(|r| (r, m[r * n + col].abs()))
            .fold((col, -T::one()), |best, cur| if cur.1 > best.1 { cur } else { best });
        if !(pivot > pivot_floor) {
            return None;
        }
        if pivot_row != col {
            for j in 0..n {
                m.swap(col * n + j, pivot_row * n + j);
            }
            x.swap(col, pivot_row);
        }
        let d = m[col * n + col];
        for r in col + 1..n {
            let factor = m[r * n + col] / d;
            if factor == T::zero() {
                continue;
            }
            for j in col..n {
                m[r * n + j] = m[r * n + j] - factor * m[col * n + j];
            }
            x[r] = x[r] - factor * x[col];
        }
    }
    for col in (0..n).rev() {
        let mut s = x[col];
        for j in col + 1..n {
            s = s - m[col * n + j] * x[j];
        }
        x[col] = s / m[col * n + col];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_and_power() {
        let m = Matrix::from_rows(vec![vec![0.0, 1.0], vec![0.5, 0.5]]).unwrap();
        let sq = m.mul(&m);
        assert_eq!(sq.rows(), vec![vec![0.5, 0.5], vec![0.25, 0.75]]);
        assert_eq!(m.pow(0), Matrix::identity(2));
        assert_eq!(m.pow(2), sq);
    }

    #[test]
    fn ragged_rows_rejected() {
        let err = Matrix::from_rows(vec![vec![1.0, 0.0], vec![1.0]]).unwrap_err();
        assert!(matches!(err, MatrixError::NotSquare { row: 1, .. }));
    }

    #[test]
    fn lu_solves_with_pivoting() {
        let a = Matrix::from_rows(vec![vec![0.0, 2.0, 1.0], vec![1.0, 1.0, 0.0], vec![3.0, 0.0, 1.0]]).unwrap();
        let x_true = [1.0f64, -2.0, 0.5];
        let b = a.right_mul(&x_true);
        let x = lu_solve(&a, &b, 1e-14).unwrap();
        for (u, v) in x.iter().zip(x_true) {
            assert!((u - v).abs() < 1e-14);
        }
        let singular = Matrix::from_rows(vec![vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
        assert!(lu_solve(&singular, &[1.0, 2.0], 1e-14).is_none());
    }

    #[test]
    fn substochastic_rejects_heavy_rows() {
        let m = Matrix::from_rows(vec![vec![0.6, 0.6], vec![0.0, 0.1]]).unwrap();
        assert!(matches!(
            SubstochasticMatrix::new(m),
            Err(MatrixError::RowSumExceedsOne { row: 0, .. })
        ));
        let neg = Matrix::from_rows(vec![vec![-0.1]]).unwrap();
        assert!(SubstochasticMatrix::new(neg).is_err());
    }

    #[test]
    fn irreducibility() {
        let cyc = Matrix::from_rows(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert!(cyc.is_irreducible());
        let abs = Matrix::from_rows(vec![vec![0.5, 0.5], vec![0.0, 1.0]]).unwrap();
        assert!(!abs.is_irreducible());
    }

    #[test]
    fn json_round_trip_keeps_shape() {
        let m = Matrix::from_rows(vec![vec![0.25f64, 0.75], vec![1.0, 0.0]]).unwrap();
        let s = serde_json::to_string(&m).unwrap();
        assert_eq!(s, "[[0.25,0.75],[1.0,0.0]]");
        let back: Matrix<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
        assert!(serde_json::from_str::<Matrix<f64>>("[[1.0],[1.0, 2.0]]").is_err());
    }
}
