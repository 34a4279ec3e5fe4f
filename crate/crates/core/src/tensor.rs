//! Dense row-major tensors.
//!
//! Every numeric quantity in the crate lives in a [`Tensor`]. Most of the
//! code works with rank-2 tensors (`rows x cols`); zero-row matrices are
//! legal and show up whenever hard routing starves a branch.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::dim("tensor construction", &shape, &[data.len()]));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); len],
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    /// Builds a matrix from nested rows; all rows must share a length.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::dim("from_rows", &[cols], &[row.len()]));
            }
            data.extend_from_slice(row);
        }
        Self::from_vec(vec![rows.len(), cols], data)
    }

    pub fn from_f64(shape: Vec<usize>, values: &[f64]) -> Result<Self> {
        Self::from_vec(shape, values.iter().map(|&v| T::lit(v)).collect())
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    /// Number of rows of a rank-2 tensor.
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Number of columns of a rank-2 tensor (1 for rank-1 tensors).
    pub fn cols(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[1..].iter().product()
        } else {
            1
        }
    }

    pub fn row(&self, i: usize) -> &[T] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols() + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        let c = self.cols();
        self.data[i * c + j] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::dim("add", &self.shape, &other.shape));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, k: T) {
        for v in &mut self.data {
            *v *= k;
        }
    }

    /// Gathers the listed rows into a new matrix, preserving list order.
    pub fn select_rows(&self, index: &[usize]) -> Self {
        let c = self.cols();
        let mut data = Vec::with_capacity(index.len() * c);
        for &i in index {
            data.extend_from_slice(self.row(i));
        }
        Self {
            shape: self.row_shape(index.len()),
            data,
        }
    }

    /// Shape of a tensor with `n` rows and the same trailing dims.
    pub(crate) fn row_shape(&self, n: usize) -> Vec<usize> {
        let mut shape = self.shape.clone();
        if shape.is_empty() {
            shape.push(n);
        } else {
            shape[0] = n;
        }
        shape
    }

    fn expect_matrix(&self, op: &'static str) -> Result<(usize, usize)> {
        if self.shape.len() != 2 {
            return Err(Error::dim(op, &self.shape, &[]));
        }
        Ok((self.shape[0], self.shape[1]))
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (n, k) = self.expect_matrix("matmul")?;
        let (k2, m) = other.expect_matrix("matmul")?;
        if k != k2 {
            return Err(Error::dim("matmul", &self.shape, &other.shape));
        }
        let mut out = Self::zeros(&[n, m]);
        if k > 0 {
            T::gemm(
                n,
                k,
                m,
                T::one(),
                &self.data,
                (k as isize, 1),
                &other.data,
                (m as isize, 1),
                T::zero(),
                &mut out.data,
                (m as isize, 1),
            );
        }
        Ok(out)
    }

    /// `selfᵀ · other` without materialising the transpose.
    pub fn t_matmul(&self, other: &Self) -> Result<Self> {
        let (k, n) = self.expect_matrix("t_matmul")?;
        let (k2, m) = other.expect_matrix("t_matmul")?;
        if k != k2 {
            return Err(Error::dim("t_matmul", &self.shape, &other.shape));
        }
        let mut out = Self::zeros(&[n, m]);
        if k > 0 {
            T::gemm(
                n,
                k,
                m,
                T::one(),
                &self.data,
                (1, n as isize),
                &other.data,
                (m as isize, 1),
                T::zero(),
                &mut out.data,
                (m as isize, 1),
            );
        }
        Ok(out)
    }

    /// `self · otherᵀ` without materialising the transpose.
    pub fn matmul_t(&self, other: &Self) -> Result<Self> {
        let (n, k) = self.expect_matrix("matmul_t")?;
        let (m, k2) = other.expect_matrix("matmul_t")?;
        if k != k2 {
            return Err(Error::dim("matmul_t", &self.shape, &other.shape));
        }
        let mut out = Self::zeros(&[n, m]);
        if k > 0 {
            T::gemm(
                n,
                k,
                m,
                T::one(),
                &self.data,
                (k as isize, 1),
                &other.data,
                (1, k as isize),
                T::zero(),
                &mut out.data,
                (m as isize, 1),
            );
        }
        Ok(out)
    }

    /// Column sums of a matrix, as a rank-1 tensor.
    pub fn sum_rows(&self) -> Self {
        let c = self.cols();
        let mut out = vec![T::zero(); c];
        for chunk in self.data.chunks_exact(c.max(1)) {
            for (o, &v) in out.iter_mut().zip(chunk) {
                *o += v;
            }
        }
        Self {
            shape: vec![c],
            data: out,
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }
}

/// Standalone matrix product, `a · b`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    a.matmul(b)
}
