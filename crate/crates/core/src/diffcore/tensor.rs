//! Dense row-major tensors.
//!
//! Everything the lab moves around is rank 1 or 2; shapes are kept as a
//! vector of extents so batches, rows and scalars share one type.

use rand::Rng;

use crate::error::{Error, Result};
use crate::real::Real;

/// A dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<R: Real> {
    shape: Vec<usize>,
    data: Vec<R>,
}

impl<R: Real> Tensor<R> {
    /// Builds a tensor, checking that the extents multiply out to the data
    /// length.
    pub fn from_vec(shape: Vec<usize>, data: Vec<R>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::contract(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor { shape, data: vec![R::zero(); numel] }
    }

    pub fn filled(shape: Vec<usize>, value: R) -> Self {
        let numel = shape.iter().product();
        Tensor { shape, data: vec![value; numel] }
    }

    /// A scalar wrapped as a rank-0 tensor.
    pub fn scalar(value: R) -> Self {
        Tensor { shape: vec![], data: vec![value] }
    }

    /// Row-major fill of independent standard-normal draws.
    pub fn randn<G: Rng + ?Sized>(shape: Vec<usize>, rng: &mut G) -> Self {
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| R::standard_normal(rng)).collect();
        Tensor { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[R] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [R] {
        &mut self.data
    }

    /// The sole element of a single-element tensor.
    pub fn item(&self) -> Result<R> {
        if self.data.len() != 1 {
            return Err(Error::contract(format!("item() on tensor of shape {:?}", self.shape)));
        }
        Ok(self.data[0])
    }

    /// Number of rows when interpreted as a matrix (rank 2) and row length.
    pub fn rows_cols(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            other => Err(Error::contract(format!("expected rank-2 shape, got {other:?}"))),
        }
    }

    /// Borrow row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[R] {
        let (_, c) = (self.shape[0], self.shape[1]);
        &self.data[i * c..(i + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Widens to `f64`, for evaluation code that wants extra headroom.
    pub fn to_f64(&self) -> Tensor<f64> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|v| v.as_f64()).collect() }
    }

    /// Stacks the given rows (all of equal length) into a rank-2 tensor.
    pub fn from_rows(rows: &[&[R]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::contract("ragged rows"));
        }
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            data.extend_from_slice(r);
        }
        Ok(Tensor { shape: vec![rows.len(), cols], data })
    }
}

/// out += a . b with a: [m,k], b: [k,n]; plain ikj loops so the inner loop
/// vectorizes, accumulation order fixed for reproducibility.
pub(crate) fn matmul_acc<R: Real>(a: &[R], b: &[R], m: usize, k: usize, n: usize, out: &mut [R]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (l, &av) in arow.iter().enumerate() {
            let brow = &b[l * n..(l + 1) * n];
            for j in 0..n {
                orow[j] = orow[j] + av * brow[j];
            }
        }
    }
}

/// out += a . b^T with a: [m,n], b: [k,n], out: [m,k].
pub(crate) fn matmul_nt_acc<R: Real>(
    a: &[R],
    b: &[R],
    m: usize,
    n: usize,
    k: usize,
    out: &mut [R],
) {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * k);
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        let orow = &mut out[i * k..(i + 1) * k];
        for (l, o) in orow.iter_mut().enumerate() {
            let brow = &b[l * n..(l + 1) * n];
            let mut acc = R::zero();
            for j in 0..n {
                acc = acc + arow[j] * brow[j];
            }
            *o = *o + acc;
        }
    }
}

/// out += a^T . b with a: [m,k], b: [m,n], out: [k,n].
pub(crate) fn matmul_tn_acc<R: Real>(
    a: &[R],
    b: &[R],
    m: usize,
    k: usize,
    n: usize,
    out: &mut [R],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(out.len(), k * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (l, &av) in arow.iter().enumerate() {
            let orow = &mut out[l * n..(l + 1) * n];
            for j in 0..n {
                orow[j] = orow[j] + av * brow[j];
            }
        }
    }
}
