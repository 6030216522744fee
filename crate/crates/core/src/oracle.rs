//! Lazily evaluated tensors and unfolding views.

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{PeidError, Result};
use crate::index::{ind2sub_into, IndexSet, LinearIndex, Shape};

/// A tensor given by a pure entry-evaluation function.
///
/// Implementations must be deterministic and callable from several threads.
pub trait TensorOracle: Sync {
    fn shape(&self) -> &Shape;

    /// Entry at `idx` (0-based, length equal to the order). Callers guarantee
    /// the index is in range.
    fn eval(&self, idx: &[usize]) -> f64;

    fn order(&self) -> usize {
        self.shape().order()
    }

    fn dims(&self) -> &[usize] {
        self.shape().dims()
    }
}

impl<T: TensorOracle + ?Sized> TensorOracle for &T {
    fn shape(&self) -> &Shape {
        (**self).shape()
    }
    fn eval(&self, idx: &[usize]) -> f64 {
        (**self).eval(idx)
    }
}

/// Oracle backed by a closure.
pub struct FnOracle<F> {
    shape: Shape,
    f: F,
}

impl<F: Fn(&[usize]) -> f64 + Sync> FnOracle<F> {
    pub fn new(shape: Shape, f: F) -> Self {
        FnOracle { shape, f }
    }
}

impl<F: Fn(&[usize]) -> f64 + Sync> TensorOracle for FnOracle<F> {
    fn shape(&self) -> &Shape {
        &self.shape
    }
    fn eval(&self, idx: &[usize]) -> f64 {
        (self.f)(idx)
    }
}

/// Fully materialized tensor in column-major order.
#[derive(Clone, Debug)]
pub struct DenseTensor {
    shape: Shape,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() as u128 != shape.numel() {
            return Err(PeidError::contract(format!(
                "{} values for shape {:?}",
                data.len(),
                shape.dims()
            )));
        }
        Ok(DenseTensor { shape, data })
    }

    /// Evaluates every entry of `oracle`; refuses beyond `limit` entries.
    pub fn from_oracle(oracle: &dyn TensorOracle, limit: u128) -> Result<Self> {
        let numel = oracle.shape().numel();
        if numel > limit {
            return Err(PeidError::SizeGuard { entries: numel, limit });
        }
        let dims = oracle.dims().to_vec();
        let data = (0..numel as usize)
            .into_par_iter()
            .map_init(
                || vec![0usize; dims.len()],
                |idx, m| {
                    ind2sub_into(&dims, m as u128, idx).expect("in range");
                    oracle.eval(idx)
                },
            )
            .collect();
        Ok(DenseTensor { shape: oracle.shape().clone(), data })
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// The `k`-th unfolding as a dense matrix (a reinterpretation of storage).
    pub fn unfolding(&self, k: usize) -> DMatrix<f64> {
        let rows = self.shape.unfolding_rows(k) as usize;
        let cols = self.shape.unfolding_cols(k) as usize;
        DMatrix::from_column_slice(rows, cols, &self.data)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl TensorOracle for DenseTensor {
    fn shape(&self) -> &Shape {
        &self.shape
    }
    fn eval(&self, idx: &[usize]) -> f64 {
        let mut m = 0usize;
        let mut stride = 1usize;
        for (&i, &n) in idx.iter().zip(self.shape.dims()) {
            m += i * stride;
            stride *= n;
        }
        self.data[m]
    }
}

/// Wrapper that counts entry evaluations.
pub struct CountingOracle<O> {
    inner: O,
    touches: AtomicU64,
}

impl<O: TensorOracle> CountingOracle<O> {
    pub fn new(inner: O) -> Self {
        CountingOracle { inner, touches: AtomicU64::new(0) }
    }

    pub fn touches(&self) -> u64 {
        self.touches.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.touches.store(0, Ordering::Relaxed);
    }

    pub fn inner(&self) -> &O {
        &self.inner
    }
}

impl<O: TensorOracle> TensorOracle for CountingOracle<O> {
    fn shape(&self) -> &Shape {
        self.inner.shape()
    }
    fn eval(&self, idx: &[usize]) -> f64 {
        self.touches.fetch_add(1, Ordering::Relaxed);
        self.inner.eval(idx)
    }
}

/// The index-reversed tensor `Y(i_d, .., i_1) = X(i_1, .., i_d)`.
pub struct ReversedOracle<O> {
    inner: O,
    shape: Shape,
}

impl<O: TensorOracle> ReversedOracle<O> {
    pub fn new(inner: O) -> Self {
        let shape = inner.shape().reversed();
        ReversedOracle { inner, shape }
    }
}

impl<O: TensorOracle> TensorOracle for ReversedOracle<O> {
    fn shape(&self) -> &Shape {
        &self.shape
    }
    fn eval(&self, idx: &[usize]) -> f64 {
        const STACK: usize = 32;
        if idx.len() <= STACK {
            let mut buf = [0usize; STACK];
            for (slot, &i) in buf.iter_mut().zip(idx.iter().rev()) {
                *slot = i;
            }
            self.inner.eval(&buf[..idx.len()])
        } else {
            let rev: Vec<usize> = idx.iter().rev().copied().collect();
            self.inner.eval(&rev)
        }
    }
}

/// The `k`-th unfolding `X_k` of an oracle: rows over dims `0..k`, columns
/// over dims `k..d`.
pub struct Unfolding<'a, O: ?Sized> {
    oracle: &'a O,
    k: usize,
}

impl<'a, O: TensorOracle + ?Sized> Unfolding<'a, O> {
    pub fn new(oracle: &'a O, k: usize) -> Result<Self> {
        let d = oracle.order();
        if k == 0 || k >= d {
            return Err(PeidError::contract(format!("unfolding split {k} outside 1..{d}")));
        }
        Ok(Unfolding { oracle, k })
    }

    pub fn split(&self) -> usize {
        self.k
    }

    pub fn rows(&self) -> u128 {
        self.oracle.shape().unfolding_rows(self.k)
    }

    pub fn cols(&self) -> u128 {
        self.oracle.shape().unfolding_cols(self.k)
    }

    pub fn entry(&self, r: LinearIndex, c: LinearIndex) -> Result<f64> {
        let dims = self.oracle.dims();
        let mut idx = vec![0; dims.len()];
        ind2sub_into(&dims[..self.k], r, &mut idx[..self.k])?;
        ind2sub_into(&dims[self.k..], c, &mut idx[self.k..])?;
        Ok(self.oracle.eval(&idx))
    }

    /// Dense submatrix `X_k(rows, cols)` in set enumeration order.
    pub fn extract(&self, rows: &IndexSet, cols: &IndexSet) -> Result<DMatrix<f64>> {
        let d = self.oracle.order();
        if rows.span() != (0..self.k) || cols.span() != (self.k..d) {
            return Err(PeidError::contract(format!(
                "extract from X_{}: row span {:?}, col span {:?}",
                self.k,
                rows.span(),
                cols.span()
            )));
        }
        Ok(extract_block(self.oracle, rows, cols))
    }
}

/// Submatrix with rows over dims `0..k` and columns over `k..d`; spans are
/// assumed checked by the caller.
pub(crate) fn extract_block<O: TensorOracle + ?Sized>(
    oracle: &O,
    rows: &IndexSet,
    cols: &IndexSet,
) -> DMatrix<f64> {
    let k = rows.dims().len();
    let d = oracle.order();
    let row_tuples = rows.tuples();
    let nr = rows.len();
    let nc = cols.len();
    let mut data = vec![0.0; nr * nc];
    data.par_chunks_mut(nr.max(1))
        .zip(cols.members().par_iter())
        .for_each(|(col, &c)| {
            let mut idx = vec![0usize; d];
            ind2sub_into(cols.dims(), c, &mut idx[k..]).expect("member in range");
            for (slot, t) in col.iter_mut().zip(&row_tuples) {
                idx[..k].copy_from_slice(t);
                *slot = oracle.eval(&idx);
            }
        });
    if nr == 0 {
        return DMatrix::zeros(0, nc);
    }
    DMatrix::from_vec(nr, nc, data)
}
