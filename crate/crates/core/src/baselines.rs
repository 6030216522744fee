//! Full-data TT-Sketching baselines, sequential and dimension-parallel.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PeidError, Result};
use crate::linalg::orthonormal_basis;
use crate::oracle::{DenseTensor, TensorOracle};
use crate::sampling::derive_seed;
use crate::tt::{Core, TtTensor};

/// Largest tensor the baselines will materialize.
pub const DENSE_LIMIT: u128 = 10_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SketchConfig {
    /// Interior ranks `(r_1, .., r_{d-1})`.
    pub ranks: Vec<usize>,
    pub seed: u64,
}

fn gaussian(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// `r` orthonormal columns spanning the range of `y Ω`.
fn range_finder(y: &DMatrix<f64>, r: usize, seed: u64) -> Result<DMatrix<f64>> {
    let sketch = y * gaussian(y.ncols(), r, seed);
    Ok(orthonormal_basis(&sketch, r)?.q)
}

fn materialize(oracle: &dyn TensorOracle, cfg: &SketchConfig) -> Result<DenseTensor> {
    let d = oracle.order();
    if cfg.ranks.len() != d - 1 || cfg.ranks.contains(&0) {
        return Err(PeidError::Config(format!(
            "sketch ranks {:?} invalid for order {d}",
            cfg.ranks
        )));
    }
    DenseTensor::from_oracle(oracle, DENSE_LIMIT)
}

fn rank_check(bond: usize, r: usize, rows: usize, cols: usize) -> Result<()> {
    if r > rows.min(cols) {
        return Err(PeidError::Config(format!(
            "rank {r} at bond {bond} exceeds the {rows}x{cols} unfolding"
        )));
    }
    Ok(())
}

/// Sequential sketching: peel one core per bond from the running remainder.
pub fn tt_sketch(oracle: &dyn TensorOracle, cfg: &SketchConfig) -> Result<TtTensor> {
    let dense = materialize(oracle, cfg)?;
    let dims = oracle.dims().to_vec();
    let d = dims.len();
    let mut y = dense.unfolding(1);
    let mut left = 1;
    let mut cores = Vec::with_capacity(d);
    for j in 1..d {
        let r = cfg.ranks[j - 1];
        rank_check(j, r, y.nrows(), y.ncols())?;
        let u = range_finder(&y, r, derive_seed(cfg.seed, &[j as u64]))?;
        cores.push(Core::from_left_matrix(&u, left, dims[j - 1])?);
        let z = u.transpose() * &y;
        let rest = z.ncols() / dims[j];
        y = DMatrix::from_column_slice(r * dims[j], rest, z.as_slice());
        left = r;
    }
    cores.push(Core::from_left_matrix(&y, left, dims[d - 1])?);
    TtTensor::new(cores)
}

/// Dimension-parallel sketching: independent bases per unfolding, chained
/// by `W_{k+1} = U_kᵀ reshape(U_{k+1})`.
pub fn tt_sketch_par(oracle: &dyn TensorOracle, cfg: &SketchConfig) -> Result<TtTensor> {
    let dense = materialize(oracle, cfg)?;
    let dims = oracle.dims().to_vec();
    let d = dims.len();
    let bases = (1..d)
        .into_par_iter()
        .map(|j| {
            let x = dense.unfolding(j);
            let r = cfg.ranks[j - 1];
            rank_check(j, r, x.nrows(), x.ncols())?;
            range_finder(&x, r, derive_seed(cfg.seed, &[j as u64]))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut cores = Vec::with_capacity(d);
    cores.push(Core::from_left_matrix(&bases[0], 1, dims[0])?);
    let middle = (1..d - 1)
        .into_par_iter()
        .map(|k| {
            let (u, next) = (&bases[k - 1], &bases[k]);
            let r = cfg.ranks[k];
            let reshaped = DMatrix::from_column_slice(u.nrows(), dims[k] * r, next.as_slice());
            Core::from_right_matrix(&(u.transpose() * reshaped), dims[k], r)
        })
        .collect::<Result<Vec<_>>>()?;
    cores.extend(middle);
    let last = bases[d - 2].transpose() * dense.unfolding(d - 1);
    cores.push(Core::from_right_matrix(&last, dims[d - 1], 1)?);
    TtTensor::new(cores)
}
