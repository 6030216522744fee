//! Uniform sampling of oversampling index sets.

use std::collections::HashSet;

use rand::seq::index;
use rand::Rng;

use crate::error::{PeidError, Result};
use crate::index::{IndexSet, LinearIndex};

/// Enumerate the complement when the universe is at most this many times the
/// number of indices that must be avoided or drawn.
const ENUMERATE_FACTOR: u128 = 4;
const ENUMERATE_LIMIT: u128 = 1 << 20;

/// `p` distinct uniform draws from the span of `excluded` minus `excluded`.
///
/// Returns the set and whether fewer than `p` indices were available.
pub fn sample_free_set<R: Rng + ?Sized>(
    excluded: &IndexSet,
    p: usize,
    rng: &mut R,
) -> Result<(IndexSet, bool)> {
    let universe = excluded.universe();
    let start = excluded.span().start;
    let dims = excluded.dims().to_vec();
    let free = universe - excluded.len() as u128;
    if p == 0 {
        return Ok((IndexSet::empty(start, dims), false));
    }
    let small = universe <= ENUMERATE_LIMIT
        && universe <= ENUMERATE_FACTOR * (p as u128 + excluded.len() as u128) + 64;
    if (p as u128) >= free || small {
        let ex: HashSet<LinearIndex> = excluded.members().iter().copied().collect();
        let complement: Vec<LinearIndex> = (0..universe).filter(|m| !ex.contains(m)).collect();
        let clamped = p > complement.len();
        let members = pick(&complement, p, rng);
        return Ok((IndexSet::new_unchecked(start, dims, members), clamped));
    }
    let mut taken: HashSet<LinearIndex> = excluded.members().iter().copied().collect();
    let mut members = Vec::with_capacity(p);
    while members.len() < p {
        let m = rng.random_range(0..universe);
        if taken.insert(m) {
            members.push(m);
        }
    }
    Ok((IndexSet::new_unchecked(start, dims, members), false))
}

/// `p` distinct uniform draws from `candidates` minus `excluded`; both sets
/// share a span.
pub fn sample_from_candidates<R: Rng + ?Sized>(
    candidates: &IndexSet,
    excluded: &IndexSet,
    p: usize,
    rng: &mut R,
) -> Result<(IndexSet, bool)> {
    let pool = candidates.difference(excluded)?;
    let clamped = p > pool.len();
    let members = pick(pool.members(), p, rng);
    Ok((
        IndexSet::new_unchecked(candidates.span().start, candidates.dims().to_vec(), members),
        clamped,
    ))
}

/// Uniform sample without replacement of `min(p, pool.len())` entries, in
/// draw order.
fn pick<R: Rng + ?Sized>(pool: &[LinearIndex], p: usize, rng: &mut R) -> Vec<LinearIndex> {
    let k = p.min(pool.len());
    index::sample(rng, pool.len(), k).into_iter().map(|a| pool[a]).collect()
}

/// Per-bond oversampling counts `round(alpha * ln(n_j) * min(j, d - j))`
/// for bonds `j = 1..d-1`.
pub fn oversample_schedule(alpha: f64, dims: &[usize]) -> Result<Vec<usize>> {
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(PeidError::Config(format!("alpha must be finite and >= 0, got {alpha}")));
    }
    let d = dims.len();
    Ok((1..d)
        .map(|j| {
            let w = j.min(d - j) as f64;
            (alpha * (dims[j - 1] as f64).ln() * w).round() as usize
        })
        .collect())
}

/// Per-bond oversampling counts and the master seed.
#[derive(Clone, Debug, PartialEq)]
pub struct OversamplePlan {
    /// `p[j-1]` extra indices at bond `j`.
    pub p: Vec<usize>,
    pub seed: u64,
}

impl OversamplePlan {
    /// The same count at every bond of an order-`d` tensor.
    pub fn constant(d: usize, p: usize, seed: u64) -> Self {
        OversamplePlan { p: vec![p; d.saturating_sub(1)], seed }
    }

    /// Counts from [`oversample_schedule`].
    pub fn scheduled(alpha: f64, dims: &[usize], seed: u64) -> Result<Self> {
        Ok(OversamplePlan { p: oversample_schedule(alpha, dims)?, seed })
    }

    pub fn at(&self, bond: usize) -> usize {
        self.p[bond - 1]
    }

    pub fn mean(&self) -> f64 {
        if self.p.is_empty() {
            return 0.0;
        }
        self.p.iter().sum::<usize>() as f64 / self.p.len() as f64
    }
}

/// Independent stream seed for a labelled sub-task of a run.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    let mut z = master ^ 0x9e37_79b9_7f4a_7c15;
    for &t in tags {
        z = splitmix(z ^ splitmix(t.wrapping_add(0x632b_e59b_d9b4_e019)));
    }
    splitmix(z)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
