//! Projection-enhanced post-processing of skeleton pivots.
//!
//! Every algorithm here is assembled from the same pieces: a left pass over
//! bonds `1..=h_L` of `X`, a left pass over bonds `1..=h_R` of the reversed
//! tensor `Y`, and a middle core
//!
//! ```text
//! T(α, i, β) = Σ A[α, a] · X(S^L[a], i, S^R[s]) · B[β, s]
//! ```
//!
//! where `A` and `B` are the oblique projectors produced by the two passes.
//! One-sided runs have `h_R = 0`, two-sided runs split the bonds around a
//! middle core, and the rounded variant combines a forward and a reverse
//! one-sided run.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PeidError, Result};
use crate::index::IndexSet;
use crate::linalg::{lstsq, orthonormal_basis, pinv};
use crate::oracle::{extract_block, ReversedOracle, TensorOracle};
use crate::sampling::{derive_seed, sample_free_set, sample_from_candidates, OversamplePlan};
use crate::skeleton::PivotSets;
use crate::tt::{prefix_rows, Core, RoundTarget, TtTensor};

/// How one side builds its bases.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PassKind {
    /// Independent per-bond bases from nested row sets; bonds run in parallel.
    Par,
    /// A left-to-right sweep that projects through the cores built so far.
    Seq,
}

/// The five PEID variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PeidAlgorithm {
    Par,
    Seq,
    Par2,
    Seq2,
    /// Forward and reverse one-sided runs, averaged and rounded.
    Round(PassKind),
}

impl PeidAlgorithm {
    pub const ALL: [PeidAlgorithm; 5] = [
        PeidAlgorithm::Par,
        PeidAlgorithm::Seq,
        PeidAlgorithm::Par2,
        PeidAlgorithm::Seq2,
        PeidAlgorithm::Round(PassKind::Seq),
    ];

    pub fn name(&self) -> &'static str {
        match self {
            PeidAlgorithm::Par => "peid-par",
            PeidAlgorithm::Seq => "peid-seq",
            PeidAlgorithm::Par2 => "peid-par2",
            PeidAlgorithm::Seq2 => "peid-seq2",
            PeidAlgorithm::Round(PassKind::Seq) => "peid-round",
            PeidAlgorithm::Round(PassKind::Par) => "peid-round-par",
        }
    }

    fn kind(&self) -> PassKind {
        match self {
            PeidAlgorithm::Par | PeidAlgorithm::Par2 | PeidAlgorithm::Round(PassKind::Par) => {
                PassKind::Par
            }
            _ => PassKind::Seq,
        }
    }

    /// Bonds covered from the left and from the right for order `d`.
    pub fn split(&self, d: usize) -> (usize, usize) {
        match self {
            PeidAlgorithm::Par | PeidAlgorithm::Seq => (d - 1, 0),
            PeidAlgorithm::Par2 | PeidAlgorithm::Seq2 => {
                let h_left = d.div_ceil(2) - 1;
                (h_left, d - 1 - h_left)
            }
            PeidAlgorithm::Round(_) => (d - 1, d - 1),
        }
    }
}

impl fmt::Display for PeidAlgorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PeidAlgorithm {
    type Err = PeidError;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.strip_prefix("peid-").unwrap_or(s);
        Ok(match t {
            "par" => PeidAlgorithm::Par,
            "seq" => PeidAlgorithm::Seq,
            "par2" => PeidAlgorithm::Par2,
            "seq2" => PeidAlgorithm::Seq2,
            "round" | "round-seq" => PeidAlgorithm::Round(PassKind::Seq),
            "round-par" => PeidAlgorithm::Round(PassKind::Par),
            _ => return Err(PeidError::Config(format!("unknown PEID algorithm '{s}'"))),
        })
    }
}

/// Oversample sets of one side for bonds `1..=h`.
#[derive(Clone, Debug, PartialEq)]
pub struct SideSets {
    /// Row-side extras, one per bond.
    pub k: Vec<IndexSet>,
    /// Column-side extras, one per bond.
    pub l: Vec<IndexSet>,
}

impl SideSets {
    fn empty() -> Self {
        SideSets { k: Vec::new(), l: Vec::new() }
    }

    pub fn bonds(&self) -> usize {
        self.k.len()
    }

    fn reversed(&self, d: usize) -> SideSets {
        SideSets {
            k: self.k.iter().map(|s| s.reversed(d)).collect(),
            l: self.l.iter().map(|s| s.reversed(d)).collect(),
        }
    }
}

/// Pre-drawn oversample sets, all in the coordinates of the input tensor.
///
/// `left.k[j-1]` is `K_{<=j}` (dims `0..j`) and `left.l[j-1]` is `L_{>j}`.
/// `right.k[j-1]` is `K^R_{>d-j}` (dims `d-j..d`) and `right.l[j-1]` is
/// `L^R_{<=d-j}`, so the right side mirrors the left through index reversal.
#[derive(Clone, Debug, PartialEq)]
pub struct OversampleSets {
    pub left: SideSets,
    pub right: SideSets,
    /// Some bond received fewer indices than requested.
    pub clamped: bool,
}

/// Output of a PEID run.
#[derive(Clone, Debug)]
pub struct PeidResult {
    pub tt: TtTensor,
    pub clamped: bool,
    /// Some basis came from a numerically rank-deficient matrix.
    pub rank_deficient: bool,
}

/// Draws the oversample sets `alg` consumes.
///
/// Parallel passes use the nested chain `K_{<=j} ⊆ (K_{<=j-1} ⊗ 𝕀_j) \ I_{<=j}`;
/// sequential passes draw `K_{<=j}` freely. `L` sets are always free. Each
/// set has its own stream derived from `plan.seed`, the side, and the bond.
pub fn draw_oversample_sets(
    pivots: &PivotSets,
    plan: &OversamplePlan,
    alg: PeidAlgorithm,
) -> Result<OversampleSets> {
    let d = pivots.order();
    if plan.p.len() != d - 1 {
        return Err(PeidError::Config(format!(
            "oversample plan has {} bonds for order {d}",
            plan.p.len()
        )));
    }
    let (h_left, h_right) = alg.split(d);
    let nested = alg.kind() == PassKind::Par;
    let (left, c_left) = draw_side(pivots, h_left, nested, |j| plan.at(j), plan.seed, 0)?;
    let (right_y, c_right) =
        draw_side(&pivots.reversed(), h_right, nested, |j| plan.at(d - j), plan.seed, 1)?;
    let clamped = c_left || c_right;
    if clamped {
        log::warn!("oversample sets clamped to the available free indices");
    }
    Ok(OversampleSets { left, right: right_y.reversed(d), clamped })
}

/// Sets in the coordinates of the tensor `pivots` belongs to.
fn draw_side(
    pivots: &PivotSets,
    h: usize,
    nested: bool,
    p_at: impl Fn(usize) -> usize,
    seed: u64,
    side: u64,
) -> Result<(SideSets, bool)> {
    let dims = pivots.shape().dims();
    let mut sets = SideSets::empty();
    let mut clamped = false;
    let mut prev_k = IndexSet::unit(0);
    for j in 1..=h {
        let p = p_at(j);
        let rows = pivots.row(j);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[side, j as u64, 0]));
        let (k, ck) = if nested {
            let candidates = prev_k.kron_axis(dims[j - 1])?;
            sample_from_candidates(&candidates, &rows, p, &mut rng)?
        } else {
            sample_free_set(&rows, p, &mut rng)?
        };
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[side, j as u64, 1]));
        let (l, cl) = sample_free_set(&pivots.col(j), p, &mut rng)?;
        clamped |= ck || cl;
        prev_k = k.clone();
        sets.k.push(k);
        sets.l.push(l);
    }
    Ok((sets, clamped))
}

/// Cores `1..=h` of one side, the projector onto the final row set, and that
/// row set, all in the coordinates of the tensor the pass ran on.
struct SidePass {
    cores: Vec<Core>,
    projector: DMatrix<f64>,
    rows: IndexSet,
    rank_deficient: bool,
}

impl SidePass {
    fn trivial() -> Self {
        SidePass {
            cores: Vec::new(),
            projector: DMatrix::from_element(1, 1, 1.0),
            rows: IndexSet::unit(0),
            rank_deficient: false,
        }
    }
}

fn check_sets(pivots: &PivotSets, sets: &SideSets) -> Result<()> {
    let d = pivots.order();
    if sets.k.len() != sets.l.len() || sets.k.len() >= d {
        return Err(PeidError::contract(format!(
            "{} row and {} column oversample sets for order {d}",
            sets.k.len(),
            sets.l.len()
        )));
    }
    Ok(())
}

fn run_pass(
    oracle: &dyn TensorOracle,
    pivots: &PivotSets,
    sets: &SideSets,
    kind: PassKind,
) -> Result<SidePass> {
    check_sets(pivots, sets)?;
    if sets.bonds() == 0 {
        return Ok(SidePass::trivial());
    }
    match kind {
        PassKind::Par => par_pass(oracle, pivots, sets),
        PassKind::Seq => seq_pass(oracle, pivots, sets),
    }
}

/// `S_j = I_{<=j} ∪ K_{<=j}` with `S_0` the unit set.
fn row_set(pivots: &PivotSets, sets: &SideSets, j: usize) -> Result<IndexSet> {
    if j == 0 {
        Ok(IndexSet::unit(0))
    } else {
        pivots.row(j).union(&sets.k[j - 1])
    }
}

fn col_set(pivots: &PivotSets, sets: &SideSets, j: usize) -> Result<IndexSet> {
    pivots.col(j).union(&sets.l[j - 1])
}

/// Positions of `sub` inside `within`.
fn locate(bond: usize, within: &IndexSet, sub: &IndexSet) -> Result<Vec<usize>> {
    let pos = within.positions();
    sub.members()
        .iter()
        .enumerate()
        .map(|(a, m)| {
            pos.get(m)
                .copied()
                .ok_or_else(|| PeidError::Nestedness { bond, member: sub.tuple(a) })
        })
        .collect()
}

fn rows_at(a: &DMatrix<f64>, pos: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(pos.len(), a.ncols(), |i, c| a[(pos[i], c)])
}

fn par_pass(oracle: &dyn TensorOracle, pivots: &PivotSets, sets: &SideSets) -> Result<SidePass> {
    let h = sets.bonds();
    let dims = pivots.shape().dims();
    let ranks = pivots.ranks();
    let row_sets = (0..=h).map(|j| row_set(pivots, sets, j)).collect::<Result<Vec<_>>>()?;

    let bases = (1..=h)
        .into_par_iter()
        .map(|j| {
            let rows = row_sets[j - 1].kron_axis(dims[j - 1])?;
            let cols = col_set(pivots, sets, j)?;
            let block = extract_block(oracle, &rows, &cols);
            let basis = orthonormal_basis(&block, ranks[j])?;
            let selected = locate(j, &rows, &row_sets[j])?;
            Ok((basis, selected))
        })
        .collect::<Result<Vec<_>>>()?;

    let cores = (1..=h)
        .into_par_iter()
        .map(|j| {
            let u = &bases[j - 1].0.q;
            if j == 1 {
                return Core::from_left_matrix(u, 1, dims[0]);
            }
            let (prev, selected) = (&bases[j - 2].0.q, &bases[j - 2].1);
            let width = row_sets[j - 1].len();
            let reshaped = DMatrix::from_column_slice(width, dims[j - 1] * ranks[j], u.as_slice());
            let t = lstsq(&rows_at(prev, selected), &reshaped)?;
            Core::from_right_matrix(&t, dims[j - 1], ranks[j])
        })
        .collect::<Result<Vec<_>>>()?;

    let (last, selected) = (&bases[h - 1].0.q, &bases[h - 1].1);
    Ok(SidePass {
        cores,
        projector: pinv(&rows_at(last, selected)),
        rows: row_sets[h].clone(),
        rank_deficient: bases.iter().any(|(b, _)| b.rank_deficient),
    })
}

fn seq_pass(oracle: &dyn TensorOracle, pivots: &PivotSets, sets: &SideSets) -> Result<SidePass> {
    let h = sets.bonds();
    let dims = pivots.shape().dims();
    let ranks = pivots.ranks();
    let mut cores = Vec::with_capacity(h);
    let mut rank_deficient = false;
    let mut y = extract_block(oracle, &IndexSet::axis(0, dims[0]), &col_set(pivots, sets, 1)?);
    for j in 1..=h {
        let basis = orthonormal_basis(&y, ranks[j])?;
        rank_deficient |= basis.rank_deficient;
        cores.push(Core::from_left_matrix(&basis.q, ranks[j - 1], dims[j - 1])?);
        let rows = row_set(pivots, sets, j)?;
        let f = prefix_rows(&cores, &rows)?;
        if j == h {
            return Ok(SidePass { cores, projector: pinv(&f), rows, rank_deficient });
        }
        let cols = col_set(pivots, sets, j + 1)?.axis_kron(dims[j])?;
        let block = extract_block(oracle, &rows, &cols);
        let z = lstsq(&f, &block)?;
        let width = cols.len() / dims[j];
        y = DMatrix::from_column_slice(ranks[j] * dims[j], width, z.as_slice());
    }
    unreachable!("loop returns at j == h")
}

/// Joins a left pass on `oracle` with a left pass on its reversal.
fn assemble(
    oracle: &dyn TensorOracle,
    left: SidePass,
    right: SidePass,
) -> Result<(TtTensor, bool)> {
    let d = oracle.order();
    let c = left.cores.len();
    let n = oracle.dims()[c];
    let right_rows = right.rows.reversed(d);
    let block = extract_block(oracle, &left.rows.kron_axis(n)?, &right_rows);
    let (sl, sr) = (left.rows.len(), right_rows.len());
    let folded = DMatrix::from_column_slice(sl, n * sr, block.as_slice());
    let z = &left.projector * folded;
    let rl = z.nrows();
    let unfolded = DMatrix::from_column_slice(rl * n, sr, z.as_slice());
    let middle = unfolded * right.projector.transpose();

    let mut cores = left.cores;
    cores.push(Core::from_left_matrix(&middle, rl, n)?);
    cores.extend(right.cores.iter().rev().map(Core::transposed));
    Ok((TtTensor::new(cores)?, left.rank_deficient || right.rank_deficient))
}

fn check_inputs(oracle: &dyn TensorOracle, pivots: &PivotSets) -> Result<()> {
    if oracle.shape() != pivots.shape() {
        return Err(PeidError::contract(format!(
            "pivots for shape {:?} applied to shape {:?}",
            pivots.shape().dims(),
            oracle.dims()
        )));
    }
    Ok(())
}

/// Runs `alg` with pre-drawn sets.
pub fn tt_peid_with_sets(
    oracle: &dyn TensorOracle,
    pivots: &PivotSets,
    sets: &OversampleSets,
    alg: PeidAlgorithm,
) -> Result<PeidResult> {
    check_inputs(oracle, pivots)?;
    let d = pivots.order();
    let (h_left, h_right) = alg.split(d);
    if sets.left.bonds() != h_left || sets.right.bonds() != h_right {
        return Err(PeidError::contract(format!(
            "{} needs ({h_left}, {h_right}) bonds of oversample sets, got ({}, {})",
            alg,
            sets.left.bonds(),
            sets.right.bonds()
        )));
    }
    let kind = alg.kind();
    let reversed = ReversedOracle::new(oracle);
    let rev_pivots = pivots.reversed();
    let right_sets = sets.right.reversed(d);

    let (tt, rank_deficient) = match alg {
        PeidAlgorithm::Round(_) => {
            let forward = run_pass(oracle, pivots, &sets.left, kind)?;
            let (a, da) = assemble(oracle, forward, SidePass::trivial())?;
            let backward = run_pass(&reversed, &rev_pivots, &right_sets, kind)?;
            let (b, db) = assemble(&reversed, backward, SidePass::trivial())?;
            let sum = TtTensor::concat(&a, &b.reverse(), 0.5)?;
            (sum.round(&RoundTarget::Ranks(pivots.bond_ranks()))?, da || db)
        }
        _ => {
            let left = run_pass(oracle, pivots, &sets.left, kind)?;
            let right = run_pass(&reversed, &rev_pivots, &right_sets, kind)?;
            assemble(oracle, left, right)?
        }
    };
    Ok(PeidResult { tt, clamped: sets.clamped, rank_deficient })
}

/// Draws oversample sets from `plan` and runs `alg`.
pub fn tt_peid(
    oracle: &dyn TensorOracle,
    pivots: &PivotSets,
    plan: &OversamplePlan,
    alg: PeidAlgorithm,
) -> Result<PeidResult> {
    check_inputs(oracle, pivots)?;
    let sets = draw_oversample_sets(pivots, plan, alg)?;
    tt_peid_with_sets(oracle, pivots, &sets, alg)
}

/// Dimension-parallel one-sided PEID.
pub fn tt_peid_par(
    oracle: &dyn TensorOracle,
    pivots: &PivotSets,
    plan: &OversamplePlan,
) -> Result<PeidResult> {
    tt_peid(oracle, pivots, plan, PeidAlgorithm::Par)
}

/// Sequential one-sided PEID.
pub fn tt_peid_seq(
    oracle: &dyn TensorOracle,
    pivots: &PivotSets,
    plan: &OversamplePlan,
) -> Result<PeidResult> {
    tt_peid(oracle, pivots, plan, PeidAlgorithm::Seq)
}

/// Two-sided dimension-parallel PEID.
pub fn tt_peid_par2(
    oracle: &dyn TensorOracle,
    pivots: &PivotSets,
    plan: &OversamplePlan,
) -> Result<PeidResult> {
    tt_peid(oracle, pivots, plan, PeidAlgorithm::Par2)
}

/// Two-sided sequential PEID.
pub fn tt_peid_seq2(
    oracle: &dyn TensorOracle,
    pivots: &PivotSets,
    plan: &OversamplePlan,
) -> Result<PeidResult> {
    tt_peid(oracle, pivots, plan, PeidAlgorithm::Seq2)
}

/// Forward plus reverse one-sided runs of `base`, averaged and rounded back
/// to the pivot ranks.
pub fn tt_peid_round(
    oracle: &dyn TensorOracle,
    pivots: &PivotSets,
    plan: &OversamplePlan,
    base: PassKind,
) -> Result<PeidResult> {
    tt_peid(oracle, pivots, plan, PeidAlgorithm::Round(base))
}
