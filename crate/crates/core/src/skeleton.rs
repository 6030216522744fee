//! Nested pivot sets, greedy TT-ACA, cross-interpolation cores, and the
//! pivot interchange format.

use std::collections::HashSet;
use std::io::{Read, Write};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PeidError, Result};
use crate::index::{IndexSet, LinearIndex, Shape};
use crate::linalg::{lstsq_right, pinv};
use crate::oracle::{extract_block, TensorOracle};
use crate::sampling::derive_seed;
use crate::tt::{Core, TtTensor};

/// Row pivots `I_{<=k}` and column pivots `J_{>k}` for bonds `k = 1..d-1`.
#[derive(Clone, Debug, PartialEq)]
pub struct PivotSets {
    shape: Shape,
    rows: Vec<IndexSet>,
    cols: Vec<IndexSet>,
}

impl PivotSets {
    /// Validated pivot sets; `rows[k-1]` spans dims `0..k`, `cols[k-1]` spans
    /// dims `k..d`.
    pub fn new(shape: Shape, rows: Vec<IndexSet>, cols: Vec<IndexSet>) -> Result<Self> {
        let p = PivotSets { shape, rows, cols };
        p.validate()?;
        Ok(p)
    }

    /// Pivots all taken from the prefixes and suffixes of one multi-index.
    pub fn from_single(shape: Shape, idx: &[usize]) -> Result<Self> {
        shape.check_index(idx)?;
        let d = shape.order();
        let dims = shape.dims();
        let mut rows = Vec::with_capacity(d - 1);
        let mut cols = Vec::with_capacity(d - 1);
        for k in 1..d {
            rows.push(IndexSet::from_tuples(0, dims[..k].to_vec(), &[idx[..k].to_vec()])?);
            cols.push(IndexSet::from_tuples(k, dims[k..].to_vec(), &[idx[k..].to_vec()])?);
        }
        PivotSets::new(shape, rows, cols)
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.order()
    }

    /// `I_{<=k}` for `0 <= k <= d`; `k = 0` is the unit set and `k = d` is
    /// not defined.
    pub fn row(&self, k: usize) -> IndexSet {
        if k == 0 {
            IndexSet::unit(0)
        } else {
            self.rows[k - 1].clone()
        }
    }

    /// `J_{>k}` for `1 <= k <= d`; `k = d` is the unit set.
    pub fn col(&self, k: usize) -> IndexSet {
        if k == self.order() {
            IndexSet::unit(k)
        } else {
            self.cols[k - 1].clone()
        }
    }

    pub fn rows(&self) -> &[IndexSet] {
        &self.rows
    }

    pub fn cols(&self) -> &[IndexSet] {
        &self.cols
    }

    /// `(1, r_1, .., r_{d-1}, 1)`.
    pub fn ranks(&self) -> Vec<usize> {
        let mut r = vec![1];
        r.extend(self.rows.iter().map(IndexSet::len));
        r.push(1);
        r
    }

    /// Interior ranks `(r_1, .., r_{d-1})`.
    pub fn bond_ranks(&self) -> Vec<usize> {
        self.rows.iter().map(IndexSet::len).collect()
    }

    /// Pivot sets of the index-reversed tensor: `I'_{<=j}` is `J_{>d-j}` and
    /// `J'_{>j}` is `I_{<=d-j}`, each with reversed tuples.
    pub fn reversed(&self) -> PivotSets {
        let d = self.order();
        let rows = (1..d).map(|j| self.cols[d - j - 1].reversed(d)).collect();
        let cols = (1..d).map(|j| self.rows[d - j - 1].reversed(d)).collect();
        PivotSets { shape: self.shape.reversed(), rows, cols }
    }

    /// Checks spans, cardinalities, and nestedness at every bond.
    pub fn validate(&self) -> Result<()> {
        let d = self.order();
        let dims = self.shape.dims();
        if self.rows.len() != d - 1 || self.cols.len() != d - 1 {
            return Err(PeidError::Validation {
                bond: 0,
                message: format!(
                    "expected {} bonds, got {} row and {} column sets",
                    d - 1,
                    self.rows.len(),
                    self.cols.len()
                ),
            });
        }
        for k in 1..d {
            let (i, j) = (&self.rows[k - 1], &self.cols[k - 1]);
            if i.span() != (0..k) || i.dims() != &dims[..k] {
                return Err(validation(k, format!("row pivots span {:?}", i.span())));
            }
            if j.span() != (k..d) || j.dims() != &dims[k..] {
                return Err(validation(k, format!("column pivots span {:?}", j.span())));
            }
            if i.is_empty() {
                return Err(validation(k, "empty pivot set".into()));
            }
            if i.len() != j.len() {
                return Err(validation(
                    k,
                    format!("{} row pivots vs {} column pivots", i.len(), j.len()),
                ));
            }
        }
        for k in 1..d - 1 {
            let prev: HashSet<LinearIndex> = self.rows[k - 1].members().iter().copied().collect();
            let next = &self.rows[k];
            for a in 0..next.len() {
                if !prev.contains(&next.prefix_member(next.members()[a], k)) {
                    return Err(PeidError::Nestedness { bond: k + 1, member: next.tuple(a) });
                }
            }
        }
        for k in 1..d - 1 {
            let outer: HashSet<LinearIndex> = self.cols[k].members().iter().copied().collect();
            let inner = &self.cols[k - 1];
            for a in 0..inner.len() {
                if !outer.contains(&inner.suffix_member(inner.members()[a], 1)) {
                    return Err(PeidError::Nestedness { bond: k, member: inner.tuple(a) });
                }
            }
        }
        Ok(())
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        let file = PivotFile {
            shape: self.shape.dims().to_vec(),
            bonds: (1..self.order())
                .map(|k| BondRecord {
                    k,
                    row_pivots: self.rows[k - 1].tuples(),
                    col_pivots: self.cols[k - 1].tuples(),
                })
                .collect(),
        };
        serde_json::to_writer_pretty(w, &file)?;
        Ok(())
    }

    pub fn read_json<R: Read>(r: R) -> Result<PivotSets> {
        let file: PivotFile = serde_json::from_reader(r)?;
        let shape = Shape::new(file.shape.clone()).map_err(|e| validation(0, e.to_string()))?;
        let d = shape.order();
        if file.bonds.len() != d - 1 {
            return Err(validation(0, format!("{} bonds for order {d}", file.bonds.len())));
        }
        let mut rows = Vec::with_capacity(d - 1);
        let mut cols = Vec::with_capacity(d - 1);
        for (pos, b) in file.bonds.iter().enumerate() {
            if b.k != pos + 1 {
                return Err(validation(b.k, format!("bond listed at position {}", pos + 1)));
            }
            let k = b.k;
            let i = tuples_to_set(k, 0, &file.shape[..k], &b.row_pivots)?;
            let j = tuples_to_set(k, k, &file.shape[k..], &b.col_pivots)?;
            rows.push(i);
            cols.push(j);
        }
        PivotSets::new(shape, rows, cols)
    }
}

fn validation(bond: usize, message: String) -> PeidError {
    PeidError::Validation { bond, message }
}

fn tuples_to_set(bond: usize, start: usize, dims: &[usize], tuples: &[Vec<usize>]) -> Result<IndexSet> {
    let mut members = Vec::with_capacity(tuples.len());
    for t in tuples {
        let m = crate::index::sub2ind(dims, t)
            .map_err(|_| validation(bond, format!("pivot {t:?} outside dims {dims:?}")))?;
        members.push(m);
    }
    IndexSet::new(start, dims.to_vec(), members)
        .map_err(|e| validation(bond, e.to_string()))
}

#[derive(Serialize, Deserialize)]
struct PivotFile {
    shape: Vec<usize>,
    bonds: Vec<BondRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct BondRecord {
    k: usize,
    row_pivots: Vec<Vec<usize>>,
    col_pivots: Vec<Vec<usize>>,
}

/// Settings for [`tt_aca`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AcaConfig {
    /// Stop growing a bond when the best residual found is at most
    /// `tolerance` times the largest entry magnitude seen so far.
    pub tolerance: f64,
    pub max_rank: usize,
    /// Alternating row/column fiber maximizations per rook search.
    pub sweeps: usize,
    /// Independent random starts per pivot search; the best is kept.
    pub restarts: usize,
    /// Cap on forward-backward passes over all bonds.
    pub max_passes: usize,
    pub seed: u64,
}

impl Default for AcaConfig {
    fn default() -> Self {
        AcaConfig { tolerance: 1e-6, max_rank: 64, sweeps: 4, restarts: 2, max_passes: 200, seed: 0 }
    }
}

/// Output of [`tt_aca`].
#[derive(Clone, Debug)]
pub struct AcaResult {
    pub pivots: PivotSets,
    /// Every entry looked at was zero; the pivots are a single arbitrary cross.
    pub zero_tensor: bool,
    pub passes: usize,
}

/// Greedy nested-pivot TT-ACA.
///
/// Starts from one cross found by coordinate-wise fiber maximization, then
/// sweeps bonds forward and backward. At bond `k` the search runs on the
/// superblock `X_k(I_{<=k-1} ⊗ 𝕀_k, 𝕀_{k+1} ⊗ J_{>k+1})` against the current
/// cross interpolant, adding at most one pivot per visit, so nestedness holds
/// after every step.
pub fn tt_aca(oracle: &dyn TensorOracle, cfg: &AcaConfig) -> Result<AcaResult> {
    if !(cfg.tolerance >= 0.0) || cfg.max_rank == 0 {
        return Err(PeidError::Config(format!(
            "ACA needs tolerance >= 0 and max_rank >= 1, got {} and {}",
            cfg.tolerance, cfg.max_rank
        )));
    }
    let shape = oracle.shape().clone();
    let d = shape.order();
    let dims = shape.dims().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[0]));
    let (start, scale) = initial_pivot(oracle, &mut rng, cfg.sweeps.max(1));
    let mut scale = scale;
    let mut search = PivotSearch { state: PivotSets::from_single(shape.clone(), &start)?, dims };

    let mut passes = 0;
    if scale > 0.0 {
        while passes < cfg.max_passes {
            let mut grown = false;
            let order: Vec<usize> = (1..d).chain((1..d).rev()).collect();
            for (step, &k) in order.iter().enumerate() {
                let seed = derive_seed(cfg.seed, &[1, passes as u64, step as u64, k as u64]);
                if search.grow(oracle, k, cfg, seed, &mut scale)? {
                    grown = true;
                }
            }
            passes += 1;
            if !grown {
                break;
            }
        }
    } else {
        log::warn!("ACA: all entries inspected were zero");
    }
    Ok(AcaResult { pivots: search.state, zero_tensor: scale == 0.0, passes })
}

struct PivotSearch {
    state: PivotSets,
    dims: Vec<usize>,
}

impl PivotSearch {
    /// Tries to add one pivot at bond `k`; returns whether it did.
    fn grow(
        &mut self,
        oracle: &dyn TensorOracle,
        k: usize,
        cfg: &AcaConfig,
        seed: u64,
        scale: &mut f64,
    ) -> Result<bool> {
        let d = self.dims.len();
        let iset = self.state.row(k);
        let jset = self.state.col(k);
        let r = iset.len();
        let rows = self.state.row(k - 1).kron_axis(self.dims[k - 1])?;
        let cols = self.state.col(k + 1).axis_kron(self.dims[k])?;
        if r >= cfg.max_rank || r >= rows.len() || r >= cols.len() {
            return Ok(false);
        }
        let a_ic = extract_block(oracle, &iset, &cols);
        let a_rj = extract_block(oracle, &rows, &jset);
        let m = extract_block(oracle, &iset, &jset);
        // Residual E = A - A(:, J) M⁻¹ A(I, :), with M factored in pivot
        // order so the interpolant is formed like successive rank-one
        // eliminations. Rows/columns already pivoted are excluded.
        let (left, a_ic) = match cross_factors(&m, &a_rj, &a_ic) {
            Some(f) => f,
            None => (&a_rj * pinv(&m), a_ic),
        };
        let row_pos = rows.positions();
        let col_pos = cols.positions();
        let skip_rows: HashSet<usize> = iset.members().iter().map(|m| row_pos[m]).collect();
        let skip_cols: HashSet<usize> = jset.members().iter().map(|m| col_pos[m]).collect();
        *scale = scale.max(max_abs(&a_ic)).max(max_abs(&a_rj));

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut best: Option<(f64, usize, usize)> = None;
        for _ in 0..cfg.restarts.max(1) {
            let mut i = pick_outside(&mut rng, rows.len(), &skip_rows);
            let mut j = usize::MAX;
            let mut val = 0.0;
            for _ in 0..cfg.sweeps.max(1) {
                let row_set = single(&rows, i);
                let a_row = extract_block(oracle, &row_set, &cols);
                *scale = scale.max(max_abs(&a_row));
                let e_row = a_row - left.row(i) * &a_ic;
                let (nj, _) = argmax_abs(e_row.iter().copied(), &skip_cols, cols.members());
                let col_set = single(&cols, nj);
                let a_col = extract_block(oracle, &rows, &col_set);
                *scale = scale.max(max_abs(&a_col));
                let e_col = a_col - &left * a_ic.column(nj);
                let (ni, vi) = argmax_abs(e_col.iter().copied(), &skip_rows, rows.members());
                let converged = ni == i && nj == j;
                i = ni;
                j = nj;
                val = vi;
                if converged {
                    break;
                }
            }
            if best.is_none_or(|(b, _, _)| val > b) {
                best = Some((val, i, j));
            }
        }
        let (res, i, j) = best.expect("at least one restart");
        if res <= cfg.tolerance * *scale || res == 0.0 {
            return Ok(false);
        }
        let mut new_rows = iset.members().to_vec();
        new_rows.push(rows.members()[i]);
        let mut new_cols = jset.members().to_vec();
        new_cols.push(cols.members()[j]);
        self.state.rows[k - 1] = IndexSet::new(0, self.dims[..k].to_vec(), new_rows)?;
        self.state.cols[k - 1] = IndexSet::new(k, self.dims[k..d].to_vec(), new_cols)?;
        debug_assert!(self.state.validate().is_ok());
        Ok(true)
    }
}

/// `(A(:, J) U⁻¹, L⁻¹ A(I, :))` from the unpivoted factorization `M = L U`;
/// `None` when an elimination pivot vanishes.
fn cross_factors(
    m: &DMatrix<f64>,
    a_rj: &DMatrix<f64>,
    a_ic: &DMatrix<f64>,
) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
    let r = m.nrows();
    let mut l = DMatrix::<f64>::identity(r, r);
    let mut u = m.clone();
    for c in 0..r {
        let piv = u[(c, c)];
        if !(piv.abs() > 0.0) {
            return None;
        }
        for row in c + 1..r {
            let f = u[(row, c)] / piv;
            l[(row, c)] = f;
            for col in c..r {
                u[(row, col)] -= f * u[(c, col)];
            }
        }
    }
    let left = u.transpose().solve_lower_triangular(&a_rj.transpose())?.transpose();
    let right = l.solve_lower_triangular(a_ic)?;
    Some((left, right))
}

fn single(set: &IndexSet, a: usize) -> IndexSet {
    IndexSet::new_unchecked(set.span().start, set.dims().to_vec(), vec![set.members()[a]])
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

fn pick_outside<R: Rng>(rng: &mut R, len: usize, skip: &HashSet<usize>) -> usize {
    loop {
        let a = rng.random_range(0..len);
        if !skip.contains(&a) {
            return a;
        }
    }
}

/// Position of the largest magnitude outside `skip`; ties go to the lowest
/// linear index.
fn argmax_abs(
    vals: impl Iterator<Item = f64>,
    skip: &HashSet<usize>,
    members: &[LinearIndex],
) -> (usize, f64) {
    let mut best = (usize::MAX, -1.0);
    for (a, v) in vals.enumerate() {
        if skip.contains(&a) {
            continue;
        }
        let v = v.abs();
        if v > best.1 || (v == best.1 && members[a] < members[best.0]) {
            best = (a, v);
        }
    }
    best
}

/// Random multi-index improved by coordinate-wise fiber maximization;
/// returns it with the largest magnitude seen.
fn initial_pivot<R: Rng>(oracle: &dyn TensorOracle, rng: &mut R, sweeps: usize) -> (Vec<usize>, f64) {
    let dims = oracle.dims().to_vec();
    let mut idx: Vec<usize> = dims.iter().map(|&n| rng.random_range(0..n)).collect();
    let mut best = oracle.eval(&idx).abs();
    for _ in 0..sweeps {
        let mut moved = false;
        for k in 0..dims.len() {
            let mut probe = idx.clone();
            for i in 0..dims[k] {
                probe[k] = i;
                let v = oracle.eval(&probe).abs();
                if v > best {
                    best = v;
                    idx[k] = i;
                    moved = true;
                }
            }
        }
        if !moved {
            break;
        }
    }
    (idx, best)
}

/// Cross-interpolation train from nested pivots: core `k < d` is
/// `X(I_{<=k-1} ⊗ 𝕀_k, J_{>k}) · X(I_{<=k}, J_{>k})⁺`, the last core is
/// `X(I_{<=d-1} ⊗ 𝕀_d)`.
pub fn skeleton_tt(oracle: &dyn TensorOracle, pivots: &PivotSets) -> Result<TtTensor> {
    if oracle.shape() != pivots.shape() {
        return Err(PeidError::contract("pivot shape differs from oracle shape"));
    }
    let d = oracle.order();
    let dims = oracle.dims();
    let mut cores = Vec::with_capacity(d);
    for k in 1..=d {
        let prev = pivots.row(k - 1);
        let rows = prev.kron_axis(dims[k - 1])?;
        let cols = pivots.col(k);
        let c = extract_block(oracle, &rows, &cols);
        let core = if k == d {
            c
        } else {
            let m = extract_block(oracle, &pivots.row(k), &cols);
            lstsq_right(&c, &m)?
        };
        cores.push(Core::from_left_matrix(&core, prev.len(), dims[k - 1])?);
    }
    TtTensor::new(cores)
}
