//! Dense kernels: orthonormal bases, least squares, QDEIM, and matrix PEID.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{PeidError, Result};
use crate::index::IndexSet;
use crate::oracle::{extract_block, TensorOracle};
use crate::sampling::sample_free_set;

/// Relative singular-value cutoff for pseudo-inverses.
pub const PINV_RTOL: f64 = 1e-12;

/// Orthonormal basis with a flag for numerically rank-deficient input.
#[derive(Clone, Debug)]
pub struct Basis {
    pub q: DMatrix<f64>,
    pub rank_deficient: bool,
}

/// Thin singular value decomposition `a = u · diag(s) · vt` with `s`
/// descending and `u`, `vtᵀ` orthonormal.
#[derive(Clone, Debug)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub s: Vec<f64>,
    pub vt: DMatrix<f64>,
}

const JACOBI_MAX_SWEEPS: usize = 80;

/// One-sided Jacobi SVD. Tall inputs are reduced with a Householder QR first.
///
/// Columns of `u` belonging to exactly zero singular values are completed to
/// an orthonormal set.
pub fn svd(a: &DMatrix<f64>) -> Svd {
    let (m, n) = a.shape();
    if m < n {
        let t = svd(&a.transpose());
        return Svd { u: t.vt.transpose(), s: t.s, vt: t.u.transpose() };
    }
    if n == 0 {
        return Svd { u: DMatrix::zeros(m, 0), s: Vec::new(), vt: DMatrix::zeros(0, 0) };
    }
    if m > n {
        let qr = a.clone().qr();
        let q = qr.q();
        let inner = jacobi(qr.unpack_r());
        return Svd { u: q * inner.u, s: inner.s, vt: inner.vt };
    }
    jacobi(a.clone())
}

fn jacobi(mut w: DMatrix<f64>) -> Svd {
    let (m, n) = w.shape();
    let mut v = DMatrix::<f64>::identity(n, n);
    let mut sq: Vec<f64> = (0..n).map(|j| w.column(j).norm_squared()).collect();
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let (alpha, beta) = (sq[p], sq[q]);
                let gamma = w.column(p).dot(&w.column(q));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(w.as_mut_slice(), m, p, q, c, s);
                rotate(v.as_mut_slice(), n, p, q, c, s);
                sq[p] = w.column(p).norm_squared();
                sq[q] = w.column(q).norm_squared();
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = (0..n).map(|j| w.column(j).norm()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]));
    let mut u = DMatrix::zeros(m, n);
    let mut vt = DMatrix::zeros(n, n);
    let mut zero = Vec::new();
    for (k, &j) in order.iter().enumerate() {
        if norms[j] > 0.0 {
            u.set_column(k, &(w.column(j) / norms[j]));
        } else {
            zero.push(k);
        }
        vt.set_row(k, &v.column(j).transpose());
    }
    if !zero.is_empty() {
        complete_columns(&mut u, &zero);
    }
    Svd { u, s: order.iter().map(|&j| norms[j]).collect(), vt }
}

/// Applies the plane rotation to columns `p < q` of a column-major buffer.
fn rotate(data: &mut [f64], rows: usize, p: usize, q: usize, c: f64, s: f64) {
    let (head, tail) = data.split_at_mut(q * rows);
    let cp = &mut head[p * rows..(p + 1) * rows];
    let cq = &mut tail[..rows];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

/// Fills the listed columns with unit vectors orthogonal to all others.
fn complete_columns(q: &mut DMatrix<f64>, cols: &[usize]) {
    let m = q.nrows();
    let mut e = 0;
    for &c in cols {
        loop {
            q.column_mut(c).fill(0.0);
            q[(e % m, c)] = 1.0;
            e += 1;
            for _ in 0..2 {
                for other in 0..q.ncols() {
                    if other == c {
                        continue;
                    }
                    let dot = q.column(other).dot(&q.column(c));
                    let po = q.column(other).into_owned();
                    q.column_mut(c).axpy(-dot, &po, 1.0);
                }
            }
            let nrm = q.column(c).norm();
            if nrm > 1e-8 {
                q.column_mut(c).scale_mut(1.0 / nrm);
                break;
            }
        }
    }
}

/// Left singular vectors of `a` for the `r` largest singular values.
///
/// When the numerical rank is below `r` the trailing columns still come from
/// the full orthonormal factor, so `q` always has exactly `r` orthonormal
/// columns.
pub fn orthonormal_basis(a: &DMatrix<f64>, r: usize) -> Result<Basis> {
    let (m, n) = a.shape();
    if r > m.min(n) {
        return Err(PeidError::contract(format!(
            "basis of {r} columns requested from a {m}x{n} matrix"
        )));
    }
    if r == 0 {
        return Ok(Basis { q: DMatrix::zeros(m, 0), rank_deficient: false });
    }
    let f = svd(a);
    let smax = f.s[0];
    let rank_deficient = smax == 0.0 || f.s[r - 1] <= PINV_RTOL * smax;
    if rank_deficient {
        log::warn!("orthonormal basis: numerical rank below {r} for a {m}x{n} matrix");
    }
    Ok(Basis { q: f.u.columns(0, r).into_owned(), rank_deficient })
}

/// Spectral-norm deviation `||QᵀQ - I||₂`.
pub fn orthogonality_defect(q: &DMatrix<f64>) -> f64 {
    let g = q.transpose() * q - DMatrix::identity(q.ncols(), q.ncols());
    if g.is_empty() {
        return 0.0;
    }
    g.symmetric_eigenvalues().iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

/// Number of singular values above `PINV_RTOL` times the largest.
fn numerical_rank(s: &[f64]) -> usize {
    let cut = PINV_RTOL * s.first().copied().unwrap_or(0.0);
    s.iter().take_while(|&&v| v > cut && v > 0.0).count()
}

/// Moore-Penrose pseudo-inverse with relative cutoff [`PINV_RTOL`].
pub fn pinv(b: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, n) = b.shape();
    if m == 0 || n == 0 {
        return DMatrix::zeros(n, m);
    }
    let f = svd(b);
    let keep = numerical_rank(&f.s);
    let mut ut = f.u.columns(0, keep).transpose();
    for k in 0..keep {
        ut.row_mut(k).scale_mut(1.0 / f.s[k]);
    }
    f.vt.rows(0, keep).transpose() * ut
}

/// Minimum-norm least-squares solution of `B X = C` on the numerical rank
/// of `B`.
pub fn lstsq(b: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if b.nrows() != c.nrows() {
        return Err(PeidError::contract(format!(
            "lstsq row mismatch: {} vs {}",
            b.nrows(),
            c.nrows()
        )));
    }
    let (m, n) = b.shape();
    if m == 0 || n == 0 {
        return Ok(DMatrix::zeros(n, c.ncols()));
    }
    let f = svd(b);
    let keep = numerical_rank(&f.s);
    if keep < f.s.len() {
        log::debug!("lstsq: numerical rank {keep} of {}", f.s.len());
    }
    let mut utc = f.u.columns(0, keep).transpose() * c;
    for k in 0..keep {
        utc.row_mut(k).scale_mut(1.0 / f.s[k]);
    }
    Ok(f.vt.rows(0, keep).transpose() * utc)
}

/// Right-sided solve: `X` minimizing `||X B - C||` (i.e. `C B†`).
pub fn lstsq_right(c: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(lstsq(&b.transpose(), &c.transpose())?.transpose())
}

/// QDEIM row selection: column-pivoted QR on `Qᵀ`, first `r` pivots.
///
/// Ties in the pivot norm go to the lowest row index.
pub fn qdeim_pivots(q: &DMatrix<f64>) -> Result<Vec<usize>> {
    let (m, r) = q.shape();
    if r > m {
        return Err(PeidError::contract(format!("QDEIM on {m}x{r} basis")));
    }
    let mut w = q.transpose();
    let mut norms: Vec<f64> = (0..m).map(|c| w.column(c).norm_squared()).collect();
    let mut chosen = vec![false; m];
    let mut piv = Vec::with_capacity(r);
    for _ in 0..r {
        let mut best = usize::MAX;
        let mut best_v = -1.0;
        for c in 0..m {
            if !chosen[c] && norms[c] > best_v {
                best_v = norms[c];
                best = c;
            }
        }
        chosen[best] = true;
        piv.push(best);
        let nrm = best_v.sqrt();
        if nrm == 0.0 {
            continue;
        }
        let h = w.column(best) / nrm;
        for c in 0..m {
            if !chosen[c] {
                let dot = h.dot(&w.column(c));
                w.column_mut(c).axpy(-dot, &h, 1.0);
                norms[c] = w.column(c).norm_squared();
            }
        }
    }
    Ok(piv)
}

/// How the middle factor of a matrix skeleton approximation is formed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MatrixVariant {
    /// `U = C† A R†` with explicit pseudo-inverses.
    Direct,
    /// `U = Q_Cᵀ A Q_R` from orthonormal bases of `C` and `Rᵀ`.
    PFull,
    /// Oblique projection through the skeleton rows/columns `I ∪ K`, `J ∪ L`.
    OpAca,
    /// Oblique projection through QDEIM rows of `Q_C` and `Q_R`.
    OpQdeim,
    /// Oblique projection through uniformly drawn rows/columns.
    OpRandom,
}

/// `A ≈ left · core · right`.
#[derive(Clone, Debug)]
pub struct MatrixApprox {
    pub left: DMatrix<f64>,
    pub core: DMatrix<f64>,
    pub right: DMatrix<f64>,
    /// The requested oversampling exceeded the free rows or columns.
    pub clamped: bool,
}

impl MatrixApprox {
    pub fn dense(&self) -> DMatrix<f64> {
        &self.left * &self.core * &self.right
    }
}

/// Skeleton-based matrix approximation with optional oversampling.
///
/// `oracle` must have order 2. `rows` and `cols` are the skeleton pivots
/// (equal length); `p` extra rows and columns are drawn uniformly from the
/// unselected ones. For [`MatrixVariant::OpRandom`] the sampled sets have
/// `r + p` members.
pub fn matrix_peid(
    oracle: &dyn TensorOracle,
    rows: &[usize],
    cols: &[usize],
    variant: MatrixVariant,
    p: usize,
    seed: u64,
) -> Result<MatrixApprox> {
    if oracle.order() != 2 {
        return Err(PeidError::contract("matrix PEID needs an order-2 oracle"));
    }
    if rows.len() != cols.len() {
        return Err(PeidError::contract(format!(
            "{} row pivots vs {} column pivots",
            rows.len(),
            cols.len()
        )));
    }
    let (m, n) = (oracle.dims()[0], oracle.dims()[1]);
    let r = rows.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let iset = IndexSet::new(0, vec![m], rows.iter().map(|&i| i as u128).collect())?;
    let jset = IndexSet::new(1, vec![n], cols.iter().map(|&j| j as u128).collect())?;
    let (kset, kc) = sample_free_set(&iset, p, &mut rng)?;
    let (lset, lc) = sample_free_set(&jset, p, &mut rng)?;
    let clamped = kc || lc;
    let srow = iset.union(&kset)?;
    let tcol = jset.union(&lset)?;
    let all_rows = IndexSet::axis(0, m);
    let all_cols = IndexSet::axis(1, n);
    let c = extract_block(oracle, &all_rows, &tcol);
    let rmat = extract_block(oracle, &srow, &all_cols);

    if variant == MatrixVariant::Direct {
        let a = extract_block(oracle, &all_rows, &all_cols);
        let core = pinv(&c) * a * pinv(&rmat);
        return Ok(MatrixApprox { left: c, core, right: rmat, clamped });
    }

    let qc = orthonormal_basis(&c, r.min(c.ncols()).min(m))?.q;
    let qr = orthonormal_basis(&rmat.transpose(), r.min(rmat.nrows()).min(n))?.q;
    let core = match variant {
        MatrixVariant::PFull => {
            let a = extract_block(oracle, &all_rows, &all_cols);
            qc.transpose() * a * &qr
        }
        _ => {
            let (s, t) = match variant {
                MatrixVariant::OpAca => (srow, tcol),
                MatrixVariant::OpQdeim => {
                    let s = qdeim_pivots(&qc)?;
                    let t = qdeim_pivots(&qr)?;
                    (
                        IndexSet::new(0, vec![m], s.into_iter().map(|i| i as u128).collect())?,
                        IndexSet::new(1, vec![n], t.into_iter().map(|j| j as u128).collect())?,
                    )
                }
                _ => {
                    let (s, _) = sample_free_set(&IndexSet::empty(0, vec![m]), r + p, &mut rng)?;
                    let (t, _) = sample_free_set(&IndexSet::empty(1, vec![n]), r + p, &mut rng)?;
                    (s, t)
                }
            };
            let qcs = select_rows(&qc, &s);
            let qrt = select_rows(&qr, &t);
            let ast = extract_block(oracle, &s, &t);
            let inner = lstsq(&qcs, &ast)?;
            lstsq_right(&inner, &qrt.transpose())?
        }
    };
    Ok(MatrixApprox { left: qc, core, right: qr.transpose(), clamped })
}

/// Rows of `a` at the members of a single-dimension set.
pub(crate) fn select_rows(a: &DMatrix<f64>, set: &IndexSet) -> DMatrix<f64> {
    let idx: Vec<usize> = set.members().iter().map(|&m| m as usize).collect();
    a.select_rows(idx.iter())
}
