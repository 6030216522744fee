//! Tensor trains: evaluation, partial contractions, reversal, concatenation,
//! rounding, and a JSON container.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PeidError, Result};
use crate::index::{ind2sub_into, IndexSet, LinearIndex, Shape};
use crate::linalg::{svd, Svd};
use crate::oracle::{DenseTensor, TensorOracle};

/// Order-3 core of shape `(left, n, right)`, column-major: entry
/// `(a, i, b)` lives at `a + left * (i + n * b)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Core {
    left: usize,
    n: usize,
    right: usize,
    data: Vec<f64>,
}

impl Core {
    pub fn new(left: usize, n: usize, right: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != left * n * right {
            return Err(PeidError::contract(format!(
                "core ({left},{n},{right}) given {} values",
                data.len()
            )));
        }
        Ok(Core { left, n, right, data })
    }

    pub fn zeros(left: usize, n: usize, right: usize) -> Self {
        Core { left, n, right, data: vec![0.0; left * n * right] }
    }

    /// Core whose left unfolding `(left * n) x right` is `m`.
    pub fn from_left_matrix(m: &DMatrix<f64>, left: usize, n: usize) -> Result<Self> {
        if m.nrows() != left * n {
            return Err(PeidError::contract(format!(
                "{} rows cannot form left unfolding of ({left},{n},_)",
                m.nrows()
            )));
        }
        Core::new(left, n, m.ncols(), m.as_slice().to_vec())
    }

    /// Core whose right unfolding `left x (n * right)` is `m`.
    pub fn from_right_matrix(m: &DMatrix<f64>, n: usize, right: usize) -> Result<Self> {
        if m.ncols() != n * right {
            return Err(PeidError::contract(format!(
                "{} columns cannot form right unfolding of (_,{n},{right})",
                m.ncols()
            )));
        }
        Core::new(m.nrows(), n, right, m.as_slice().to_vec())
    }

    pub fn left(&self) -> usize {
        self.left
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn right(&self) -> usize {
        self.right
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, a: usize, i: usize, b: usize) -> f64 {
        self.data[a + self.left * (i + self.n * b)]
    }

    /// `(left * n) x right` reinterpretation.
    pub fn left_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.left * self.n, self.right, &self.data)
    }

    /// `left x (n * right)` reinterpretation.
    pub fn right_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.left, self.n * self.right, &self.data)
    }

    /// The `left x right` slice at mode index `i`.
    pub fn slice(&self, i: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.left, self.right, |a, b| self.get(a, i, b))
    }

    /// Core with rank axes swapped: `(a, i, b) -> (b, i, a)`.
    pub fn transposed(&self) -> Core {
        let mut out = Core::zeros(self.right, self.n, self.left);
        for b in 0..self.right {
            for i in 0..self.n {
                for a in 0..self.left {
                    out.data[b + self.right * (i + self.n * a)] = self.get(a, i, b);
                }
            }
        }
        out
    }

    /// `v · G(:, i, :)` for a row vector `v` of length `left`.
    fn row_times_slice(&self, v: &[f64], i: usize, out: &mut Vec<f64>) {
        out.clear();
        out.resize(self.right, 0.0);
        for (b, o) in out.iter_mut().enumerate() {
            let base = self.left * (i + self.n * b);
            let col = &self.data[base..base + self.left];
            *o = col.iter().zip(v).map(|(x, y)| x * y).sum();
        }
    }

    /// `G(:, i, :) · w` for a column vector `w` of length `right`.
    fn slice_times_col(&self, w: &[f64], i: usize, out: &mut Vec<f64>) {
        out.clear();
        out.resize(self.left, 0.0);
        for (b, &wb) in w.iter().enumerate() {
            let base = self.left * (i + self.n * b);
            for (o, &x) in out.iter_mut().zip(&self.data[base..base + self.left]) {
                *o += x * wb;
            }
        }
    }

    fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }
}

/// Tensor train with cores `G_1 .. G_d` and ranks `(s_0, .., s_d)`,
/// `s_0 = s_d = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct TtTensor {
    shape: Shape,
    cores: Vec<Core>,
}

/// Target for [`TtTensor::round`].
#[derive(Clone, Debug, PartialEq)]
pub enum RoundTarget {
    /// Interior bond ranks `(s_1, .., s_{d-1})`; each is also capped by the
    /// attainable rank.
    Ranks(Vec<usize>),
    /// Relative Frobenius tolerance, split as `tol / sqrt(d - 1)` per bond.
    Tolerance(f64),
}

impl TtTensor {
    pub fn new(cores: Vec<Core>) -> Result<Self> {
        if cores.len() < 2 {
            return Err(PeidError::contract("a tensor train needs at least two cores"));
        }
        if cores[0].left != 1 || cores[cores.len() - 1].right != 1 {
            return Err(PeidError::contract("boundary ranks must be 1"));
        }
        for (k, w) in cores.windows(2).enumerate() {
            if w[0].right != w[1].left {
                return Err(PeidError::contract(format!(
                    "rank chain broken at bond {}: {} vs {}",
                    k + 1,
                    w[0].right,
                    w[1].left
                )));
            }
        }
        let shape = Shape::new(cores.iter().map(|c| c.n).collect())?;
        Ok(TtTensor { shape, cores })
    }

    /// All-zero train with the given interior ranks.
    pub fn zeros(shape: &Shape, ranks: &[usize]) -> Result<Self> {
        let full = full_ranks(shape, ranks)?;
        let cores = shape
            .dims()
            .iter()
            .enumerate()
            .map(|(k, &n)| Core::zeros(full[k], n, full[k + 1]))
            .collect();
        TtTensor::new(cores)
    }

    /// Train with independent standard normal core entries.
    pub fn random<R: Rng + ?Sized>(shape: &Shape, ranks: &[usize], rng: &mut R) -> Result<Self> {
        let full = full_ranks(shape, ranks)?;
        let cores = shape
            .dims()
            .iter()
            .enumerate()
            .map(|(k, &n)| {
                let len = full[k] * n * full[k + 1];
                let data = (0..len).map(|_| rng.sample(StandardNormal)).collect();
                Core { left: full[k], n, right: full[k + 1], data }
            })
            .collect();
        TtTensor::new(cores)
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.cores.len()
    }

    pub fn cores(&self) -> &[Core] {
        &self.cores
    }

    pub fn core(&self, k: usize) -> &Core {
        &self.cores[k]
    }

    /// `(s_0, .., s_d)`.
    pub fn ranks(&self) -> Vec<usize> {
        let mut r: Vec<usize> = self.cores.iter().map(|c| c.left).collect();
        r.push(1);
        r
    }

    /// Number of stored core entries.
    pub fn storage(&self) -> usize {
        self.cores.iter().map(|c| c.data.len()).sum()
    }

    /// Entry at `idx` by a left-to-right chain of vector-matrix products.
    pub fn eval(&self, idx: &[usize]) -> f64 {
        let mut v = vec![1.0];
        let mut next = Vec::new();
        for (core, &i) in self.cores.iter().zip(idx) {
            core.row_times_slice(&v, i, &mut next);
            std::mem::swap(&mut v, &mut next);
        }
        v[0]
    }

    /// Row `G_1(m_1, :) G_2(:, m_2, :) .. G_j(:, m_j, :)` for the linear index
    /// `m` over dims `0..j`; length `s_j`.
    pub fn prefix_row(&self, j: usize, m: LinearIndex) -> Result<Vec<f64>> {
        let d = self.order();
        if j > d {
            return Err(PeidError::Range(format!("prefix length {j} > order {d}")));
        }
        let mut idx = vec![0; j];
        ind2sub_into(&self.shape.dims()[..j], m, &mut idx)?;
        let mut v = vec![1.0];
        let mut next = Vec::new();
        for (core, &i) in self.cores[..j].iter().zip(&idx) {
            core.row_times_slice(&v, i, &mut next);
            std::mem::swap(&mut v, &mut next);
        }
        Ok(v)
    }

    /// Column `G_{d-j+1}(:, m_1, :) .. G_d(:, m_j)` for the linear index `m`
    /// over the last `j` dims; length `s_{d-j}`.
    pub fn suffix_col(&self, j: usize, m: LinearIndex) -> Result<Vec<f64>> {
        let d = self.order();
        if j > d {
            return Err(PeidError::Range(format!("suffix length {j} > order {d}")));
        }
        let mut idx = vec![0; j];
        ind2sub_into(&self.shape.dims()[d - j..], m, &mut idx)?;
        let mut w = vec![1.0];
        let mut next = Vec::new();
        for (core, &i) in self.cores[d - j..].iter().zip(&idx).rev() {
            core.slice_times_col(&w, i, &mut next);
            std::mem::swap(&mut w, &mut next);
        }
        Ok(w)
    }

    /// Train of the index-reversed tensor.
    pub fn reverse(&self) -> TtTensor {
        let cores: Vec<Core> = self.cores.iter().rev().map(Core::transposed).collect();
        TtTensor { shape: self.shape.reversed(), cores }
    }

    /// Block train evaluating to `scale * (a + b)`.
    pub fn concat(a: &TtTensor, b: &TtTensor, scale: f64) -> Result<TtTensor> {
        if a.shape != b.shape {
            return Err(PeidError::contract(format!(
                "concatenating shapes {:?} and {:?}",
                a.shape.dims(),
                b.shape.dims()
            )));
        }
        let d = a.order();
        let mut cores = Vec::with_capacity(d);
        for k in 0..d {
            let (ca, cb) = (&a.cores[k], &b.cores[k]);
            let left = if k == 0 { 1 } else { ca.left + cb.left };
            let right = if k == d - 1 { 1 } else { ca.right + cb.right };
            let mut out = Core::zeros(left, ca.n, right);
            let row_off = if k == 0 { 0 } else { ca.left };
            let col_off = if k == d - 1 { 0 } else { ca.right };
            for i in 0..ca.n {
                for bb in 0..ca.right {
                    for aa in 0..ca.left {
                        out.data[aa + left * (i + ca.n * bb)] = ca.get(aa, i, bb);
                    }
                }
                for bb in 0..cb.right {
                    for aa in 0..cb.left {
                        let (row, col) = (row_off + aa, col_off + bb);
                        out.data[row + left * (i + ca.n * col)] = cb.get(aa, i, bb);
                    }
                }
            }
            cores.push(out);
        }
        cores[0].scale(scale);
        TtTensor::new(cores)
    }

    /// Multiplies the tensor by `s` (applied to the first core).
    pub fn scaled(mut self, s: f64) -> TtTensor {
        self.cores[0].scale(s);
        self
    }

    /// Right-to-left orthogonalization followed by a left-to-right truncated
    /// SVD sweep.
    pub fn round(&self, target: &RoundTarget) -> Result<TtTensor> {
        let d = self.order();
        let current = self.ranks();
        let (caps, delta_rel) = match target {
            RoundTarget::Ranks(r) => {
                if r.len() != d - 1 {
                    return Err(PeidError::contract(format!(
                        "{} target ranks for order {d}",
                        r.len()
                    )));
                }
                for (k, (&t, &c)) in r.iter().zip(&current[1..d]).enumerate() {
                    if t == 0 || t > c {
                        return Err(PeidError::contract(format!(
                            "target rank {t} at bond {} outside 1..={c}",
                            k + 1
                        )));
                    }
                }
                (r.clone(), None)
            }
            RoundTarget::Tolerance(tol) => {
                if !(*tol >= 0.0) {
                    return Err(PeidError::contract(format!("negative tolerance {tol}")));
                }
                (current[1..d].to_vec(), Some(*tol / ((d - 1) as f64).sqrt()))
            }
        };

        let mut cores = self.cores.clone();
        for k in (1..d).rev() {
            let m = cores[k].right_matrix();
            let (n, right) = (cores[k].n, cores[k].right);
            let qr = m.transpose().qr();
            let q = qr.q();
            let r = qr.unpack_r();
            cores[k] = Core::from_right_matrix(&q.transpose(), n, right)?;
            let prev = cores[k - 1].left_matrix() * r.transpose();
            let (pl, pn) = (cores[k - 1].left, cores[k - 1].n);
            cores[k - 1] = Core::from_left_matrix(&prev, pl, pn)?;
        }
        let delta = delta_rel.map(|t| t * frob(cores[0].data()));

        for k in 0..d - 1 {
            let (l, n) = (cores[k].left, cores[k].n);
            let m = cores[k].left_matrix();
            let Svd { u, s, vt } = svd(&m);
            let mut keep = caps[k].min(s.len());
            if let Some(delta) = delta {
                keep = truncation_rank(&s, delta).min(keep);
            }
            keep = keep.max(1);
            cores[k] = Core::from_left_matrix(&u.columns(0, keep).into_owned(), l, n)?;
            let mut svt = vt.rows(0, keep).into_owned();
            for a in 0..keep {
                svt.row_mut(a).scale_mut(s[a]);
            }
            let next = svt * cores[k + 1].right_matrix();
            let (nn, nr) = (cores[k + 1].n, cores[k + 1].right);
            cores[k + 1] = Core::from_right_matrix(&next, nn, nr)?;
        }
        TtTensor::new(cores)
    }

    /// Dense column-major materialization; refuses beyond `limit` entries.
    pub fn to_dense(&self, limit: u128) -> Result<DenseTensor> {
        DenseTensor::from_oracle(self, limit)
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        let c = TtContainer {
            shape: self.shape.dims().to_vec(),
            ranks: self.ranks(),
            cores: self.cores.iter().map(|c| c.data.clone()).collect(),
        };
        serde_json::to_writer(w, &c)?;
        Ok(())
    }

    pub fn read_json<R: Read>(r: R) -> Result<TtTensor> {
        let c: TtContainer = serde_json::from_reader(r)?;
        if c.ranks.len() != c.shape.len() + 1 || c.cores.len() != c.shape.len() {
            return Err(PeidError::contract("TT container: inconsistent lengths"));
        }
        let cores = c
            .cores
            .into_iter()
            .enumerate()
            .map(|(k, data)| Core::new(c.ranks[k], c.shape[k], c.ranks[k + 1], data))
            .collect::<Result<Vec<_>>>()?;
        TtTensor::new(cores)
    }
}

impl TensorOracle for TtTensor {
    fn shape(&self) -> &Shape {
        &self.shape
    }
    fn eval(&self, idx: &[usize]) -> f64 {
        TtTensor::eval(self, idx)
    }
}

/// Evaluates `tt` at many indices in parallel.
pub fn eval_many(tt: &TtTensor, indices: &[Vec<usize>]) -> Vec<f64> {
    indices.par_iter().map(|i| tt.eval(i)).collect()
}

#[derive(Serialize, Deserialize)]
struct TtContainer {
    shape: Vec<usize>,
    ranks: Vec<usize>,
    cores: Vec<Vec<f64>>,
}

fn full_ranks(shape: &Shape, ranks: &[usize]) -> Result<Vec<usize>> {
    if ranks.len() != shape.order() - 1 {
        return Err(PeidError::contract(format!(
            "{} interior ranks for order {}",
            ranks.len(),
            shape.order()
        )));
    }
    let mut full = Vec::with_capacity(ranks.len() + 2);
    full.push(1);
    full.extend_from_slice(ranks);
    full.push(1);
    Ok(full)
}

fn frob(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Smallest `k` whose discarded tail `sqrt(sum_{i>=k} s_i^2)` is at most
/// `delta`; with `delta = 0` every nonzero singular value is kept.
fn truncation_rank(s: &[f64], delta: f64) -> usize {
    let mut tail = 0.0;
    let mut k = s.len();
    while k > 0 {
        let next = tail + s[k - 1] * s[k - 1];
        if next.sqrt() > delta || (delta == 0.0 && s[k - 1] > 0.0) {
            break;
        }
        tail = next;
        k -= 1;
    }
    k
}

/// Rows of the partial chain `G_1 .. G_j` (with `j = cores.len()`) at the
/// members of `set`, which must span dims `0..j`: an `|set| x s_j` matrix.
pub fn prefix_rows(cores: &[Core], set: &IndexSet) -> Result<DMatrix<f64>> {
    let j = cores.len();
    if set.span() != (0..j) || set.dims().iter().zip(cores).any(|(&n, c)| n != c.n) {
        return Err(PeidError::contract(format!(
            "prefix rows from a {j}-core chain at span {:?}",
            set.span()
        )));
    }
    let width = cores.last().map_or(1, |c| c.right);
    let rows: Vec<Vec<f64>> = set
        .members()
        .par_iter()
        .map(|&m| {
            let mut idx = vec![0; j];
            ind2sub_into(set.dims(), m, &mut idx).expect("member in range");
            let mut v = vec![1.0];
            let mut next = Vec::new();
            for (core, &i) in cores.iter().zip(&idx) {
                core.row_times_slice(&v, i, &mut next);
                std::mem::swap(&mut v, &mut next);
            }
            v
        })
        .collect();
    Ok(DMatrix::from_fn(rows.len(), width, |a, b| rows[a][b]))
}
