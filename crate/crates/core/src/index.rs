//! Multi-index arithmetic and composite index sets.
//!
//! Linear indices use the first-dimension-fastest (column-major) convention:
//! a tuple `(i_a, .., i_b)` over mode sizes `(n_a, .., n_b)` maps to
//! `i_a + n_a * (i_{a+1} + n_{a+1} * (..))`. Linear indices are `u128` so
//! that unfoldings of 10-d tensors with a few hundred points per mode stay
//! addressable.

use std::collections::HashMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{PeidError, Result};

/// Linear index into the flattened space of a contiguous dimension span.
pub type LinearIndex = u128;

/// Mode sizes of a tensor of order `d >= 2`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    dims: Vec<usize>,
}

impl Shape {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.len() < 2 {
            return Err(PeidError::contract(format!(
                "tensor order must be at least 2, got {}",
                dims.len()
            )));
        }
        if dims.contains(&0) {
            return Err(PeidError::contract(format!("zero mode size in {dims:?}")));
        }
        checked_product(&dims).ok_or_else(|| PeidError::Overflow(dims.clone()))?;
        Ok(Shape { dims })
    }

    /// `d` copies of mode size `n`.
    pub fn uniform(d: usize, n: usize) -> Result<Self> {
        Shape::new(vec![n; d])
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn numel(&self) -> u128 {
        span_size(&self.dims)
    }

    /// Number of rows of the `k`-th unfolding (dims `0..k`).
    pub fn unfolding_rows(&self, k: usize) -> u128 {
        span_size(&self.dims[..k])
    }

    pub fn unfolding_cols(&self, k: usize) -> u128 {
        span_size(&self.dims[k..])
    }

    pub fn reversed(&self) -> Shape {
        let mut dims = self.dims.clone();
        dims.reverse();
        Shape { dims }
    }

    pub fn check_index(&self, idx: &[usize]) -> Result<()> {
        if idx.len() != self.dims.len() {
            return Err(PeidError::Range(format!(
                "index of length {} for order-{} tensor",
                idx.len(),
                self.dims.len()
            )));
        }
        for (j, (&i, &n)) in idx.iter().zip(&self.dims).enumerate() {
            if i >= n {
                return Err(PeidError::Range(format!("coordinate {i} >= {n} in dim {j}")));
            }
        }
        Ok(())
    }
}

fn checked_product(dims: &[usize]) -> Option<u128> {
    dims.iter()
        .try_fold(1u128, |acc, &n| acc.checked_mul(n as u128))
}

/// Size of the flattened index space over `dims` (1 for an empty span).
///
/// Callers only pass spans of a validated [`Shape`], so the product fits.
pub fn span_size(dims: &[usize]) -> u128 {
    dims.iter().map(|&n| n as u128).product()
}

/// Column-major linear index of `coords` over mode sizes `dims`.
pub fn sub2ind(dims: &[usize], coords: &[usize]) -> Result<LinearIndex> {
    if coords.len() != dims.len() {
        return Err(PeidError::Range(format!(
            "{} coordinates for {} dims",
            coords.len(),
            dims.len()
        )));
    }
    let mut m: u128 = 0;
    let mut stride: u128 = 1;
    for (j, (&c, &n)) in coords.iter().zip(dims).enumerate() {
        if c >= n {
            return Err(PeidError::Range(format!("coordinate {c} >= {n} at position {j}")));
        }
        m += c as u128 * stride;
        stride *= n as u128;
    }
    Ok(m)
}

/// Inverse of [`sub2ind`].
pub fn ind2sub(dims: &[usize], m: LinearIndex) -> Result<Vec<usize>> {
    let mut out = vec![0; dims.len()];
    ind2sub_into(dims, m, &mut out)?;
    Ok(out)
}

/// Non-allocating [`ind2sub`]; `out.len()` must equal `dims.len()`.
pub fn ind2sub_into(dims: &[usize], m: LinearIndex, out: &mut [usize]) -> Result<()> {
    debug_assert_eq!(out.len(), dims.len());
    if m >= span_size(dims) {
        return Err(PeidError::Range(format!(
            "linear index {m} >= {} for dims {dims:?}",
            span_size(dims)
        )));
    }
    let mut rest = m;
    for (slot, &n) in out.iter_mut().zip(dims) {
        let n = n as u128;
        *slot = (rest % n) as usize;
        rest /= n;
    }
    Ok(())
}

/// Linear index with its digits reversed: `(i_a, .., i_b)` over `dims`
/// becomes `(i_b, .., i_a)` over the reversed dims.
pub fn reverse_linear(dims: &[usize], m: LinearIndex) -> Result<LinearIndex> {
    let mut coords = ind2sub(dims, m)?;
    coords.reverse();
    let mut rdims = dims.to_vec();
    rdims.reverse();
    sub2ind(&rdims, &coords)
}

/// Ordered set of linear indices over the contiguous dimension span
/// `start..start + dims.len()`.
///
/// Enumeration order is part of the value. A span of zero dimensions is
/// allowed; its only possible member is `0` (the empty tuple), which is how
/// the vacuous sets at the ends of a tensor train are represented.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexSet {
    start: usize,
    dims: Vec<usize>,
    members: Vec<LinearIndex>,
}

impl IndexSet {
    pub fn new(start: usize, dims: Vec<usize>, members: Vec<LinearIndex>) -> Result<Self> {
        let size = checked_product(&dims).ok_or_else(|| PeidError::Overflow(dims.clone()))?;
        let mut seen = std::collections::HashSet::with_capacity(members.len());
        for &m in &members {
            if m >= size {
                return Err(PeidError::Range(format!(
                    "member {m} outside span of size {size}"
                )));
            }
            if !seen.insert(m) {
                return Err(PeidError::contract(format!("duplicate member {m}")));
            }
        }
        Ok(IndexSet { start, dims, members })
    }

    pub(crate) fn new_unchecked(start: usize, dims: Vec<usize>, members: Vec<LinearIndex>) -> Self {
        IndexSet { start, dims, members }
    }

    /// Empty set over a span.
    pub fn empty(start: usize, dims: Vec<usize>) -> Self {
        IndexSet { start, dims, members: Vec::new() }
    }

    /// `{()}`: the single empty tuple on a zero-width span at `start`.
    pub fn unit(start: usize) -> Self {
        IndexSet { start, dims: Vec::new(), members: vec![0] }
    }

    /// Every index of the span, in linear order.
    pub fn full(start: usize, dims: Vec<usize>) -> Self {
        let size = span_size(&dims);
        IndexSet { start, dims, members: (0..size).collect() }
    }

    /// The full axis of a single dimension.
    pub fn axis(dim: usize, n: usize) -> Self {
        IndexSet::full(dim, vec![n])
    }

    pub fn from_tuples(start: usize, dims: Vec<usize>, tuples: &[Vec<usize>]) -> Result<Self> {
        let members = tuples
            .iter()
            .map(|t| sub2ind(&dims, t))
            .collect::<Result<Vec<_>>>()?;
        IndexSet::new(start, dims, members)
    }

    pub fn span(&self) -> Range<usize> {
        self.start..self.start + self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn members(&self) -> &[LinearIndex] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Size of the flattened span this set lives in.
    pub fn universe(&self) -> u128 {
        span_size(&self.dims)
    }

    pub fn tuple(&self, a: usize) -> Vec<usize> {
        ind2sub(&self.dims, self.members[a]).expect("members are validated on construction")
    }

    pub fn tuples(&self) -> Vec<Vec<usize>> {
        (0..self.len()).map(|a| self.tuple(a)).collect()
    }

    pub fn contains(&self, m: LinearIndex) -> bool {
        self.members.contains(&m)
    }

    /// Position of `member` in the enumeration order.
    pub fn position(&self, member: LinearIndex) -> Result<usize> {
        self.members
            .iter()
            .position(|&m| m == member)
            .ok_or(PeidError::NotFound { member })
    }

    /// Member-to-position map for bulk lookups.
    pub fn positions(&self) -> HashMap<LinearIndex, usize> {
        self.members.iter().enumerate().map(|(a, &m)| (m, a)).collect()
    }

    /// `self` followed by `other`; both must share the span and be disjoint.
    pub fn union(&self, other: &IndexSet) -> Result<IndexSet> {
        self.check_same_span(other)?;
        let mut members = self.members.clone();
        for &m in &other.members {
            if self.contains(m) {
                return Err(PeidError::contract(format!("union operands share member {m}")));
            }
            members.push(m);
        }
        Ok(IndexSet { start: self.start, dims: self.dims.clone(), members })
    }

    /// Members of `self` that are not in `excluded`, in order.
    pub fn difference(&self, excluded: &IndexSet) -> Result<IndexSet> {
        self.check_same_span(excluded)?;
        let ex: std::collections::HashSet<_> = excluded.members.iter().copied().collect();
        let members = self.members.iter().copied().filter(|m| !ex.contains(m)).collect();
        Ok(IndexSet { start: self.start, dims: self.dims.clone(), members })
    }

    fn check_same_span(&self, other: &IndexSet) -> Result<()> {
        if self.start != other.start || self.dims != other.dims {
            return Err(PeidError::contract(format!(
                "span mismatch: {:?} vs {:?}",
                self.span(),
                other.span()
            )));
        }
        Ok(())
    }

    /// Kronecker composition `left ⊗ right` of adjacent spans.
    ///
    /// The member for `(l, r)` is `l + |span(left)| * r`; enumeration runs the
    /// right factor in the outer loop, so the left factor varies fastest.
    pub fn kron(left: &IndexSet, right: &IndexSet) -> Result<IndexSet> {
        if left.span().end != right.start {
            return Err(PeidError::contract(format!(
                "kron of non-adjacent spans {:?} and {:?}",
                left.span(),
                right.span()
            )));
        }
        let stride = left.universe();
        let mut dims = left.dims.clone();
        dims.extend_from_slice(&right.dims);
        checked_product(&dims).ok_or_else(|| PeidError::Overflow(dims.clone()))?;
        let mut members = Vec::with_capacity(left.len() * right.len());
        for &r in &right.members {
            for &l in &left.members {
                members.push(l + stride * r);
            }
        }
        Ok(IndexSet { start: left.start, dims, members })
    }

    /// `self ⊗ 𝕀_j` where `j` is the dimension right after the span.
    pub fn kron_axis(&self, n: usize) -> Result<IndexSet> {
        IndexSet::kron(self, &IndexSet::axis(self.span().end, n))
    }

    /// `𝕀_j ⊗ self` where `j` is the dimension right before the span.
    pub fn axis_kron(&self, n: usize) -> Result<IndexSet> {
        if self.start == 0 {
            return Err(PeidError::contract("no dimension before span start 0"));
        }
        IndexSet::kron(&IndexSet::axis(self.start - 1, n), self)
    }

    /// Set viewed through the index reversal of an order-`d` tensor: the span
    /// `a..b` maps to `d-b..d-a` and every member has its digits reversed.
    pub fn reversed(&self, d: usize) -> IndexSet {
        let span = self.span();
        let mut dims = self.dims.clone();
        dims.reverse();
        let members = self
            .members
            .iter()
            .map(|&m| reverse_linear(&self.dims, m).expect("members are in range"))
            .collect();
        IndexSet { start: d - span.end, dims, members }
    }

    /// Linear index of each member projected onto the leading `len` dims of
    /// the span (the prefix of each tuple).
    pub fn prefix_member(&self, m: LinearIndex, len: usize) -> LinearIndex {
        m % span_size(&self.dims[..len])
    }

    /// Linear index of the tuple suffix after dropping the leading `skip` dims.
    pub fn suffix_member(&self, m: LinearIndex, skip: usize) -> LinearIndex {
        m / span_size(&self.dims[..skip])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sub2ind_examples() {
        assert_eq!(sub2ind(&[3, 4], &[0, 0]).unwrap(), 0);
        assert_eq!(sub2ind(&[3, 4], &[2, 1]).unwrap(), 5);
        assert_eq!(sub2ind(&[3, 4], &[2, 3]).unwrap(), 11);
    }

    #[test]
    fn ind2sub_examples() {
        assert_eq!(ind2sub(&[3, 4], 5).unwrap(), vec![2, 1]);
        assert_eq!(ind2sub(&[2, 2, 2], 7).unwrap(), vec![1, 1, 1]);
        for m in 0..60 {
            let c = ind2sub(&[3, 4, 5], m).unwrap();
            assert_eq!(sub2ind(&[3, 4, 5], &c).unwrap(), m);
        }
    }

    #[test]
    fn out_of_range_is_an_error() {
        assert!(matches!(sub2ind(&[3, 4], &[3, 0]), Err(PeidError::Range(_))));
        assert!(matches!(ind2sub(&[3, 4], 12), Err(PeidError::Range(_))));
        assert!(sub2ind(&[3, 4], &[1]).is_err());
    }

    #[test]
    fn shape_rejects_bad_dims() {
        assert!(Shape::new(vec![3]).is_err());
        assert!(Shape::new(vec![3, 0]).is_err());
        assert!(matches!(
            Shape::new(vec![usize::MAX, usize::MAX, usize::MAX]),
            Err(PeidError::Overflow(_))
        ));
        // 10-d, n = 1600 still fits.
        assert!(Shape::uniform(10, 1600).is_ok());
    }

    #[test]
    fn kron_with_axis() {
        let left = IndexSet::new(0, vec![10], vec![2, 5]).unwrap();
        let k = left.kron_axis(3).unwrap();
        assert_eq!(k.members(), &[2, 5, 12, 15, 22, 25]);
        assert_eq!(k.span(), 0..2);

        let empty = IndexSet::empty(0, vec![10]);
        assert!(empty.kron_axis(3).unwrap().is_empty());

        for (a, &m) in k.members().iter().enumerate() {
            assert!(left.contains(k.prefix_member(m, 1)));
            // position composition rule
            let s = k.prefix_member(m, 1);
            let i = (k.suffix_member(m, 1)) as usize;
            assert_eq!(a, left.position(s).unwrap() + left.len() * i);
        }
    }

    #[test]
    fn axis_kron_left_factor_fastest() {
        let right = IndexSet::new(2, vec![4, 4], vec![1, 7]).unwrap();
        let k = right.axis_kron(3).unwrap();
        assert_eq!(k.span(), 1..4);
        assert_eq!(k.members(), &[3, 4, 5, 21, 22, 23]);
    }

    #[test]
    fn unit_set_composes_to_axis() {
        let u = IndexSet::unit(0);
        assert_eq!(u.kron_axis(4).unwrap(), IndexSet::axis(0, 4));
    }

    #[test]
    fn locate_row() {
        let s = IndexSet::new(0, vec![30], vec![2, 5, 12, 15]).unwrap();
        assert_eq!(s.position(12).unwrap(), 2);
        assert!(matches!(s.position(3), Err(PeidError::NotFound { member: 3 })));
    }

    #[test]
    fn union_and_difference() {
        let a = IndexSet::new(0, vec![10], vec![1, 4]).unwrap();
        let b = IndexSet::new(0, vec![10], vec![7]).unwrap();
        assert_eq!(a.union(&b).unwrap().members(), &[1, 4, 7]);
        assert!(a.union(&a).is_err());
        let full = IndexSet::axis(0, 10);
        assert_eq!(full.difference(&a).unwrap().len(), 8);
    }

    #[test]
    fn construction_validates_members() {
        assert!(IndexSet::new(0, vec![4], vec![1, 1]).is_err());
        assert!(IndexSet::new(0, vec![4], vec![4]).is_err());
    }

    #[test]
    fn reversal_maps_span_and_digits() {
        // dims 1..3 of an order-4 tensor with sizes (3, 5)
        let s = IndexSet::from_tuples(1, vec![3, 5], &[vec![2, 4], vec![0, 1]]).unwrap();
        let r = s.reversed(4);
        assert_eq!(r.span(), 1..3);
        assert_eq!(r.tuples(), vec![vec![4, 2], vec![1, 0]]);
        assert_eq!(r.reversed(4), s);
    }
}
