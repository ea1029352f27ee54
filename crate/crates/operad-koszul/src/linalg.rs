//! Exact rational linear algebra on sparse matrices.
//!
//! Everything downstream (quotient bases, cobar differentials, homology,
//! the local solves of the Poincaré-duality construction) reduces to the
//! routines in this module.  All arithmetic is over `BigRational`; there is
//! no floating point anywhere and no modular shortcuts.  Pivoting is
//! deterministic (smallest row, then smallest column) so that particular
//! solutions are reproducible.

use num::rational::BigRational;
use num::traits::{One, Zero};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

/// Exact scalar: arbitrary-precision rational, always reduced, denominator positive.
pub type Rat = BigRational;

/// Shorthand for an integer scalar.
pub fn rat(n: i64) -> Rat {
    Rat::from_integer(n.into())
}

/// Shorthand for a fraction.
pub fn ratio(n: i64, d: i64) -> Rat {
    Rat::new(n.into(), d.into())
}

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("chain complex integrity failure: {0}")]
    Integrity(String),
}

/// Sparse vector over the rationals, indexed by `usize`.
///
/// Invariant: no stored zero entries.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SparseVec {
    pub entries: BTreeMap<usize, Rat>,
}

impl SparseVec {
    pub fn new() -> Self {
        SparseVec { entries: BTreeMap::new() }
    }

    pub fn unit(i: usize) -> Self {
        let mut v = SparseVec::new();
        v.entries.insert(i, Rat::one());
        v
    }

    pub fn from_entries(pairs: impl IntoIterator<Item = (usize, Rat)>) -> Self {
        let mut v = SparseVec::new();
        for (i, c) in pairs {
            v.add_to(i, c);
        }
        v
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, i: usize) -> Rat {
        self.entries.get(&i).cloned().unwrap_or_else(Rat::zero)
    }

    pub fn add_to(&mut self, i: usize, c: Rat) {
        if c.is_zero() {
            return;
        }
        let e = self.entries.entry(i).or_insert_with(Rat::zero);
        *e += c;
        if e.is_zero() {
            self.entries.remove(&i);
        }
    }

    pub fn axpy(&mut self, c: &Rat, other: &SparseVec) {
        if c.is_zero() {
            return;
        }
        for (&i, v) in &other.entries {
            self.add_to(i, c * v);
        }
    }

    pub fn scale(&mut self, c: &Rat) {
        if c.is_zero() {
            self.entries.clear();
            return;
        }
        for v in self.entries.values_mut() {
            *v *= c;
        }
    }

    /// First (smallest-index) nonzero coordinate.
    pub fn leading(&self) -> Option<usize> {
        self.entries.keys().next().copied()
    }

    pub fn dot(&self, other: &SparseVec) -> Rat {
        let (small, big) = if self.entries.len() <= other.entries.len() {
            (self, other)
        } else {
            (other, self)
        };
        let mut acc = Rat::zero();
        for (i, c) in &small.entries {
            if let Some(d) = big.entries.get(i) {
                acc += c * d;
            }
        }
        acc
    }
}

/// Sparse matrix with explicit shape.  Rows map columns to nonzero entries.
///
/// As a linear map it sends column vectors of length `cols` to column
/// vectors of length `rows`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExactMatrix {
    pub rows: usize,
    pub cols: usize,
    row_data: Vec<SparseVec>,
}

impl ExactMatrix {
    pub fn zero(rows: usize, cols: usize) -> Self {
        ExactMatrix { rows, cols, row_data: vec![SparseVec::new(); rows] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = ExactMatrix::zero(n, n);
        for i in 0..n {
            m.set(i, i, Rat::one());
        }
        m
    }

    pub fn from_rows(cols: usize, rows: Vec<SparseVec>) -> Self {
        for r in &rows {
            if let Some(&last) = r.entries.keys().next_back() {
                assert!(last < cols, "row entry out of range");
            }
        }
        ExactMatrix { rows: rows.len(), cols, row_data: rows }
    }

    pub fn from_dense(rows: Vec<Vec<i64>>) -> Self {
        let r = rows.len();
        let c = rows.first().map(|x| x.len()).unwrap_or(0);
        let mut m = ExactMatrix::zero(r, c);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), c);
            for (j, &v) in row.iter().enumerate() {
                if v != 0 {
                    m.set(i, j, rat(v));
                }
            }
        }
        m
    }

    pub fn set(&mut self, i: usize, j: usize, c: Rat) {
        assert!(i < self.rows && j < self.cols, "index out of range");
        if c.is_zero() {
            self.row_data[i].entries.remove(&j);
        } else {
            self.row_data[i].entries.insert(j, c);
        }
    }

    pub fn add_to(&mut self, i: usize, j: usize, c: Rat) {
        assert!(i < self.rows && j < self.cols, "index out of range");
        self.row_data[i].add_to(j, c);
    }

    pub fn get(&self, i: usize, j: usize) -> Rat {
        self.row_data[i].get(j)
    }

    pub fn row(&self, i: usize) -> &SparseVec {
        &self.row_data[i]
    }

    pub fn rows_iter(&self) -> impl Iterator<Item = &SparseVec> {
        self.row_data.iter()
    }

    pub fn nnz(&self) -> usize {
        self.row_data.iter().map(|r| r.entries.len()).sum()
    }

    pub fn transpose(&self) -> ExactMatrix {
        let mut t = ExactMatrix::zero(self.cols, self.rows);
        for (i, row) in self.row_data.iter().enumerate() {
            for (&j, c) in &row.entries {
                t.set(j, i, c.clone());
            }
        }
        t
    }

    /// Matrix-vector product where `v` is a sparse column vector.
    pub fn apply(&self, v: &SparseVec) -> SparseVec {
        if let Some(&last) = v.entries.keys().next_back() {
            assert!(last < self.cols, "vector longer than column count");
        }
        let mut out = SparseVec::new();
        for (i, row) in self.row_data.iter().enumerate() {
            let d = row.dot(v);
            if !d.is_zero() {
                out.entries.insert(i, d);
            }
        }
        out
    }

    /// Matrix product `self * other`.
    pub fn mul(&self, other: &ExactMatrix) -> ExactMatrix {
        assert_eq!(self.cols, other.rows, "shape mismatch in matrix product");
        let mut out = ExactMatrix::zero(self.rows, other.cols);
        for (i, row) in self.row_data.iter().enumerate() {
            for (&k, c) in &row.entries {
                for (&j, d) in &other.row_data[k].entries {
                    out.add_to(i, j, c * d);
                }
            }
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.row_data.iter().all(|r| r.is_zero())
    }

    pub fn rank(&self) -> usize {
        let mut sp = RowSpace::new(self.cols);
        for r in &self.row_data {
            sp.insert(r.clone());
        }
        sp.rank()
    }

    pub fn nullity(&self) -> usize {
        self.cols - self.rank()
    }

    /// Basis of the kernel, as sparse column vectors of length `cols`.
    pub fn nullspace(&self) -> Vec<SparseVec> {
        let mut sp = RowSpace::new(self.cols);
        for r in &self.row_data {
            sp.insert(r.clone());
        }
        sp.nullspace()
    }

    /// Deterministic particular solution of `self * x = b`, if any.
    ///
    /// Free variables are set to zero in reduced echelon order, so identical
    /// inputs always yield the identical solution.
    pub fn solve(&self, b: &SparseVec) -> Option<SparseVec> {
        if let Some(&last) = b.entries.keys().next_back() {
            assert!(last < self.rows, "rhs longer than row count");
        }
        // Row-reduce the transpose-augmented system: work on [A | b] rows.
        // Augmented column index = self.cols.
        let aug = self.cols;
        let mut sp = RowSpace::new(self.cols + 1);
        for (i, r) in self.row_data.iter().enumerate() {
            let mut row = r.clone();
            let bi = b.get(i);
            if !bi.is_zero() {
                row.entries.insert(aug, bi);
            }
            sp.insert(row);
        }
        // Inconsistent iff some echelon row has pivot in the augmented column.
        let mut x = SparseVec::new();
        for row in sp.rows() {
            let lead = row.leading().expect("echelon rows are nonzero");
            if lead == aug {
                return None;
            }
            // Reduced echelon: pivot coefficient 1, other pivots eliminated.
            // With free variables zero, x[lead] = rhs entry.
            let rhs = row.get(aug);
            if !rhs.is_zero() {
                x.entries.insert(lead, rhs);
            }
        }
        // The reduced rows may still involve free columns; those variables are
        // zero by convention, so x[pivot] = rhs holds exactly.
        Some(x)
    }
}

impl fmt::Display for ExactMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.rows {
            let mut line = Vec::with_capacity(self.cols);
            for j in 0..self.cols {
                line.push(self.get(i, j).to_string());
            }
            writeln!(f, "[{}]", line.join(", "))?;
        }
        Ok(())
    }
}

/// Row space in reduced echelon form; the workhorse behind rank, nullspace,
/// quotient bases and subspace comparisons.
#[derive(Debug, Clone)]
pub struct RowSpace {
    cols: usize,
    // Rows kept fully reduced, sorted by pivot column.
    rows: Vec<SparseVec>,
}

impl RowSpace {
    pub fn new(cols: usize) -> Self {
        RowSpace { cols, rows: Vec::new() }
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn rank(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[SparseVec] {
        &self.rows
    }

    pub fn pivots(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.leading().unwrap()).collect()
    }

    /// Columns that are not pivot columns: echelon representatives of the
    /// quotient by this row space.
    pub fn free_columns(&self) -> Vec<usize> {
        let piv: std::collections::BTreeSet<usize> = self.pivots().into_iter().collect();
        (0..self.cols).filter(|j| !piv.contains(j)).collect()
    }

    /// Normal form of `v` modulo the row space: pivot coordinates eliminated.
    pub fn reduce(&self, mut v: SparseVec) -> SparseVec {
        for row in &self.rows {
            let p = row.leading().unwrap();
            let c = v.get(p);
            if !c.is_zero() {
                v.axpy(&(-c), row);
            }
        }
        v
    }

    /// Reduce and insert; returns true when the rank grew.
    pub fn insert(&mut self, v: SparseVec) -> bool {
        let mut v = self.reduce(v);
        if v.is_zero() {
            return false;
        }
        let p = v.leading().unwrap();
        let inv = v.get(p).recip();
        v.scale(&inv);
        // Back-substitute into existing rows to stay fully reduced.
        for row in self.rows.iter_mut() {
            let c = row.get(p);
            if !c.is_zero() {
                row.axpy(&(-c), &v);
            }
        }
        let pos = self.rows.partition_point(|r| r.leading().unwrap() < p);
        self.rows.insert(pos, v);
        true
    }

    pub fn contains(&self, v: &SparseVec) -> bool {
        self.reduce(v.clone()).is_zero()
    }

    /// Two row spaces are equal iff they have equal rank and each contains
    /// the other's rows.
    pub fn same_space(&self, other: &RowSpace) -> bool {
        self.rank() == other.rank() && other.rows.iter().all(|r| self.contains(r))
    }

    /// Kernel of the matrix whose rows span this space (viewed as a map on
    /// column vectors): one basis vector per free column.
    pub fn nullspace(&self) -> Vec<SparseVec> {
        let mut basis = Vec::new();
        for j in self.free_columns() {
            let mut v = SparseVec::unit(j);
            for row in &self.rows {
                let c = row.get(j);
                if !c.is_zero() {
                    v.add_to(row.leading().unwrap(), -c);
                }
            }
            basis.push(v);
        }
        basis
    }
}

/// A bounded cochain complex of exact matrices.
///
/// `dims[k]` is the dimension in degree `lo + k`; `maps[k]` is the
/// differential from degree `lo + k` to `lo + k + 1` (degree +1 convention).
#[derive(Debug, Clone)]
pub struct ChainComplexData {
    pub lo: i64,
    pub dims: Vec<usize>,
    pub maps: Vec<ExactMatrix>,
}

impl ChainComplexData {
    pub fn new(lo: i64, dims: Vec<usize>, maps: Vec<ExactMatrix>) -> Result<Self, LinalgError> {
        if !dims.is_empty() && maps.len() + 1 != dims.len() {
            return Err(LinalgError::DimMismatch(format!(
                "expected {} differentials for {} degrees, got {}",
                dims.len().saturating_sub(1),
                dims.len(),
                maps.len()
            )));
        }
        for (k, m) in maps.iter().enumerate() {
            if m.cols != dims[k] || m.rows != dims[k + 1] {
                return Err(LinalgError::DimMismatch(format!(
                    "differential in degree {} has shape {}x{}, expected {}x{}",
                    lo + k as i64,
                    m.rows,
                    m.cols,
                    dims[k + 1],
                    dims[k]
                )));
            }
        }
        let c = ChainComplexData { lo, dims, maps };
        c.check_square_zero()?;
        Ok(c)
    }

    pub fn degrees(&self) -> impl Iterator<Item = i64> + '_ {
        (0..self.dims.len()).map(move |k| self.lo + k as i64)
    }

    pub fn dim(&self, degree: i64) -> usize {
        let k = degree - self.lo;
        if k < 0 || k as usize >= self.dims.len() {
            0
        } else {
            self.dims[k as usize]
        }
    }

    pub fn check_square_zero(&self) -> Result<(), LinalgError> {
        for k in 0..self.maps.len().saturating_sub(1) {
            let prod = self.maps[k + 1].mul(&self.maps[k]);
            if !prod.is_zero() {
                return Err(LinalgError::Integrity(format!(
                    "d² ≠ 0 between degrees {} and {}",
                    self.lo + k as i64,
                    self.lo + k as i64 + 2
                )));
            }
        }
        Ok(())
    }

    /// Homology dimension per degree: dim ker(d_k) − rank(d_{k−1}).
    pub fn homology_dims(&self) -> BTreeMap<i64, usize> {
        let mut out = BTreeMap::new();
        let n = self.dims.len();
        for k in 0..n {
            let rank_out = if k < self.maps.len() { self.maps[k].rank() } else { 0 };
            let rank_in = if k > 0 { self.maps[k - 1].rank() } else { 0 };
            let ker = self.dims[k] - rank_out;
            out.insert(self.lo + k as i64, ker - rank_in);
        }
        out
    }

    /// Alternating sum of dimensions by degree.
    pub fn euler_characteristic(&self) -> i64 {
        let mut acc: i64 = 0;
        for (k, &d) in self.dims.iter().enumerate() {
            let deg = self.lo + k as i64;
            let sign = if deg.rem_euclid(2) == 0 { 1 } else { -1 };
            acc += sign * d as i64;
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_identity() {
        assert_eq!(ExactMatrix::identity(3).rank(), 3);
    }

    #[test]
    fn rank_proportional_rows() {
        let m = ExactMatrix::from_dense(vec![vec![1, 2], vec![2, 4]]);
        assert_eq!(m.rank(), 1);
        assert_eq!(m.nullity(), 1);
    }

    #[test]
    fn rank_plus_nullity_is_cols() {
        let m = ExactMatrix::from_dense(vec![
            vec![1, 2, 3, 4],
            vec![2, 4, 6, 8],
            vec![0, 1, 0, 1],
        ]);
        assert_eq!(m.rank() + m.nullspace().len(), m.cols);
        for v in m.nullspace() {
            assert!(m.apply(&v).is_zero());
        }
    }

    #[test]
    fn solve_identity() {
        let m = ExactMatrix::identity(4);
        let b = SparseVec::from_entries([(0, rat(3)), (2, ratio(1, 2))]);
        assert_eq!(m.solve(&b).unwrap(), b);
    }

    #[test]
    fn solve_underdetermined_prefers_zero_free_vars() {
        // [[1,1]] x = [0]  →  x = (0,0)
        let m = ExactMatrix::from_dense(vec![vec![1, 1]]);
        let x = m.solve(&SparseVec::new()).unwrap();
        assert!(x.is_zero());
        // [[1,1]] x = [5]  →  pivot col 0 carries the value
        let x = m.solve(&SparseVec::from_entries([(0, rat(5))])).unwrap();
        assert_eq!(x, SparseVec::from_entries([(0, rat(5))]));
    }

    #[test]
    fn solve_inconsistent() {
        let m = ExactMatrix::from_dense(vec![vec![1, 2], vec![2, 4]]);
        let b = SparseVec::from_entries([(0, rat(1)), (1, rat(3))]);
        assert!(m.solve(&b).is_none());
    }

    /// Boundary of the closed 2-simplex on vertices {0,1,2}: the matrix of
    /// ∂: C_2 → C_1 with C_2 = span{[012]} and C_1 = span{[01],[02],[12]}.
    /// ∂[012] = [12] − [02] + [01].
    #[test]
    fn solve_fills_a_cycle_on_the_triangle() {
        let mut bd = ExactMatrix::zero(3, 1);
        bd.set(0, 0, rat(1)); // [01]
        bd.set(1, 0, rat(-1)); // [02]
        bd.set(2, 0, rat(1)); // [12]
        // b = the boundary cycle [01] − [02] + [12]
        let b = SparseVec::from_entries([(0, rat(1)), (1, rat(-1)), (2, rat(1))]);
        let x = bd.solve(&b).unwrap();
        assert_eq!(bd.apply(&x), b);
        assert_eq!(x, SparseVec::unit(0));
    }

    #[test]
    fn homology_zero_maps() {
        let c = ChainComplexData::new(
            0,
            vec![1, 1],
            vec![ExactMatrix::zero(1, 1)],
        )
        .unwrap();
        let h = c.homology_dims();
        assert_eq!(h[&0], 1);
        assert_eq!(h[&1], 1);
    }

    #[test]
    fn homology_acyclic() {
        let c = ChainComplexData::new(0, vec![1, 1], vec![ExactMatrix::identity(1)]).unwrap();
        let h = c.homology_dims();
        assert_eq!(h[&0], 0);
        assert_eq!(h[&1], 0);
    }

    #[test]
    fn square_zero_rejected() {
        let bad = ChainComplexData::new(
            0,
            vec![1, 1, 1],
            vec![ExactMatrix::identity(1), ExactMatrix::identity(1)],
        );
        assert!(bad.is_err());
    }

    #[test]
    fn euler_characteristic_matches_homology() {
        // 0 → Q² → Q → 0 with the projection map.
        let m = ExactMatrix::from_dense(vec![vec![1, 0]]);
        let c = ChainComplexData::new(0, vec![2, 1], vec![m]).unwrap();
        let h = c.homology_dims();
        let euler_h: i64 = h.iter().map(|(d, &n)| if d % 2 == 0 { n as i64 } else { -(n as i64) }).sum();
        assert_eq!(c.euler_characteristic(), euler_h);
    }

    #[test]
    fn rowspace_quotient_representatives() {
        let mut sp = RowSpace::new(3);
        sp.insert(SparseVec::from_entries([(0, rat(1)), (1, rat(1))]));
        assert_eq!(sp.free_columns(), vec![1, 2]);
        let v = SparseVec::from_entries([(0, rat(2)), (2, rat(5))]);
        let red = sp.reduce(v);
        // coordinate 0 is a pivot, so it must be eliminated
        assert!(red.get(0).is_zero());
        assert_eq!(red.get(2), rat(5));
    }
}
