use std::sync::OnceLock;

use num_complex::Complex64 as C64;

use super::{DenseMatrix, HilbertError, HilbertLayout, DROP_TOLERANCE};

const ZERO: C64 = C64::new(0.0, 0.0);

/// Complex sparse matrix on a composite layout, stored as compressed rows
/// with sorted column indices.
#[derive(Debug, Clone)]
pub struct SparseOperator {
    layout: HilbertLayout,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<C64>,
    hermitian: OnceLock<bool>,
}

impl SparseOperator {
    /// Build from (row, col, value) triplets. Duplicates are summed and
    /// entries below the drop tolerance removed.
    pub fn from_triplets(layout: HilbertLayout, mut triplets: Vec<(usize, usize, C64)>) -> Self {
        let dim = layout.dim();
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; dim + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals = Vec::with_capacity(triplets.len());
        let mut rows = Vec::with_capacity(triplets.len());
        let mut iter = triplets.into_iter().peekable();
        while let Some((r, c, mut v)) = iter.next() {
            assert!(r < dim && c < dim, "triplet ({r}, {c}) outside dimension {dim}");
            while let Some(&(r2, c2, v2)) = iter.peek() {
                if r2 == r && c2 == c {
                    v += v2;
                    iter.next();
                } else {
                    break;
                }
            }
            if v.norm() >= DROP_TOLERANCE {
                rows.push(r);
                cols.push(c);
                vals.push(v);
            }
        }
        for &r in &rows {
            row_ptr[r + 1] += 1;
        }
        for i in 0..dim {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self { layout, row_ptr, cols, vals, hermitian: OnceLock::new() }
    }

    pub fn zero(layout: &HilbertLayout) -> Self {
        Self::from_triplets(layout.clone(), Vec::new())
    }

    pub fn identity(layout: &HilbertLayout) -> Self {
        Self::from_triplets(layout.clone(), (0..layout.dim()).map(|i| (i, i, C64::new(1.0, 0.0))).collect())
    }

    pub fn from_dense(layout: &HilbertLayout, m: &DenseMatrix) -> Result<Self, HilbertError> {
        let dim = layout.dim();
        if m.nrows() != dim || m.ncols() != dim {
            return Err(HilbertError::DimensionMismatch { expected: dim, found: m.nrows() });
        }
        let mut t = Vec::new();
        for r in 0..dim {
            for c in 0..dim {
                t.push((r, c, m[(r, c)]));
            }
        }
        Ok(Self::from_triplets(layout.clone(), t))
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let dim = self.dim();
        let mut m = DenseMatrix::zeros(dim, dim);
        for (r, c, v) in self.triplets() {
            m[(r, c)] = v;
        }
        m
    }

    pub fn layout(&self) -> &HilbertLayout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn is_zero(&self) -> bool {
        self.vals.is_empty()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.cols
    }

    pub fn values(&self) -> &[C64] {
        &self.vals
    }

    /// Column indices and values of one row.
    #[inline]
    pub fn row(&self, r: usize) -> (&[usize], &[C64]) {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        (&self.cols[a..b], &self.vals[a..b])
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        (0..self.dim()).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }

    pub fn get(&self, r: usize, c: usize) -> C64 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&c) {
            Ok(k) => vals[k],
            Err(_) => ZERO,
        }
    }

    fn check_layout(&self, other: &Self) -> Result<(), HilbertError> {
        if self.layout != other.layout {
            return Err(HilbertError::LayoutMismatch);
        }
        Ok(())
    }

    fn combine(&self, other: &Self, alpha: C64, beta: C64) -> Result<Self, HilbertError> {
        self.check_layout(other)?;
        let t = self
            .triplets()
            .map(|(r, c, v)| (r, c, alpha * v))
            .chain(other.triplets().map(|(r, c, v)| (r, c, beta * v)))
            .collect();
        Ok(Self::from_triplets(self.layout.clone(), t))
    }

    pub fn add(&self, other: &Self) -> Result<Self, HilbertError> {
        self.combine(other, C64::new(1.0, 0.0), C64::new(1.0, 0.0))
    }

    pub fn sub(&self, other: &Self) -> Result<Self, HilbertError> {
        self.combine(other, C64::new(1.0, 0.0), C64::new(-1.0, 0.0))
    }

    pub fn scale(&self, s: C64) -> Self {
        Self::from_triplets(self.layout.clone(), self.triplets().map(|(r, c, v)| (r, c, s * v)).collect())
    }

    pub fn scale_real(&self, s: f64) -> Self {
        self.scale(C64::new(s, 0.0))
    }

    /// Sparse product `self · other`.
    pub fn mul(&self, other: &Self) -> Result<Self, HilbertError> {
        self.check_layout(other)?;
        let dim = self.dim();
        let mut acc = vec![ZERO; dim];
        let mut marked = vec![false; dim];
        let mut touched = Vec::new();
        let mut t = Vec::new();
        for r in 0..dim {
            let (cols, vals) = self.row(r);
            for (&k, &a) in cols.iter().zip(vals) {
                let (cols2, vals2) = other.row(k);
                for (&c, &b) in cols2.iter().zip(vals2) {
                    if !marked[c] {
                        marked[c] = true;
                        touched.push(c);
                    }
                    acc[c] += a * b;
                }
            }
            for &c in &touched {
                t.push((r, c, acc[c]));
                acc[c] = ZERO;
                marked[c] = false;
            }
            touched.clear();
        }
        Ok(Self::from_triplets(self.layout.clone(), t))
    }

    pub fn adjoint(&self) -> Self {
        Self::from_triplets(self.layout.clone(), self.triplets().map(|(r, c, v)| (c, r, v.conj())).collect())
    }

    /// [A, B] = AB − BA.
    pub fn commutator(&self, other: &Self) -> Result<Self, HilbertError> {
        self.mul(other)?.sub(&other.mul(self)?)
    }

    /// Largest |A − A†| entry.
    pub fn max_hermitian_deviation(&self) -> f64 {
        self.triplets().map(|(r, c, v)| (v - self.get(c, r).conj()).norm()).fold(0.0, f64::max)
    }

    /// Hermiticity to 1e-12, cached after the first check.
    pub fn is_hermitian(&self) -> bool {
        *self.hermitian.get_or_init(|| self.max_hermitian_deviation() < 1e-12)
    }

    /// y = A x.
    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        let mut y = vec![ZERO; self.dim()];
        self.apply_add(C64::new(1.0, 0.0), x, &mut y);
        y
    }

    /// y += alpha · A x.
    pub fn apply_add(&self, alpha: C64, x: &[C64], y: &mut [C64]) {
        debug_assert_eq!(x.len(), self.dim());
        for (r, yr) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(r);
            let mut s = ZERO;
            for (&c, &v) in cols.iter().zip(vals) {
                s += v * x[c];
            }
            *yr += alpha * s;
        }
    }

    /// ⟨x|A|x⟩.
    pub fn expectation(&self, x: &[C64]) -> C64 {
        let mut s = ZERO;
        for (r, xr) in x.iter().enumerate() {
            let (cols, vals) = self.row(r);
            let mut row = ZERO;
            for (&c, &v) in cols.iter().zip(vals) {
                row += v * x[c];
            }
            s += xr.conj() * row;
        }
        s
    }

    /// tr(A ρ) for a row-major dense ρ.
    pub fn expectation_density(&self, rho: &[C64]) -> C64 {
        let dim = self.dim();
        let mut s = ZERO;
        for r in 0..dim {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                s += v * rho[c * dim + r];
            }
        }
        s
    }

    /// Y = A · X for a row-major dense `dim × dim` matrix X, overwriting Y.
    pub fn mul_dense(&self, x: &[C64], y: &mut [C64]) {
        let dim = self.dim();
        for (r, yrow) in y.chunks_exact_mut(dim).enumerate() {
            yrow.fill(ZERO);
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                let xrow = &x[c * dim..(c + 1) * dim];
                for (yv, xv) in yrow.iter_mut().zip(xrow) {
                    *yv += v * xv;
                }
            }
        }
    }

    /// out += w · A X A† for a row-major dense X. Costs nnz² rather than
    /// dim², which suits the one-entry-per-row jump operators.
    pub fn sandwich_add(&self, w: f64, x: &[C64], out: &mut [C64]) {
        let dim = self.dim();
        let conj: Vec<(usize, usize, C64)> = self.triplets().map(|(r, c, v)| (r, c, v.conj())).collect();
        for i in 0..dim {
            let (ci, vi) = self.row(i);
            for (&p, &li) in ci.iter().zip(vi) {
                let xrow = &x[p * dim..(p + 1) * dim];
                let orow = &mut out[i * dim..(i + 1) * dim];
                let li = li * w;
                for &(k, q, lk) in &conj {
                    orow[k] += li * lk * xrow[q];
                }
            }
        }
    }
}

impl PartialEq for SparseOperator {
    fn eq(&self, other: &Self) -> bool {
        self.layout == other.layout && self.row_ptr == other.row_ptr && self.cols == other.cols && self.vals == other.vals
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{annihilation, embed, HilbertLayout, Subsystem};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sparse(layout: &HilbertLayout, density: f64, rng: &mut ChaCha8Rng) -> SparseOperator {
        let d = layout.dim();
        let mut t = Vec::new();
        for r in 0..d {
            for c in 0..d {
                if rng.gen::<f64>() < density {
                    t.push((r, c, C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))));
                }
            }
        }
        SparseOperator::from_triplets(layout.clone(), t)
    }

    fn fifty() -> HilbertLayout {
        HilbertLayout::modes(&[50]).unwrap()
    }

    #[test]
    fn triplets_are_merged_and_small_entries_dropped() {
        let l = HilbertLayout::modes(&[3]).unwrap();
        let op = SparseOperator::from_triplets(
            l,
            vec![
                (0, 1, C64::new(1.0, 0.0)),
                (0, 1, C64::new(-1.0, 1e-15)),
                (2, 2, C64::new(2.0, 0.0)),
                (1, 0, C64::new(1e-16, 0.0)),
            ],
        );
        assert_eq!(op.nnz(), 1);
        assert_eq!(op.get(2, 2), C64::new(2.0, 0.0));
    }

    #[test]
    fn commutator_with_self_vanishes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_sparse(&fifty(), 0.1, &mut rng);
        assert!(a.commutator(&a).unwrap().triplets().all(|(_, _, v)| v.norm() < 1e-12));
    }

    #[test]
    fn adjoint_is_involution() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_sparse(&fifty(), 0.1, &mut rng);
        assert_eq!(a.adjoint().adjoint(), a);
    }

    #[test]
    fn product_adjoint_reverses_order_against_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let a = random_sparse(&fifty(), 0.08, &mut rng);
            let b = random_sparse(&fifty(), 0.08, &mut rng);
            let lhs = a.mul(&b).unwrap().adjoint().to_dense();
            let rhs = b.to_dense().adjoint() * a.to_dense().adjoint();
            assert!((lhs - rhs).norm() < 1e-10);
        }
    }

    #[test]
    fn layout_mismatch_is_an_error() {
        let a = SparseOperator::identity(&HilbertLayout::modes(&[3]).unwrap());
        let b = SparseOperator::identity(&HilbertLayout::modes(&[4]).unwrap());
        assert_eq!(a.add(&b).unwrap_err(), HilbertError::LayoutMismatch);
        assert!(a.mul(&b).is_err());
    }

    #[test]
    fn hermitian_flag() {
        let l = HilbertLayout::modes(&[4, 3]).unwrap();
        let a = annihilation(1, &l).unwrap();
        assert!(!a.is_hermitian());
        let x = a.add(&a.adjoint()).unwrap();
        assert!(x.is_hermitian());
        assert!(x.max_hermitian_deviation() < 1e-15);
    }

    #[test]
    fn dense_kernels_match_dense_algebra() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let l = HilbertLayout::modes(&[4, 3]).unwrap();
        let a = random_sparse(&l, 0.2, &mut rng);
        let x = random_sparse(&l, 0.5, &mut rng).to_dense();
        let d = l.dim();
        let row_major: Vec<C64> = (0..d * d).map(|k| x[(k / d, k % d)]).collect();

        let mut y = vec![ZERO; d * d];
        a.mul_dense(&row_major, &mut y);
        let ad = a.to_dense();
        let expected = &ad * &x;
        for k in 0..d * d {
            assert!((y[k] - expected[(k / d, k % d)]).norm() < 1e-12);
        }

        let mut out = vec![ZERO; d * d];
        a.sandwich_add(0.7, &row_major, &mut out);
        let expected = (&ad * &x * ad.adjoint()) * C64::new(0.7, 0.0);
        for k in 0..d * d {
            assert!((out[k] - expected[(k / d, k % d)]).norm() < 1e-12);
        }

        let v: Vec<C64> = (0..d).map(|i| C64::new(i as f64, 1.0)).collect();
        let av = a.apply(&v);
        let ev = &ad * nalgebra::DVector::from_vec(v.clone());
        for i in 0..d {
            assert!((av[i] - ev[i]).norm() < 1e-12);
        }
        let tr = a.expectation_density(&row_major);
        assert!((tr - (&ad * &x).trace()).norm() < 1e-12);
    }

    proptest! {
        #[test]
        fn embedded_operators_on_distinct_subsystems_commute(
            re in proptest::collection::vec(-1.0f64..1.0, 9),
            im in proptest::collection::vec(-1.0f64..1.0, 4),
        ) {
            let l = HilbertLayout::from_subsystems(vec![
                Subsystem::Qutrit,
                Subsystem::Mode { cutoff: 2 },
            ]).unwrap();
            let q = DenseMatrix::from_fn(3, 3, |r, c| C64::new(re[r * 3 + c], 0.0));
            let m = DenseMatrix::from_fn(2, 2, |r, c| C64::new(0.0, im[r * 2 + c]));
            let a = embed(&q, 0, &l).unwrap();
            let b = embed(&m, 1, &l).unwrap();
            prop_assert!(a.commutator(&b).unwrap().is_zero());
        }

        #[test]
        fn embedded_operator_is_identity_elsewhere(row in 0usize..36, col in 0usize..36) {
            let l = HilbertLayout::from_subsystems(vec![
                Subsystem::Qutrit,
                Subsystem::Mode { cutoff: 3 },
                Subsystem::Mode { cutoff: 4 },
            ]).unwrap();
            let a = annihilation(1, &l).unwrap();
            let (dr, dc) = (l.digits(row), l.digits(col));
            let others_equal = dr[0] == dc[0] && dr[2] == dc[2];
            let local = crate::hilbert::local_annihilation(3)[(dr[1], dc[1])];
            let expected = if others_equal { local } else { ZERO };
            prop_assert!((a.get(row, col) - expected).norm() < 1e-15);
        }
    }
}
