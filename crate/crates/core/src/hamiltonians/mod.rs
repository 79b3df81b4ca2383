//! System parameters and the Hamiltonians of the transfer protocol.
//!
//! All builders work in the interaction picture with respect to the bare
//! qutrit and resonator energies, so every time dependence is a pure phase
//! e^{iωt} on some operator.

mod builders;
mod conditions;
mod params;

pub use builders::{
    build_crosstalk, build_dressed_rwa, build_effective_h, build_full_h, build_h0, build_he, build_ideal_h, build_leak,
    build_open_system_h, build_pair_he, leakage_estimate, HamiltonianChoice,
};
pub use conditions::{validate_conditions, Condition, ConditionCheck, ConditionReport, CONDITION_TOLERANCE};
pub use params::{
    matched_mode_frequencies, DerivedCouplings, PulseLeakage, QutritDephasing, QutritFrequencies, QutritRelaxation,
    SystemParams, DEFAULT_DRIVE_MHZ,
};

use std::collections::BTreeMap;

use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::hilbert::{HilbertError, HilbertLayout, SparseOperator};

const ZERO: C64 = C64::new(0.0, 0.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HamiltonianError {
    #[error(transparent)]
    Hilbert(#[from] HilbertError),
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("matching conditions violated: {0}")]
    Conditions(String),
}

/// Scalar prefactor of a Hamiltonian term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Coefficient {
    Constant(C64),
    /// amplitude · e^{i frequency t}
    Oscillating { amplitude: C64, frequency: f64 },
}

impl Coefficient {
    pub fn at(&self, t: f64) -> C64 {
        match *self {
            Coefficient::Constant(c) => c,
            Coefficient::Oscillating { amplitude, frequency } => amplitude * C64::from_polar(1.0, frequency * t),
        }
    }

    fn frequency(&self) -> f64 {
        match *self {
            Coefficient::Constant(_) => 0.0,
            Coefficient::Oscillating { frequency, .. } => frequency,
        }
    }

    fn amplitude(&self) -> C64 {
        match *self {
            Coefficient::Constant(c) => c,
            Coefficient::Oscillating { amplitude, .. } => amplitude,
        }
    }
}

/// c(t) · op, plus its Hermitian conjugate when `plus_hc` is set.
#[derive(Debug, Clone)]
pub struct HamiltonianTerm {
    pub op: SparseOperator,
    pub coefficient: Coefficient,
    pub plus_hc: bool,
}

/// A sum of operator terms with phase-only time dependence.
#[derive(Debug, Clone)]
pub struct TimeDependentH {
    layout: HilbertLayout,
    terms: Vec<HamiltonianTerm>,
}

impl TimeDependentH {
    pub fn new(layout: &HilbertLayout) -> Self {
        Self { layout: layout.clone(), terms: Vec::new() }
    }

    /// Wrap a static Hermitian operator.
    pub fn from_static(op: SparseOperator) -> Self {
        let layout = op.layout().clone();
        Self {
            layout,
            terms: vec![HamiltonianTerm { op, coefficient: Coefficient::Constant(C64::new(1.0, 0.0)), plus_hc: false }],
        }
    }

    pub fn push(&mut self, op: SparseOperator, coefficient: Coefficient, plus_hc: bool) -> Result<(), HilbertError> {
        if op.layout() != &self.layout {
            return Err(HilbertError::LayoutMismatch);
        }
        if !op.is_zero() {
            self.terms.push(HamiltonianTerm { op, coefficient, plus_hc });
        }
        Ok(())
    }

    /// Append all terms of `other`.
    pub fn extend(&mut self, other: TimeDependentH) -> Result<(), HilbertError> {
        if other.layout != self.layout {
            return Err(HilbertError::LayoutMismatch);
        }
        self.terms.extend(other.terms);
        Ok(())
    }

    pub fn layout(&self) -> &HilbertLayout {
        &self.layout
    }

    pub fn terms(&self) -> &[HamiltonianTerm] {
        &self.terms
    }

    pub fn is_static(&self) -> bool {
        self.terms.iter().all(|t| t.coefficient.frequency() == 0.0)
    }

    /// Largest |ω| among the oscillating terms.
    pub fn max_frequency(&self) -> f64 {
        self.terms.iter().map(|t| t.coefficient.frequency().abs()).fold(0.0, f64::max)
    }

    /// H(t) as a sparse operator.
    pub fn eval(&self, t: f64) -> SparseOperator {
        let mut trip = Vec::new();
        for term in &self.terms {
            let c = term.coefficient.at(t);
            for (r, col, v) in term.op.triplets() {
                trip.push((r, col, c * v));
                if term.plus_hc {
                    trip.push((col, r, (c * v).conj()));
                }
            }
        }
        SparseOperator::from_triplets(self.layout.clone(), trip)
    }

    /// Pre-assemble for repeated evaluation. `extra_static` is added to the
    /// constant part unchanged (it need not be Hermitian).
    pub fn compile(&self, extra_static: Option<&SparseOperator>) -> Result<CompiledHamiltonian, HilbertError> {
        let dim = self.layout.dim();
        let mut fixed: Vec<(usize, usize, C64)> = Vec::new();
        if let Some(x) = extra_static {
            if x.layout() != &self.layout {
                return Err(HilbertError::LayoutMismatch);
            }
            fixed.extend(x.triplets());
        }
        // Terms sharing a frequency are summed before compiling.
        let mut by_freq: BTreeMap<u64, (f64, Vec<(usize, usize, C64)>)> = BTreeMap::new();
        for term in &self.terms {
            let w = term.coefficient.frequency();
            let a = term.coefficient.amplitude();
            if w == 0.0 {
                for (r, c, v) in term.op.triplets() {
                    fixed.push((r, c, a * v));
                    if term.plus_hc {
                        fixed.push((c, r, (a * v).conj()));
                    }
                }
                continue;
            }
            let entry = by_freq.entry(w.to_bits()).or_insert((w, Vec::new()));
            entry.1.extend(term.op.triplets().map(|(r, c, v)| (r, c, a * v)));
            if term.plus_hc {
                // conj(a e^{iωt}) op† = conj(a) e^{−iωt} op†
                let neg = by_freq.entry((-w).to_bits()).or_insert((-w, Vec::new()));
                neg.1.extend(term.op.triplets().map(|(r, c, v)| (c, r, (a * v).conj())));
            }
        }
        let fixed = SparseOperator::from_triplets(self.layout.clone(), fixed);
        let parts: Vec<(f64, SparseOperator)> = by_freq
            .into_values()
            .map(|(w, t)| (w, SparseOperator::from_triplets(self.layout.clone(), t)))
            .filter(|(_, op)| !op.is_zero())
            .collect();

        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); dim];
        for op in std::iter::once(&fixed).chain(parts.iter().map(|(_, o)| o)) {
            for (r, c, _) in op.triplets() {
                rows[r].push(c);
            }
        }
        let mut row_ptr = Vec::with_capacity(dim + 1);
        let mut cols = Vec::new();
        row_ptr.push(0);
        for row in &mut rows {
            row.sort_unstable();
            row.dedup();
            cols.extend_from_slice(row);
            row_ptr.push(cols.len());
        }
        let locate = |r: usize, c: usize| -> usize {
            let lo = row_ptr[r];
            lo + cols[lo..row_ptr[r + 1]].binary_search(&c).expect("entry is in the union pattern")
        };
        let mut static_vals = vec![ZERO; cols.len()];
        for (r, c, v) in fixed.triplets() {
            static_vals[locate(r, c)] += v;
        }
        let oscillating = parts
            .iter()
            .map(|(w, op)| OscillatingPart {
                frequency: *w,
                positions: op.triplets().map(|(r, c, _)| locate(r, c)).collect(),
                values: op.values().to_vec(),
            })
            .collect();
        Ok(CompiledHamiltonian { dim, row_ptr, cols, static_vals, oscillating })
    }
}

#[derive(Debug, Clone)]
struct OscillatingPart {
    frequency: f64,
    positions: Vec<usize>,
    values: Vec<C64>,
}

/// CSR matrix on a fixed sparsity pattern whose values are refilled for each
/// time `t` by [`CompiledHamiltonian::assemble`].
#[derive(Debug, Clone)]
pub struct CompiledHamiltonian {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    static_vals: Vec<C64>,
    oscillating: Vec<OscillatingPart>,
}

impl CompiledHamiltonian {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn is_static(&self) -> bool {
        self.oscillating.is_empty()
    }

    /// Fresh value buffer holding the constant part.
    pub fn values_buffer(&self) -> Vec<C64> {
        self.static_vals.clone()
    }

    /// Fill `vals` with the matrix entries at time `t`.
    pub fn assemble(&self, t: f64, vals: &mut [C64]) {
        vals.copy_from_slice(&self.static_vals);
        for part in &self.oscillating {
            let ph = C64::from_polar(1.0, part.frequency * t);
            for (&p, &v) in part.positions.iter().zip(&part.values) {
                vals[p] += ph * v;
            }
        }
    }

    /// y = A x with entries `vals`.
    pub fn apply(&self, vals: &[C64], x: &[C64], y: &mut [C64]) {
        for (r, yr) in y.iter_mut().enumerate() {
            let (lo, hi) = (self.row_ptr[r], self.row_ptr[r + 1]);
            let mut s = ZERO;
            for k in lo..hi {
                s += vals[k] * x[self.cols[k]];
            }
            *yr = s;
        }
    }

    /// Y = A X for row-major dense X.
    pub fn mul_dense(&self, vals: &[C64], x: &[C64], y: &mut [C64]) {
        let dim = self.dim;
        for (r, yrow) in y.chunks_exact_mut(dim).enumerate() {
            yrow.fill(ZERO);
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let v = vals[k];
                let xrow = &x[self.cols[k] * dim..(self.cols[k] + 1) * dim];
                for (yv, xv) in yrow.iter_mut().zip(xrow) {
                    *yv += v * xv;
                }
            }
        }
    }

    /// Bound on the spectral radius valid at every t: the largest row sum of
    /// |static| + Σ|oscillating| over the shared pattern.
    pub fn norm_bound(&self) -> f64 {
        let mut abs: Vec<f64> = self.static_vals.iter().map(|v| v.norm()).collect();
        for part in &self.oscillating {
            for (&p, v) in part.positions.iter().zip(&part.values) {
                abs[p] += v.norm();
            }
        }
        (0..self.dim).map(|r| abs[self.row_ptr[r]..self.row_ptr[r + 1]].iter().sum::<f64>()).fold(0.0, f64::max)
    }

    /// Power-iteration estimate of the spectral radius at time `t`.
    pub fn spectral_radius(&self, t: f64, iterations: usize) -> f64 {
        let mut vals = self.values_buffer();
        self.assemble(t, &mut vals);
        let mut x: Vec<C64> = (0..self.dim).map(|i| C64::new(1.0 / (1.0 + (i % 7) as f64), (i % 3) as f64)).collect();
        let n0 = x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        x.iter_mut().for_each(|v| *v /= n0);
        let mut y = vec![ZERO; self.dim];
        let mut est = 0.0;
        for _ in 0..iterations {
            self.apply(&vals, &x, &mut y);
            est = y.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
            if est == 0.0 {
                return 0.0;
            }
            for (a, b) in x.iter_mut().zip(&y) {
                *a = b / est;
            }
        }
        est
    }

    /// Values as a standalone operator on `layout`.
    pub fn to_operator(&self, layout: &HilbertLayout, vals: &[C64]) -> SparseOperator {
        let mut t = Vec::with_capacity(vals.len());
        for r in 0..self.dim {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                t.push((r, self.cols[k], vals[k]));
            }
        }
        SparseOperator::from_triplets(layout.clone(), t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{annihilation, qutrit_op, Level};

    fn sample() -> (HilbertLayout, TimeDependentH) {
        let layout = HilbertLayout::uniform(1, 3).unwrap();
        let mut h = TimeDependentH::new(&layout);
        let a1 = annihilation(1, &layout).unwrap();
        let sfg = qutrit_op(Level::F, Level::G, &layout).unwrap();
        h.push(a1.mul(&sfg).unwrap(), Coefficient::Oscillating { amplitude: C64::new(0.3, 0.1), frequency: 2.0 }, true)
            .unwrap();
        h.push(
            qutrit_op(Level::E, Level::G, &layout).unwrap(),
            Coefficient::Constant(C64::new(0.7, 0.0)),
            true,
        )
        .unwrap();
        (layout, h)
    }

    #[test]
    fn compiled_matches_direct_evaluation() {
        let (layout, h) = sample();
        let extra = annihilation(2, &layout).unwrap().scale(C64::new(0.0, -0.25));
        let compiled = h.compile(Some(&extra)).unwrap();
        let mut vals = compiled.values_buffer();
        for &t in &[0.0, 0.37, 1.9, -4.2] {
            compiled.assemble(t, &mut vals);
            let got = compiled.to_operator(&layout, &vals);
            let want = h.eval(t).add(&extra).unwrap();
            let diff = got.sub(&want).unwrap();
            assert!(diff.values().iter().all(|v| v.norm() < 1e-14), "t = {t}");
        }
    }

    #[test]
    fn hermitian_at_every_time() {
        let (_, h) = sample();
        for k in 0..20 {
            assert!(h.eval(0.31 * k as f64).max_hermitian_deviation() < 1e-14);
        }
        assert!(!h.is_static());
        assert_eq!(h.max_frequency(), 2.0);
    }

    #[test]
    fn compiled_products_match_sparse_kernels() {
        let (layout, h) = sample();
        let compiled = h.compile(None).unwrap();
        let mut vals = compiled.values_buffer();
        compiled.assemble(0.8, &mut vals);
        let op = h.eval(0.8);
        let d = layout.dim();
        let x: Vec<C64> = (0..d).map(|i| C64::new((i as f64).sin(), (3.0 * i as f64).cos())).collect();
        let mut y = vec![ZERO; d];
        compiled.apply(&vals, &x, &mut y);
        let want = op.apply(&x);
        assert!(y.iter().zip(&want).all(|(a, b)| (a - b).norm() < 1e-13));

        let xm: Vec<C64> = (0..d * d).map(|i| C64::new((0.1 * i as f64).cos(), 0.0)).collect();
        let mut ym = vec![ZERO; d * d];
        let mut wm = vec![ZERO; d * d];
        compiled.mul_dense(&vals, &xm, &mut ym);
        op.mul_dense(&xm, &mut wm);
        assert!(ym.iter().zip(&wm).all(|(a, b)| (a - b).norm() < 1e-12));
    }

    #[test]
    fn layout_mismatch_rejected() {
        let (_, mut h) = sample();
        let other = HilbertLayout::uniform(1, 2).unwrap();
        let op = annihilation(1, &other).unwrap();
        assert!(h.push(op, Coefficient::Constant(C64::new(1.0, 0.0)), false).is_err());
    }
}
