//! Observables, fidelity and verification helpers.

use nalgebra::SymmetricEigen;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hilbert::{
    creation, DenseMatrix, HilbertError, HilbertLayout, QuantumState, SparseOperator, StateData,
};
use crate::states::{cat_state, ideal_target, CatParams, Parity, StateError, WStateSpec};

const ZERO: C64 = C64::new(0.0, 0.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error(transparent)]
    Hilbert(#[from] HilbertError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error("partial trace needs at least one kept subsystem")]
    EmptyKeep,
    #[error("transfer failed: best overlap with the target family is {overlap:.4}")]
    TransferFailure { overlap: f64 },
    #[error("{0}")]
    Invalid(String),
}

/// Integrator health recorded alongside the observables.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub dt: f64,
    pub n_steps: usize,
    /// max |‖ψ‖ − 1| (closed runs) or max |tr ρ − 1| (Lindblad runs).
    pub max_norm_drift: f64,
    pub max_hermitian_deviation: f64,
    /// Smallest diagonal entry of ρ seen at a sample time.
    pub min_diagonal: Option<f64>,
    /// Smallest eigenvalue of the final ρ, when small enough to diagonalize.
    pub min_eigenvalue: Option<f64>,
    pub positivity_warning: bool,
    pub trajectories: Option<usize>,
    pub total_jumps: Option<u64>,
    pub warnings: Vec<String>,
}

/// Time series sampled during one evolution.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub t_swap: f64,
    pub times: Vec<f64>,
    pub t_over_t: Vec<f64>,
    /// √⟨ψ_id|ρ_cav|ψ_id⟩; empty when no target was probed.
    pub fidelity: Vec<f64>,
    pub fidelity_squared: Vec<f64>,
    pub trace: Vec<f64>,
    /// ⟨n_{2j−1} + n_{2j}⟩ per pair, each a time series.
    pub pair_photons: Vec<Vec<f64>>,
    /// (⟨σ_gg⟩, ⟨σ_ee⟩, ⟨σ_ff⟩) per sample; empty without a qutrit.
    pub qutrit_pops: Vec<[f64; 3]>,
    pub custom: Vec<(String, Vec<C64>)>,
    pub diagnostics: Diagnostics,
}

impl SimulationResult {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Largest fidelity and the t/T at which it occurs.
    pub fn peak(&self) -> Option<(f64, f64)> {
        self.fidelity
            .iter()
            .zip(&self.t_over_t)
            .fold(None, |best: Option<(f64, f64)>, (&f, &x)| match best {
                Some((_, bf)) if bf >= f => best,
                _ => Some((x, f)),
            })
    }

    /// Fidelity at the sample closest to `t_over_t`.
    pub fn fidelity_near(&self, t_over_t: f64) -> Option<f64> {
        let i = self
            .t_over_t
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t_over_t).abs().partial_cmp(&(b.1 - t_over_t).abs()).unwrap())?
            .0;
        self.fidelity.get(i).copied()
    }

    pub fn custom_series(&self, label: &str) -> Option<&[C64]> {
        self.custom.iter().find(|(l, _)| l == label).map(|(_, v)| v.as_slice())
    }

    fn push(&mut self, t: f64, s: &Sample) {
        self.times.push(t);
        self.t_over_t.push(t / self.t_swap);
        if let Some(f2) = s.fidelity_squared {
            self.fidelity_squared.push(f2);
            self.fidelity.push(f2.max(0.0).sqrt());
        }
        self.trace.push(s.trace);
        for (series, &n) in self.pair_photons.iter_mut().zip(&s.pair_photons) {
            series.push(n);
        }
        if let Some(p) = s.pops {
            self.qutrit_pops.push(p);
        }
        for ((_, series), &v) in self.custom.iter_mut().zip(&s.custom) {
            series.push(v);
        }
    }
}

/// Linear observables of one state. Because everything here is linear in ρ,
/// samples from pure-state trajectories can be averaged directly.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub fidelity_squared: Option<f64>,
    pub trace: f64,
    pub pair_photons: Vec<f64>,
    pub pops: Option<[f64; 3]>,
    pub custom: Vec<C64>,
}

impl Sample {
    pub fn add_scaled(&mut self, other: &Sample, w: f64) {
        if let (Some(a), Some(b)) = (self.fidelity_squared.as_mut(), other.fidelity_squared) {
            *a += w * b;
        }
        self.trace += w * other.trace;
        for (a, b) in self.pair_photons.iter_mut().zip(&other.pair_photons) {
            *a += w * b;
        }
        if let (Some(a), Some(b)) = (self.pops.as_mut(), other.pops) {
            for k in 0..3 {
                a[k] += w * b[k];
            }
        }
        for (a, b) in self.custom.iter_mut().zip(&other.custom) {
            *a += w * b;
        }
    }

    pub fn scaled(&self, w: f64) -> Sample {
        let mut s = self.zeroed();
        s.add_scaled(self, w);
        s
    }

    fn zeroed(&self) -> Sample {
        Sample {
            fidelity_squared: self.fidelity_squared.map(|_| 0.0),
            trace: 0.0,
            pair_photons: vec![0.0; self.pair_photons.len()],
            pops: self.pops.map(|_| [0.0; 3]),
            custom: vec![ZERO; self.custom.len()],
        }
    }
}

/// Evaluates the observables recorded in a [`SimulationResult`].
#[derive(Debug, Clone)]
pub struct Probe {
    layout: HilbertLayout,
    t_swap: f64,
    target: Option<Vec<C64>>,
    /// Per basis index: photons in each complete pair.
    pair_counts: Vec<Vec<u32>>,
    qutrit_level: Option<Vec<u8>>,
    custom: Vec<(String, SparseOperator)>,
}

impl Probe {
    /// `t_swap` only sets the time unit of `t_over_t`.
    pub fn new(layout: &HilbertLayout, t_swap: f64) -> Self {
        let n_pairs = layout.n_modes() / 2;
        let first_mode = usize::from(layout.has_qutrit());
        let pair_counts = (0..layout.dim())
            .map(|i| {
                let d = layout.digits(i);
                (0..n_pairs).map(|j| (d[first_mode + 2 * j] + d[first_mode + 2 * j + 1]) as u32).collect()
            })
            .collect();
        let qutrit_level =
            layout.has_qutrit().then(|| (0..layout.dim()).map(|i| layout.digit(i, 0) as u8).collect());
        Self { layout: layout.clone(), t_swap, target: None, pair_counts, qutrit_level, custom: Vec::new() }
    }

    /// Record the fidelity against `target`, a vector on the cavity modes.
    pub fn with_target(mut self, target: &QuantumState) -> Result<Self, AnalysisError> {
        let cav = if self.layout.has_qutrit() { self.layout.cavity_layout()? } else { self.layout.clone() };
        if target.layout() != &cav {
            return Err(HilbertError::LayoutMismatch.into());
        }
        self.target = Some(target.amplitudes()?.to_vec());
        Ok(self)
    }

    /// Record ⟨op⟩ under `label`.
    pub fn with_observable(mut self, label: &str, op: SparseOperator) -> Result<Self, AnalysisError> {
        if op.layout() != &self.layout {
            return Err(HilbertError::LayoutMismatch.into());
        }
        self.custom.push((label.to_string(), op));
        Ok(self)
    }

    pub fn layout(&self) -> &HilbertLayout {
        &self.layout
    }

    pub fn empty_result(&self) -> SimulationResult {
        SimulationResult {
            t_swap: self.t_swap,
            pair_photons: vec![Vec::new(); self.layout.n_modes() / 2],
            custom: self.custom.iter().map(|(l, _)| (l.clone(), Vec::new())).collect(),
            ..Default::default()
        }
    }

    pub fn record(&self, result: &mut SimulationResult, t: f64, sample: &Sample) {
        result.push(t, sample);
    }

    fn blocks(&self) -> (usize, usize) {
        let dc = self.target.as_ref().map_or(1, |t| t.len());
        (self.layout.dim() / dc, dc)
    }

    /// Observables of an (unnormalized) state vector.
    pub fn sample_vector(&self, psi: &[C64]) -> Sample {
        let mut trace = 0.0;
        let mut pairs = vec![0.0; self.layout.n_modes() / 2];
        let mut pops = [0.0; 3];
        for (i, a) in psi.iter().enumerate() {
            let p = a.norm_sqr();
            trace += p;
            for (acc, &n) in pairs.iter_mut().zip(&self.pair_counts[i]) {
                *acc += p * n as f64;
            }
            if let Some(q) = &self.qutrit_level {
                pops[q[i] as usize] += p;
            }
        }
        let fidelity_squared = self.target.as_ref().map(|t| {
            let (nq, dc) = self.blocks();
            (0..nq)
                .map(|q| {
                    let block = &psi[q * dc..(q + 1) * dc];
                    t.iter().zip(block).map(|(x, y)| x.conj() * y).sum::<C64>().norm_sqr()
                })
                .sum()
        });
        Sample {
            fidelity_squared,
            trace,
            pair_photons: pairs,
            pops: self.qutrit_level.as_ref().map(|_| pops),
            custom: self.custom.iter().map(|(_, op)| op.expectation(psi)).collect(),
        }
    }

    /// Observables of a row-major density matrix.
    pub fn sample_density(&self, rho: &[C64]) -> Sample {
        let dim = self.layout.dim();
        let mut trace = 0.0;
        let mut pairs = vec![0.0; self.layout.n_modes() / 2];
        let mut pops = [0.0; 3];
        for i in 0..dim {
            let p = rho[i * dim + i].re;
            trace += p;
            for (acc, &n) in pairs.iter_mut().zip(&self.pair_counts[i]) {
                *acc += p * n as f64;
            }
            if let Some(q) = &self.qutrit_level {
                pops[q[i] as usize] += p;
            }
        }
        let fidelity_squared = self.target.as_ref().map(|t| {
            let (nq, dc) = self.blocks();
            let mut s = ZERO;
            for q in 0..nq {
                for a in 0..dc {
                    if t[a] == ZERO {
                        continue;
                    }
                    let row = &rho[(q * dc + a) * dim + q * dc..(q * dc + a) * dim + (q + 1) * dc];
                    let inner: C64 = row.iter().zip(t).map(|(r, y)| r * y).sum();
                    s += t[a].conj() * inner;
                }
            }
            s.re
        });
        Sample {
            fidelity_squared,
            trace,
            pair_photons: pairs,
            pops: self.qutrit_level.as_ref().map(|_| pops),
            custom: self.custom.iter().map(|(_, op)| op.expectation_density(rho)).collect(),
        }
    }

    pub fn sample(&self, state: &QuantumState) -> Result<Sample, AnalysisError> {
        if state.layout() != &self.layout {
            return Err(HilbertError::LayoutMismatch.into());
        }
        Ok(match state.data() {
            StateData::Vector(v) => self.sample_vector(v),
            StateData::Density(r) => self.sample_density(r),
        })
    }
}

/// Reduced density matrix on the subsystems listed in `keep` (any order;
/// the result uses the canonical order).
pub fn partial_trace(state: &QuantumState, keep: &[usize]) -> Result<QuantumState, AnalysisError> {
    if keep.is_empty() {
        return Err(AnalysisError::EmptyKeep);
    }
    let layout = state.layout();
    let mut keep: Vec<usize> = keep.to_vec();
    keep.sort_unstable();
    keep.dedup();
    let reduced = layout.select(&keep)?;
    let traced: Vec<usize> = (0..layout.n_subsystems()).filter(|s| !keep.contains(s)).collect();
    let traced_dim: usize = traced.iter().map(|&s| layout.subsystems()[s].dim()).product();
    let dk = reduced.dim();

    // Basis index → (kept index, traced index).
    let mut groups: Vec<Vec<(usize, usize)>> = vec![Vec::new(); traced_dim];
    for i in 0..layout.dim() {
        let d = layout.digits(i);
        let k = keep.iter().fold(0, |acc, &s| acc * layout.subsystems()[s].dim() + d[s]);
        let t = traced.iter().fold(0, |acc, &s| acc * layout.subsystems()[s].dim() + d[s]);
        groups[t].push((i, k));
    }
    let mut out = vec![ZERO; dk * dk];
    match state.data() {
        StateData::Vector(psi) => {
            for g in &groups {
                for &(i, a) in g {
                    for &(j, b) in g {
                        out[a * dk + b] += psi[i] * psi[j].conj();
                    }
                }
            }
        }
        StateData::Density(rho) => {
            let dim = layout.dim();
            for g in &groups {
                for &(i, a) in g {
                    for &(j, b) in g {
                        out[a * dk + b] += rho[i * dim + j];
                    }
                }
            }
        }
    }
    Ok(QuantumState::density(reduced, out)?)
}

/// Cavity state with the qutrit traced out; a copy when there is no qutrit.
pub fn cavity_state(state: &QuantumState) -> Result<QuantumState, AnalysisError> {
    if !state.layout().has_qutrit() {
        return Ok(state.to_density());
    }
    let keep: Vec<usize> = (1..state.layout().n_subsystems()).collect();
    partial_trace(state, &keep)
}

/// F = √⟨ψ_id|ρ|ψ_id⟩.
pub fn fidelity(ideal: &QuantumState, rho: &QuantumState) -> Result<f64, AnalysisError> {
    if ideal.layout() != rho.layout() {
        return Err(HilbertError::LayoutMismatch.into());
    }
    let psi = ideal.amplitudes()?;
    let f2 = match rho.data() {
        StateData::Vector(v) => psi.iter().zip(v).map(|(a, b)| a.conj() * b).sum::<C64>().norm_sqr(),
        StateData::Density(r) => {
            let d = psi.len();
            let mut s = ZERO;
            for i in 0..d {
                let row: C64 = (0..d).map(|j| r[i * d + j] * psi[j]).sum();
                s += psi[i].conj() * row;
            }
            s.re
        }
    };
    Ok(f2.max(0.0).sqrt())
}

/// Outcome of [`heisenberg_swap_check`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwapCheckReport {
    pub lambda_t: f64,
    /// Expected coefficient of a†₁ in U a†₁ U†.
    pub expected_self: C64,
    /// Expected coefficient of a†₂.
    pub expected_partner: C64,
    /// Largest elementwise deviation on the guarded subspace.
    pub max_deviation: f64,
}

impl SwapCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_deviation < tolerance
    }
}

/// Evolve a†₁ in the Heisenberg picture, U a†₁ U† with U = e^{−i h t},
/// and compare with cos(λt) a†₁ + i·`partner_sign`·sin(λt) a†₂. `h` is a
/// two-mode exchange Hamiltonian on a layout of exactly two modes (no
/// qutrit). Only columns with at most d − 2 photons in total are compared,
/// so truncation at the cutoff cannot enter.
pub fn heisenberg_swap_check(
    h: &SparseOperator,
    lambda: f64,
    t: f64,
    partner_sign: f64,
) -> Result<SwapCheckReport, AnalysisError> {
    let layout = h.layout();
    if layout.has_qutrit() || layout.n_modes() != 2 {
        return Err(AnalysisError::Invalid("swap check needs a bare two-mode layout".into()));
    }
    let u = dense_propagator(&h.to_dense(), t);
    let a1 = creation(1, layout)?.to_dense();
    let a2 = creation(2, layout)?.to_dense();
    let evolved = &u * &a1 * u.adjoint();
    let c = C64::new((lambda * t).cos(), 0.0);
    let s = C64::new(0.0, partner_sign * (lambda * t).sin());
    let expected = &a1 * c + &a2 * s;
    let cutoff = layout.mode_cutoff(1)?.min(layout.mode_cutoff(2)?);
    let mut dev: f64 = 0.0;
    for col in 0..layout.dim() {
        let d = layout.digits(col);
        if d[0] + d[1] + 2 > cutoff {
            continue;
        }
        for row in 0..layout.dim() {
            dev = dev.max((evolved[(row, col)] - expected[(row, col)]).norm());
        }
    }
    Ok(SwapCheckReport { lambda_t: lambda * t, expected_self: c, expected_partner: s, max_deviation: dev })
}

/// e^{−iHt} for a Hermitian dense H.
pub fn dense_propagator(h: &DenseMatrix, t: f64) -> DenseMatrix {
    let eig = SymmetricEigen::new(h.clone());
    let phases = eig.eigenvalues.map(|e| C64::from_polar(1.0, -e * t));
    &eig.eigenvectors * DenseMatrix::from_diagonal(&phases) * eig.eigenvectors.adjoint()
}

/// Fitted rotation of each receiving cat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseFit {
    /// θ_{2j} for j = 1..N, in [0, 2π).
    pub thetas: Vec<f64>,
    /// ⟨ψ_target(θ)|ρ|ψ_target(θ)⟩ at the optimum.
    pub overlap: f64,
    pub residual_infidelity: f64,
}

const GOLDEN_TOLERANCE: f64 = 1e-8;

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > GOLDEN_TOLERANCE {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Fit the cat rotation angle of every receiving mode so that the rotated
/// transfer target best overlaps the cavity state. The qutrit, if present,
/// is traced out first. Overlaps below 0.5 are reported as a failed transfer.
///
/// Each angle is first fitted modulo π on its own mode, where the reduced
/// target is the mixture (1/N)|odd_θ⟩⟨odd_θ| + (1 − 1/N)|even_θ⟩⟨even_θ|.
/// The relative π shifts are then chosen on the full state. A common shift
/// of every angle by π only changes the global sign, so θ₁ ∈ [0, π).
pub fn extract_phases(state: &QuantumState, spec: &WStateSpec) -> Result<PhaseFit, AnalysisError> {
    let cav = cavity_state(state)?;
    let layout = cav.layout().clone();
    let n = spec.n_logical;
    if layout.n_modes() != 2 * n {
        return Err(AnalysisError::Invalid(format!("{n} logical qubits need {} modes", 2 * n)));
    }
    let pi = std::f64::consts::PI;
    let w_odd = 1.0 / n as f64;
    let mut thetas = Vec::with_capacity(n);
    for j in 1..=n {
        let reduced = partial_trace(&cav, &[2 * j - 1])?;
        let d = reduced.dim();
        let rho = reduced.rho()?;
        let even = cat_state(&CatParams::rotated(spec.alpha, Parity::Even, 0.0)?, d, spec.tail_tolerance)?;
        let odd = cat_state(&CatParams::rotated(spec.alpha, Parity::Odd, 0.0)?, d, spec.tail_tolerance)?;
        let (even, odd) = (even.amplitudes()?.to_vec(), odd.amplitudes()?.to_vec());
        let quad = |c: &[C64], theta: f64| -> f64 {
            let v: Vec<C64> = c.iter().enumerate().map(|(k, a)| a * C64::from_polar(1.0, k as f64 * theta)).collect();
            let mut s = ZERO;
            for a in 0..d {
                let row: C64 = (0..d).map(|b| rho[a * d + b] * v[b]).sum();
                s += v[a].conj() * row;
            }
            s.re
        };
        let objective = |th: f64| w_odd * quad(&odd, th) + (1.0 - w_odd) * quad(&even, th);
        let grid = 64;
        let step = pi / grid as f64;
        let k = (0..grid)
            .map(|k| (k, objective(k as f64 * step)))
            .fold((0, f64::MIN), |acc, (k, v)| if v > acc.1 { (k, v) } else { acc })
            .0;
        let x = golden_max(objective, (k as f64 - 1.0) * step, (k as f64 + 1.0) * step);
        thetas.push(x.rem_euclid(pi));
    }

    let overlap = |th: &[f64]| -> Result<f64, AnalysisError> {
        let t = ideal_target(spec, th, &layout)?;
        Ok(fidelity(&t, &cav)?.powi(2))
    };
    let mut best = (f64::MIN, thetas.clone());
    for mask in 0..(1usize << (n - 1)) {
        let th: Vec<f64> = thetas
            .iter()
            .enumerate()
            .map(|(j, &t)| if j > 0 && mask >> (j - 1) & 1 == 1 { t + pi } else { t })
            .collect();
        let o = overlap(&th)?;
        if o > best.0 {
            best = (o, th);
        }
    }
    let (overlap, thetas) = best;
    if overlap < 0.5 {
        return Err(AnalysisError::TransferFailure { overlap });
    }
    Ok(PhaseFit { thetas, overlap, residual_infidelity: (1.0 - overlap).max(0.0) })
}

/// Snapshot of the basic expectation values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observables {
    pub pair_photons: Vec<f64>,
    pub qutrit_pops: Option<[f64; 3]>,
    /// ⟨(−1)^{n_j}⟩ per mode.
    pub parities: Vec<f64>,
}

pub fn observables(state: &QuantumState) -> Result<Observables, AnalysisError> {
    let layout = state.layout();
    let probe = Probe::new(layout, 1.0);
    let s = probe.sample(state)?;
    let parities = (1..=layout.n_modes())
        .map(|m| Ok(state.expectation(&crate::hilbert::parity(m, layout)?)?.re))
        .collect::<Result<Vec<f64>, AnalysisError>>()?;
    Ok(Observables { pair_photons: s.pair_photons, qutrit_pops: s.pops, parities })
}
