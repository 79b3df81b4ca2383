//! Fixed-step time evolution: Schrödinger, Lindblad and quantum-jump
//! trajectories, all with classical 4th-order Runge–Kutta steps.

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{AnalysisError, Diagnostics, Probe, Sample, SimulationResult};
use crate::hamiltonians::{CompiledHamiltonian, SystemParams, TimeDependentH};
use crate::hilbert::{annihilation, qutrit_op, HilbertError, HilbertLayout, Level, QuantumState, SparseOperator};

const ZERO: C64 = C64::new(0.0, 0.0);
const I: C64 = C64::new(0.0, 1.0);

/// Largest dimension handled with a dense density matrix.
pub const MAX_DENSE_DIM: usize = 4096;
/// Largest dimension for which the final ρ is diagonalized.
pub const MAX_EIGEN_DIM: usize = 1024;
pub const NORM_DRIFT_LIMIT: f64 = 1e-6;
pub const TRACE_DRIFT_LIMIT: f64 = 1e-5;
pub const POSITIVITY_LIMIT: f64 = -1e-6;
/// dt·max|eigenvalue| above this draws a stability warning.
pub const STABILITY_LIMIT: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error(transparent)]
    Hilbert(#[from] HilbertError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error("norm drifted by {drift:.3e} at t = {t:.4e} s; reduce dt (currently {dt:.3e} s)")]
    NormDrift { drift: f64, t: f64, dt: f64 },
    #[error("trace drifted by {drift:.3e} at t = {t:.4e} s; reduce dt (currently {dt:.3e} s)")]
    TraceDrift { drift: f64, t: f64, dt: f64 },
    #[error(
        "a dense density matrix of dimension {dim} exceeds the limit of {limit}; use the trajectory solver or a lower cutoff"
    )]
    TooLarge { dim: usize, limit: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    ClosedRk4,
    LindbladRk4,
    Trajectories,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub method: Method,
    /// Step size in seconds.
    pub dt: f64,
    pub n_steps: usize,
    #[serde(default)]
    pub trajectories: usize,
    #[serde(default)]
    pub seed: u64,
    /// Record observables every `sample_stride` steps (and at the last step).
    #[serde(default = "one")]
    pub sample_stride: usize,
}

fn one() -> usize {
    1
}

impl SolverConfig {
    pub fn new(method: Method, dt: f64, n_steps: usize) -> Self {
        Self { method, dt, n_steps, trajectories: 0, seed: 0, sample_stride: 1 }
    }

    pub fn with_trajectories(mut self, count: usize, seed: u64) -> Self {
        self.trajectories = count;
        self.seed = seed;
        self
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.sample_stride = stride;
        self
    }

    /// Step count and size covering `[0, duration]` with steps no longer than `max_dt`.
    pub fn covering(method: Method, duration: f64, max_dt: f64) -> Self {
        let n = (duration / max_dt).ceil().max(1.0) as usize;
        Self::new(method, duration / n as f64, n)
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(DynamicsError::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if self.sample_stride == 0 {
            return Err(DynamicsError::Config("sample_stride must be at least 1".into()));
        }
        if self.method == Method::Trajectories && self.trajectories == 0 {
            return Err(DynamicsError::Config("trajectory runs need a trajectory count of at least 1".into()));
        }
        Ok(())
    }

    fn is_sample(&self, k: usize) -> bool {
        k % self.sample_stride == 0 || k == self.n_steps
    }

    pub fn duration(&self) -> f64 {
        self.dt * self.n_steps as f64
    }
}

#[derive(Debug, Clone)]
pub struct Channel {
    pub label: String,
    pub op: SparseOperator,
    pub rate: f64,
}

/// Lindblad channels Λ = √rate · op.
#[derive(Debug, Clone)]
pub struct CollapseSet {
    layout: HilbertLayout,
    channels: Vec<Channel>,
}

impl CollapseSet {
    pub fn new(layout: &HilbertLayout) -> Self {
        Self { layout: layout.clone(), channels: Vec::new() }
    }

    pub fn push(&mut self, label: &str, op: SparseOperator, rate: f64) -> Result<(), DynamicsError> {
        if op.layout() != &self.layout {
            return Err(HilbertError::LayoutMismatch.into());
        }
        if !(rate >= 0.0) {
            return Err(DynamicsError::Config(format!("rate of channel {label} must be non-negative, got {rate}")));
        }
        self.channels.push(Channel { label: label.to_string(), op, rate });
        Ok(())
    }

    /// Cavity loss on every resonator, the three qutrit relaxation paths and
    /// dephasing of |e⟩ and |f⟩. Dephasing uses Λ = √γ_φ σ_ll; since σ_ll is a
    /// projector this is the same as σρσ − ½σρ − ½ρσ.
    pub fn from_params(p: &SystemParams, layout: &HilbertLayout) -> Result<Self, DynamicsError> {
        let mut c = Self::new(layout);
        for m in 1..=layout.n_modes() {
            c.push(&format!("kappa_{m}"), annihilation(m, layout)?, p.kappa[m - 1])?;
        }
        if layout.has_qutrit() {
            c.push("relax_eg", qutrit_op(Level::G, Level::E, layout)?, p.relaxation.eg)?;
            c.push("relax_fe", qutrit_op(Level::E, Level::F, layout)?, p.relaxation.fe)?;
            c.push("relax_fg", qutrit_op(Level::G, Level::F, layout)?, p.relaxation.fg)?;
            c.push("dephase_e", qutrit_op(Level::E, Level::E, layout)?, p.dephasing.e)?;
            c.push("dephase_f", qutrit_op(Level::F, Level::F, layout)?, p.dephasing.f)?;
        }
        Ok(c)
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn layout(&self) -> &HilbertLayout {
        &self.layout
    }

    /// Channels with a nonzero rate.
    pub fn active(&self) -> impl Iterator<Item = &Channel> {
        self.channels.iter().filter(|c| c.rate > 0.0)
    }

    /// −(i/2) Σ rate · op†op, the anti-Hermitian drift.
    pub fn drift(&self) -> Result<SparseOperator, HilbertError> {
        let mut acc = SparseOperator::zero(&self.layout);
        for c in self.active() {
            acc = acc.add(&c.op.adjoint().mul(&c.op)?.scale(C64::new(0.0, -0.5 * c.rate)))?;
        }
        Ok(acc)
    }
}

/// Observables plus the state at the last step.
#[derive(Debug, Clone)]
pub struct Evolution {
    pub result: SimulationResult,
    /// Pure state (closed), density matrix (Lindblad) or ensemble-averaged
    /// density matrix (trajectories, when it fits in memory).
    pub final_state: Option<QuantumState>,
}

/// Drives one RK4 integration of dy/dt = f(t, y).
struct Rk4 {
    tmp: Vec<C64>,
    k: Vec<C64>,
    acc: Vec<C64>,
}

impl Rk4 {
    fn new(n: usize) -> Self {
        Self { tmp: vec![ZERO; n], k: vec![ZERO; n], acc: vec![ZERO; n] }
    }

    fn step(&mut self, y: &mut Vec<C64>, t: f64, dt: f64, f: &mut impl FnMut(f64, &[C64], &mut [C64])) {
        let h2 = 0.5 * dt;
        f(t, y, &mut self.k);
        for ((a, t), (y, k)) in self.acc.iter_mut().zip(self.tmp.iter_mut()).zip(y.iter().zip(&self.k)) {
            *a = y + k * (dt / 6.0);
            *t = y + k * h2;
        }
        f(t + h2, &self.tmp, &mut self.k);
        for ((a, t), (y, k)) in self.acc.iter_mut().zip(self.tmp.iter_mut()).zip(y.iter().zip(&self.k)) {
            *a += k * (dt / 3.0);
            *t = y + k * h2;
        }
        f(t + h2, &self.tmp, &mut self.k);
        for ((a, t), (y, k)) in self.acc.iter_mut().zip(self.tmp.iter_mut()).zip(y.iter().zip(&self.k)) {
            *a += k * (dt / 3.0);
            *t = y + k * dt;
        }
        f(t + dt, &self.tmp, &mut self.k);
        for (a, k) in self.acc.iter_mut().zip(&self.k) {
            *a += k * (dt / 6.0);
        }
        std::mem::swap(y, &mut self.acc);
    }
}

/// −i H(t) ψ with values refreshed only when `t` changes.
struct SchrodingerRhs<'a> {
    h: &'a CompiledHamiltonian,
    vals: Vec<C64>,
    at: Option<f64>,
}

impl<'a> SchrodingerRhs<'a> {
    fn new(h: &'a CompiledHamiltonian) -> Self {
        Self { h, vals: h.values_buffer(), at: None }
    }

    fn eval(&mut self, t: f64, psi: &[C64], out: &mut [C64]) {
        if !self.h.is_static() && self.at != Some(t) {
            self.h.assemble(t, &mut self.vals);
            self.at = Some(t);
        }
        self.h.apply(&self.vals, psi, out);
        out.iter_mut().for_each(|v| *v *= -I);
    }
}

/// Largest power-iteration spectral radius over a few times in the first
/// nanosecond, a cheap stand-in for max|eigenvalue| over the run.
pub fn eigenvalue_scale(h: &CompiledHamiltonian) -> f64 {
    let times: &[f64] = if h.is_static() { &[0.0] } else { &[0.0, 1.3e-10, 4.7e-10, 9.1e-10] };
    times.iter().map(|&t| h.spectral_radius(t, 200)).fold(0.0, f64::max)
}

fn stability_warning(h: &CompiledHamiltonian, dt: f64) -> Option<String> {
    let r = dt * eigenvalue_scale(h);
    (r > STABILITY_LIMIT).then(|| format!("dt·max|eigenvalue| = {r:.3} exceeds {STABILITY_LIMIT}; results may be inaccurate"))
}

fn check_layouts(h: &TimeDependentH, state: &QuantumState, probe: &Probe) -> Result<(), DynamicsError> {
    if h.layout() != state.layout() || probe.layout() != state.layout() {
        return Err(HilbertError::LayoutMismatch.into());
    }
    Ok(())
}

/// Integrate i dψ/dt = H(t)ψ. The norm is monitored, never corrected.
pub fn evolve_closed(
    h: &TimeDependentH,
    psi0: &QuantumState,
    cfg: &SolverConfig,
    probe: &Probe,
) -> Result<Evolution, DynamicsError> {
    cfg.validate()?;
    check_layouts(h, psi0, probe)?;
    let mut psi = psi0.amplitudes()?.to_vec();
    if (psi0.norm() - 1.0).abs() > 1e-9 {
        return Err(DynamicsError::Config(format!("initial state has norm {}", psi0.norm())));
    }
    let compiled = h.compile(None)?;
    let mut rhs = SchrodingerRhs::new(&compiled);
    let mut rk = Rk4::new(psi.len());
    let mut result = probe.empty_result();
    let mut diag = Diagnostics { dt: cfg.dt, n_steps: cfg.n_steps, ..Default::default() };
    diag.warnings.extend(stability_warning(&compiled, cfg.dt));

    for k in 0..=cfg.n_steps {
        let t = k as f64 * cfg.dt;
        if cfg.is_sample(k) {
            let s = probe.sample_vector(&psi);
            let drift = (s.trace.sqrt() - 1.0).abs();
            diag.max_norm_drift = diag.max_norm_drift.max(drift);
            if drift > NORM_DRIFT_LIMIT {
                return Err(DynamicsError::NormDrift { drift, t, dt: cfg.dt });
            }
            probe.record(&mut result, t, &s);
        }
        if k == cfg.n_steps {
            break;
        }
        rk.step(&mut psi, t, cfg.dt, &mut |t, y, out| rhs.eval(t, y, out));
    }
    result.diagnostics = diag;
    let final_state = QuantumState::vector(psi0.layout().clone(), psi)?;
    Ok(Evolution { result, final_state: Some(final_state) })
}

/// dρ/dt = −i(H_eff ρ − ρ H_eff†) + Σ rate · L ρ L†, H_eff = H − (i/2)Σ rate L†L.
struct LindbladRhs<'a> {
    h: &'a CompiledHamiltonian,
    vals: Vec<C64>,
    at: Option<f64>,
    jumps: Vec<(&'a SparseOperator, f64)>,
    x: Vec<C64>,
    dim: usize,
}

impl LindbladRhs<'_> {
    fn eval(&mut self, t: f64, rho: &[C64], out: &mut [C64]) {
        if !self.h.is_static() && self.at != Some(t) {
            self.h.assemble(t, &mut self.vals);
            self.at = Some(t);
        }
        let d = self.dim;
        self.h.mul_dense(&self.vals, rho, &mut self.x);
        // out = −i (X − X†), in tiles to keep the transposed reads cached.
        const TILE: usize = 32;
        for bi in (0..d).step_by(TILE) {
            for bj in (0..d).step_by(TILE) {
                for i in bi..(bi + TILE).min(d) {
                    for j in bj..(bj + TILE).min(d) {
                        out[i * d + j] = -I * (self.x[i * d + j] - self.x[j * d + i].conj());
                    }
                }
            }
        }
        for &(op, w) in &self.jumps {
            op.sandwich_add(w, rho, out);
        }
    }
}

fn min_eigenvalue(rho: &[C64], d: usize) -> f64 {
    let m = nalgebra::DMatrix::from_fn(d, d, |i, j| 0.5 * (rho[i * d + j] + rho[j * d + i].conj()));
    nalgebra::SymmetricEigen::new(m).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Integrate the master equation with a dense ρ. Trace, Hermiticity and the
/// smallest diagonal entry are monitored at sample times; positivity is not
/// enforced.
pub fn evolve_lindblad(
    h: &TimeDependentH,
    collapse: &CollapseSet,
    rho0: &QuantumState,
    cfg: &SolverConfig,
    probe: &Probe,
) -> Result<Evolution, DynamicsError> {
    cfg.validate()?;
    check_layouts(h, rho0, probe)?;
    if collapse.layout() != h.layout() {
        return Err(HilbertError::LayoutMismatch.into());
    }
    let d = rho0.dim();
    if d > MAX_DENSE_DIM {
        return Err(DynamicsError::TooLarge { dim: d, limit: MAX_DENSE_DIM });
    }
    let mut rho = rho0.to_density().rho()?.to_vec();
    let compiled = h.compile(Some(&collapse.drift()?))?;
    let mut rhs = LindbladRhs {
        h: &compiled,
        vals: compiled.values_buffer(),
        at: None,
        jumps: collapse.active().map(|c| (&c.op, c.rate)).collect(),
        x: vec![ZERO; d * d],
        dim: d,
    };
    let mut rk = Rk4::new(d * d);
    let mut result = probe.empty_result();
    let mut diag = Diagnostics { dt: cfg.dt, n_steps: cfg.n_steps, ..Default::default() };
    diag.warnings.extend(stability_warning(&compiled, cfg.dt));
    let mut min_diag = f64::INFINITY;
    let report_every = (cfg.n_steps / 10).max(1);

    for k in 0..=cfg.n_steps {
        let t = k as f64 * cfg.dt;
        if cfg.is_sample(k) {
            let s = probe.sample_density(&rho);
            let drift = (s.trace - 1.0).abs();
            diag.max_norm_drift = diag.max_norm_drift.max(drift);
            if drift > TRACE_DRIFT_LIMIT {
                return Err(DynamicsError::TraceDrift { drift, t, dt: cfg.dt });
            }
            let herm = crate::hilbert::max_hermitian_deviation(&rho, d);
            diag.max_hermitian_deviation = diag.max_hermitian_deviation.max(herm);
            min_diag = (0..d).map(|i| rho[i * d + i].re).fold(min_diag, f64::min);
            probe.record(&mut result, t, &s);
        }
        if k == cfg.n_steps {
            break;
        }
        if k > 0 && k % report_every == 0 {
            log::info!("lindblad: step {k}/{} (t = {:.4e} s)", cfg.n_steps, t);
        }
        rk.step(&mut rho, t, cfg.dt, &mut |t, y, out| rhs.eval(t, y, out));
    }
    diag.min_diagonal = Some(min_diag);
    if d <= MAX_EIGEN_DIM {
        diag.min_eigenvalue = Some(min_eigenvalue(&rho, d));
    }
    diag.positivity_warning = min_diag < POSITIVITY_LIMIT || diag.min_eigenvalue.is_some_and(|e| e < POSITIVITY_LIMIT);
    if diag.positivity_warning {
        log::warn!("density matrix lost positivity beyond {POSITIVITY_LIMIT}");
        diag.warnings.push(format!("negative eigenvalue or diagonal entry below {POSITIVITY_LIMIT}"));
    }
    result.diagnostics = diag;
    let final_state = QuantumState::density(rho0.layout().clone(), rho)?;
    Ok(Evolution { result, final_state: Some(final_state) })
}

struct TrajectoryOutcome {
    samples: Vec<Sample>,
    jumps: u64,
    final_psi: Vec<C64>,
}

fn run_trajectory(
    compiled: &CompiledHamiltonian,
    jumps: &[(&SparseOperator, f64)],
    psi0: &[C64],
    cfg: &SolverConfig,
    probe: &Probe,
    index: usize,
) -> TrajectoryOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let mut psi = psi0.to_vec();
    let mut rhs = SchrodingerRhs::new(compiled);
    let mut rk = Rk4::new(psi.len());
    let mut threshold: f64 = rng.gen();
    let mut samples = Vec::new();
    let mut n_jumps = 0;
    let mut scratch = vec![ZERO; psi.len()];
    for k in 0..=cfg.n_steps {
        let t = k as f64 * cfg.dt;
        if cfg.is_sample(k) {
            let s = probe.sample_vector(&psi);
            samples.push(s.scaled(1.0 / s.trace));
        }
        if k == cfg.n_steps {
            break;
        }
        rk.step(&mut psi, t, cfg.dt, &mut |t, y, out| rhs.eval(t, y, out));
        let norm2: f64 = psi.iter().map(|a| a.norm_sqr()).sum();
        if norm2 < threshold && !jumps.is_empty() {
            let weights: Vec<f64> = jumps
                .iter()
                .map(|(op, w)| {
                    scratch.fill(ZERO);
                    op.apply_add(C64::new(1.0, 0.0), &psi, &mut scratch);
                    w * scratch.iter().map(|a| a.norm_sqr()).sum::<f64>()
                })
                .collect();
            let total: f64 = weights.iter().sum();
            if total > 0.0 {
                let mut pick = rng.gen::<f64>() * total;
                let mut chosen = weights.len() - 1;
                for (c, w) in weights.iter().enumerate() {
                    if pick < *w {
                        chosen = c;
                        break;
                    }
                    pick -= w;
                }
                scratch.fill(ZERO);
                jumps[chosen].0.apply_add(C64::new(1.0, 0.0), &psi, &mut scratch);
                let n = scratch.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
                psi.iter_mut().zip(&scratch).for_each(|(p, s)| *p = s / n);
                n_jumps += 1;
            }
            threshold = rng.gen();
        }
    }
    let n = psi.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    psi.iter_mut().for_each(|a| *a /= n);
    TrajectoryOutcome { samples, jumps: n_jumps, final_psi: psi }
}

/// Quantum-jump unraveling of the master equation. Each trajectory owns a
/// ChaCha8 stream selected by its index, and results are merged in index
/// order, so the output does not depend on the thread count.
pub fn evolve_trajectories(
    h: &TimeDependentH,
    collapse: &CollapseSet,
    psi0: &QuantumState,
    cfg: &SolverConfig,
    probe: &Probe,
) -> Result<Evolution, DynamicsError> {
    cfg.validate()?;
    if cfg.trajectories == 0 {
        return Err(DynamicsError::Config("trajectory runs need a trajectory count of at least 1".into()));
    }
    check_layouts(h, psi0, probe)?;
    if collapse.layout() != h.layout() {
        return Err(HilbertError::LayoutMismatch.into());
    }
    let psi = psi0.amplitudes()?.to_vec();
    let compiled = h.compile(Some(&collapse.drift()?))?;
    let jumps: Vec<(&SparseOperator, f64)> = collapse.active().map(|c| (&c.op, c.rate)).collect();
    let outcomes: Vec<TrajectoryOutcome> = (0..cfg.trajectories)
        .into_par_iter()
        .map(|i| run_trajectory(&compiled, &jumps, &psi, cfg, probe, i))
        .collect();

    let n = cfg.trajectories as f64;
    let mut mean: Vec<Sample> = outcomes[0].samples.iter().map(|s| s.scaled(0.0)).collect();
    for o in &outcomes {
        for (m, s) in mean.iter_mut().zip(&o.samples) {
            m.add_scaled(s, 1.0 / n);
        }
    }
    let mut result = probe.empty_result();
    let times = (0..=cfg.n_steps).filter(|&k| cfg.is_sample(k)).map(|k| k as f64 * cfg.dt);
    for (t, s) in times.zip(&mean) {
        probe.record(&mut result, t, s);
    }
    let d = psi.len();
    let final_state = if d <= MAX_DENSE_DIM {
        let mut rho = vec![ZERO; d * d];
        for o in &outcomes {
            for (i, a) in o.final_psi.iter().enumerate() {
                if *a == ZERO {
                    continue;
                }
                for (j, b) in o.final_psi.iter().enumerate() {
                    rho[i * d + j] += a * b.conj() / n;
                }
            }
        }
        Some(QuantumState::density(psi0.layout().clone(), rho)?)
    } else {
        None
    };
    let mut diag = Diagnostics {
        dt: cfg.dt,
        n_steps: cfg.n_steps,
        trajectories: Some(cfg.trajectories),
        total_jumps: Some(outcomes.iter().map(|o| o.jumps).sum()),
        ..Default::default()
    };
    diag.warnings.extend(stability_warning(&compiled, cfg.dt));
    result.diagnostics = diag;
    Ok(Evolution { result, final_state })
}

/// Dispatch on `cfg.method`. Closed runs ignore `collapse`.
pub fn evolve(
    h: &TimeDependentH,
    collapse: &CollapseSet,
    state: &QuantumState,
    cfg: &SolverConfig,
    probe: &Probe,
) -> Result<Evolution, DynamicsError> {
    match cfg.method {
        Method::ClosedRk4 => evolve_closed(h, state, cfg, probe),
        Method::LindbladRk4 => evolve_lindblad(h, collapse, state, cfg, probe),
        Method::Trajectories => evolve_trajectories(h, collapse, state, cfg, probe),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::fidelity;
    use crate::hamiltonians::{build_he, build_pair_he, Coefficient};
    use crate::hilbert::number;
    use crate::states::{cat_state, dressed_plus, ideal_target, CatParams, Parity, TargetModes, WStateSpec};
    use std::f64::consts::FRAC_PI_2;

    fn qutrit_rabi(omega: f64) -> TimeDependentH {
        let q = HilbertLayout::qutrit();
        let mut h = TimeDependentH::new(&q);
        h.push(qutrit_op(Level::E, Level::G, &q).unwrap(), Coefficient::Constant(C64::new(omega, 0.0)), true).unwrap();
        h
    }

    #[test]
    fn zero_hamiltonian_is_identity() {
        let layout = HilbertLayout::modes(&[3, 3]).unwrap();
        let h = TimeDependentH::new(&layout);
        let psi = QuantumState::basis(layout.clone(), &[1, 2]).unwrap();
        let ev = evolve_closed(&h, &psi, &SolverConfig::new(Method::ClosedRk4, 0.1, 10), &Probe::new(&layout, 1.0))
            .unwrap();
        assert_eq!(ev.final_state.unwrap(), psi);
    }

    #[test]
    fn rabi_oscillation() {
        let omega = 2.0;
        let h = qutrit_rabi(omega);
        let q = HilbertLayout::qutrit();
        let g = QuantumState::basis(q.clone(), &[0]).unwrap();
        let cfg = SolverConfig::new(Method::ClosedRk4, 1e-3, 2000).with_stride(100);
        let ev = evolve_closed(&h, &g, &cfg, &Probe::new(&q, 1.0)).unwrap();
        assert_eq!(ev.result.len(), 21);
        for (t, p) in ev.result.times.iter().zip(&ev.result.qutrit_pops) {
            assert!((p[1] - (omega * t).sin().powi(2)).abs() < 1e-6);
        }
    }

    #[test]
    fn norm_drift_is_an_error() {
        let h = qutrit_rabi(1.0);
        let q = HilbertLayout::qutrit();
        let g = QuantumState::basis(q.clone(), &[0]).unwrap();
        let cfg = SolverConfig::new(Method::ClosedRk4, 1.0, 50);
        assert!(matches!(evolve_closed(&h, &g, &cfg, &Probe::new(&q, 1.0)), Err(DynamicsError::NormDrift { .. })));
    }

    #[test]
    fn single_pair_swap_moves_the_cat() {
        let p = SystemParams::defaults(1);
        let lam = p.derived().lambda;
        let layout = HilbertLayout::modes(&[8, 8]).unwrap();
        let h = TimeDependentH::from_static(build_pair_he(&p, &layout, 1).unwrap());
        let spec = WStateSpec::new(1, 0.5, TargetModes::Odd);
        let cat = cat_state(&CatParams::new(C64::new(0.5, 0.0), Parity::Odd).unwrap(), 8, 1e-6).unwrap();
        let vac = QuantumState::basis(HilbertLayout::modes(&[8]).unwrap(), &[0]).unwrap();
        let psi0 = cat.tensor(&vac).unwrap();
        let t_end = FRAC_PI_2 / lam;
        let cfg = SolverConfig::covering(Method::ClosedRk4, t_end, t_end / 2000.0);
        let ev = evolve_closed(&h, &psi0, &cfg, &Probe::new(&layout, t_end)).unwrap();
        // |k,0⟩ → i^k |0,k⟩: a quarter-turn rotation of the cat.
        let target = ideal_target(&spec, &[FRAC_PI_2], &layout).unwrap();
        let f = fidelity(&target, &ev.final_state.unwrap()).unwrap();
        assert!(f > 1.0 - 1e-9, "{f}");
    }

    #[test]
    fn lindblad_unitary_limit() {
        let layout = HilbertLayout::uniform(1, 3).unwrap();
        let p = SystemParams::ideal(1);
        let h = TimeDependentH::from_static(crate::hamiltonians::build_effective_h(&p, &layout).unwrap());
        let spec = WStateSpec::new(1, 0.5, TargetModes::Odd).with_tail_tolerance(0.05);
        let psi0 = crate::states::initial_state(&spec, &layout).unwrap();
        let t = p.derived().t_swap;
        let cfg = SolverConfig::covering(Method::ClosedRk4, t, t / 2000.0).with_stride(200);
        let probe = Probe::new(&layout, t);
        let closed = evolve_closed(&h, &psi0, &cfg, &probe).unwrap();
        let open = evolve_lindblad(&h, &CollapseSet::new(&layout), &psi0, &cfg, &probe).unwrap();
        let psi = closed.final_state.unwrap();
        let f = fidelity(&psi, &open.final_state.unwrap()).unwrap();
        assert!((1.0 - f).abs() < 1e-8);
        assert!(open.result.diagnostics.max_hermitian_deviation < 1e-8);
        assert!(open.result.diagnostics.max_norm_drift < 1e-10);
    }

    fn decay_setup(kappa: f64) -> (HilbertLayout, TimeDependentH, CollapseSet, Probe) {
        let layout = HilbertLayout::modes(&[3]).unwrap();
        let mut c = CollapseSet::new(&layout);
        c.push("kappa", annihilation(1, &layout).unwrap(), kappa).unwrap();
        let probe = Probe::new(&layout, 1.0).with_observable("n", number(1, &layout).unwrap()).unwrap();
        (layout.clone(), TimeDependentH::new(&layout), c, probe)
    }

    #[test]
    fn photon_loss_decay() {
        let kappa = 0.7;
        let (layout, h, c, probe) = decay_setup(kappa);
        let one = QuantumState::basis(layout, &[1]).unwrap();
        let cfg = SolverConfig::new(Method::LindbladRk4, 1e-3, 3000).with_stride(300);
        let ev = evolve_lindblad(&h, &c, &one, &cfg, &probe).unwrap();
        let n = ev.result.custom_series("n").unwrap();
        assert_eq!(n.len(), 11);
        for (t, v) in ev.result.times.iter().zip(n) {
            assert!((v.re - (-kappa * t).exp()).abs() < 1e-6);
        }
        assert!(ev.result.diagnostics.min_eigenvalue.unwrap() > -1e-12);
    }

    #[test]
    fn pure_dephasing_of_coherence() {
        let q = HilbertLayout::qutrit();
        let mut c = CollapseSet::new(&q);
        let gamma = 0.4;
        c.push("dephase_e", qutrit_op(Level::E, Level::E, &q).unwrap(), gamma).unwrap();
        let probe = Probe::new(&q, 1.0).with_observable("rho_ge", qutrit_op(Level::E, Level::G, &q).unwrap()).unwrap();
        let cfg = SolverConfig::new(Method::LindbladRk4, 1e-3, 4000).with_stride(400);
        let ev = evolve_lindblad(&TimeDependentH::new(&q), &c, &dressed_plus(), &cfg, &probe).unwrap();
        for (t, v) in ev.result.times.iter().zip(ev.result.custom_series("rho_ge").unwrap()) {
            assert!((v.norm() - 0.5 * (-gamma * t / 2.0).exp()).abs() < 1e-6);
        }
    }

    #[test]
    fn default_collapse_set_has_every_channel() {
        for n in 1..=3 {
            let layout = HilbertLayout::uniform(n, 2).unwrap();
            let c = CollapseSet::from_params(&SystemParams::defaults(n), &layout).unwrap();
            assert_eq!(c.len(), 2 * n + 5);
            assert!(c.channels().iter().all(|ch| ch.rate > 0.0));
        }
        let layout = HilbertLayout::modes(&[2]).unwrap();
        let mut c = CollapseSet::new(&layout);
        assert!(c.push("bad", annihilation(1, &layout).unwrap(), -1.0).is_err());
    }

    #[test]
    fn dense_limit_enforced() {
        let layout = HilbertLayout::uniform(3, 4).unwrap();
        let psi = QuantumState::basis(layout.clone(), &[0; 7]).unwrap();
        let cfg = SolverConfig::new(Method::LindbladRk4, 1e-3, 1);
        let r = evolve_lindblad(&TimeDependentH::new(&layout), &CollapseSet::new(&layout), &psi, &cfg, &Probe::new(&layout, 1.0));
        assert!(matches!(r, Err(DynamicsError::TooLarge { .. })));
    }

    #[test]
    fn trajectories_without_rates_follow_closed_evolution() {
        let h = qutrit_rabi(1.3);
        let q = HilbertLayout::qutrit();
        let g = QuantumState::basis(q.clone(), &[0]).unwrap();
        let cfg = SolverConfig::new(Method::Trajectories, 1e-3, 1000).with_stride(100).with_trajectories(3, 9);
        let probe = Probe::new(&q, 1.0);
        let tr = evolve_trajectories(&h, &CollapseSet::new(&q), &g, &cfg, &probe).unwrap();
        let cl = evolve_closed(&h, &g, &cfg, &probe).unwrap();
        for (a, b) in tr.result.qutrit_pops.iter().zip(&cl.result.qutrit_pops) {
            assert!((a[1] - b[1]).abs() < 1e-12);
        }
        assert_eq!(tr.result.diagnostics.total_jumps, Some(0));
    }

    #[test]
    fn trajectory_decay_within_error_bars() {
        let kappa = 1.0;
        let (layout, h, c, probe) = decay_setup(kappa);
        let one = QuantumState::basis(layout, &[1]).unwrap();
        let n_traj = 2000;
        let cfg = SolverConfig::new(Method::Trajectories, 2e-3, 1000).with_stride(100).with_trajectories(n_traj, 7);
        let ev = evolve_trajectories(&h, &c, &one, &cfg, &probe).unwrap();
        for (t, v) in ev.result.times.iter().zip(ev.result.custom_series("n").unwrap()) {
            let p = (-kappa * t).exp();
            let se = (p * (1.0 - p) / n_traj as f64).sqrt().max(1e-12);
            assert!((v.re - p).abs() < 3.0 * se + 2e-3, "t={t} got {} want {p}", v.re);
        }
    }

    #[test]
    fn trajectories_are_deterministic() {
        let kappa = 2.0;
        let (layout, h, c, probe) = decay_setup(kappa);
        let one = QuantumState::basis(layout, &[2]).unwrap();
        let cfg = SolverConfig::new(Method::Trajectories, 1e-3, 500).with_stride(50).with_trajectories(64, 42);
        let a = evolve_trajectories(&h, &c, &one, &cfg, &probe).unwrap();
        let b = evolve_trajectories(&h, &c, &one, &cfg, &probe).unwrap();
        assert_eq!(a.result, b.result);
        let other = SolverConfig { seed: 43, ..cfg };
        let d = evolve_trajectories(&h, &c, &one, &other, &probe).unwrap();
        assert_ne!(a.result, d.result);
    }

    #[test]
    fn commuting_pairs_factorize() {
        let p = SystemParams::ideal(2);
        let cav = HilbertLayout::uniform(2, 3).unwrap().cavity_layout().unwrap();
        let h = TimeDependentH::from_static(build_he(&p, &cav).unwrap());
        let pair = HilbertLayout::modes(&[3, 3]).unwrap();
        let amp = |k: usize| C64::new(1.0 + k as f64, 0.3 * k as f64);
        let mut a: Vec<C64> = (0..9).map(amp).collect();
        let mut b: Vec<C64> = (0..9).map(|k| amp(8 - k) * C64::new(0.0, 1.0)).collect();
        for v in [&mut a, &mut b] {
            let n = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= n);
        }
        let sa = QuantumState::vector(pair.clone(), a).unwrap();
        let sb = QuantumState::vector(pair.clone(), b).unwrap();
        let t = 0.7 * p.derived().t_swap;
        let cfg = SolverConfig::covering(Method::ClosedRk4, t, t / 1000.0);
        let joint = evolve_closed(&h, &sa.tensor(&sb).unwrap(), &cfg, &Probe::new(&cav, t)).unwrap();

        let mut one = p.clone();
        one.n_pairs = 1;
        one.g.truncate(2);
        one.delta_pair.truncate(1);
        one.mode_freqs.truncate(2);
        one.kappa.truncate(2);
        let h1 = TimeDependentH::from_static(build_pair_he(&one, &pair, 1).unwrap());
        let h2 = TimeDependentH::from_static(build_pair_he(&one, &pair, 1).unwrap().scale_real(-1.0));
        let ea = evolve_closed(&h1, &sa, &cfg, &Probe::new(&pair, t)).unwrap().final_state.unwrap();
        let eb = evolve_closed(&h2, &sb, &cfg, &Probe::new(&pair, t)).unwrap().final_state.unwrap();
        let product = ea.tensor(&eb).unwrap();
        let f = fidelity(&product, &joint.final_state.unwrap()).unwrap();
        assert!(f > 1.0 - 1e-8, "{f}");
    }
}
