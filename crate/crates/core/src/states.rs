//! Cat states, cat-encoded W states and the qutrit dressed state.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hilbert::{HilbertError, HilbertLayout, QuantumState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StateError {
    #[error("odd-parity cat is undefined at alpha = 0")]
    DegenerateCat,
    #[error("Fock cutoff {cutoff} truncates {tail:.3e} of the cat's probability (tolerance {tolerance:.1e})")]
    Truncation { cutoff: usize, tail: f64, tolerance: f64 },
    #[error("W-state spec does not match layout: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Hilbert(#[from] HilbertError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    Even,
    Odd,
}

impl Parity {
    fn offset(self) -> usize {
        match self {
            Parity::Even => 0,
            Parity::Odd => 1,
        }
    }
}

/// Parameters of a parity cat state, optionally rotated by `theta`
/// (each Fock component |n⟩ picks up e^{i n θ}).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CatParams {
    alpha: C64,
    parity: Parity,
    theta: f64,
}

impl CatParams {
    pub fn new(alpha: C64, parity: Parity) -> Result<Self, StateError> {
        Self::rotated(alpha, parity, 0.0)
    }

    pub fn rotated(alpha: C64, parity: Parity, theta: f64) -> Result<Self, StateError> {
        if parity == Parity::Odd && alpha.norm() == 0.0 {
            return Err(StateError::DegenerateCat);
        }
        Ok(Self { alpha, parity, theta })
    }

    pub fn even(alpha: f64) -> Self {
        Self { alpha: C64::new(alpha, 0.0), parity: Parity::Even, theta: 0.0 }
    }

    pub fn alpha(&self) -> C64 {
        self.alpha
    }

    pub fn parity(&self) -> Parity {
        self.parity
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn with_theta(self, theta: f64) -> Self {
        Self { theta, ..self }
    }
}

/// Unnormalized Fock amplitudes α^n/√(n!) e^{inθ} on the cat's parity, zero elsewhere.
fn raw_coefficients(params: &CatParams, cutoff: usize) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); cutoff];
    let mut term = C64::new(1.0, 0.0);
    for (n, slot) in out.iter_mut().enumerate() {
        if n > 0 {
            term *= params.alpha / (n as f64).sqrt();
        }
        if n % 2 == params.parity.offset() {
            *slot = term * C64::from_polar(1.0, n as f64 * params.theta);
        }
    }
    out
}

/// Probability mass of the untruncated cat on Fock levels ≥ `cutoff`.
pub fn truncation_report(params: &CatParams, cutoff: usize) -> f64 {
    let x = params.alpha.norm_sqr();
    if x == 0.0 {
        // Even cat at α = 0 is the vacuum.
        return if cutoff >= 1 { 0.0 } else { 1.0 };
    }
    let total = match params.parity {
        Parity::Even => x.cosh(),
        Parity::Odd => x.sinh(),
    };
    // Weights x^n / n!, summed over the parity's levels above the cutoff.
    let mut weight = 1.0;
    let mut tail = 0.0;
    let mut n = 0usize;
    loop {
        if n > 0 {
            weight *= x / n as f64;
        }
        if n >= cutoff && n % 2 == params.parity.offset() {
            tail += weight;
            if weight < 1e-18 * tail.max(f64::MIN_POSITIVE) && n as f64 > x {
                break;
            }
        }
        if weight == 0.0 || n > cutoff + 10_000 {
            break;
        }
        n += 1;
    }
    (tail / total).clamp(0.0, 1.0)
}

/// Smallest cutoff (≥ 2) for which both parity cats of amplitude `alpha`
/// lose less than `tolerance` of their probability.
pub fn default_cutoff(alpha: C64, tolerance: f64) -> usize {
    let even = CatParams { alpha, parity: Parity::Even, theta: 0.0 };
    let odd = CatParams { alpha, parity: Parity::Odd, theta: 0.0 };
    (2..)
        .find(|&d| {
            truncation_report(&even, d) < tolerance && (alpha.norm() == 0.0 || truncation_report(&odd, d) < tolerance)
        })
        .expect("cat tails vanish for large cutoffs")
}

/// Single-mode cat state truncated to `cutoff` levels and renormalized.
/// Fails when the discarded tail exceeds `tail_tolerance`.
pub fn cat_state(params: &CatParams, cutoff: usize, tail_tolerance: f64) -> Result<QuantumState, StateError> {
    let layout = HilbertLayout::modes(&[cutoff])?;
    let tail = truncation_report(params, cutoff);
    if tail > tail_tolerance {
        return Err(StateError::Truncation { cutoff, tail, tolerance: tail_tolerance });
    }
    let mut state = QuantumState::vector(layout, raw_coefficients(params, cutoff))?;
    if state.norm() == 0.0 {
        return Err(StateError::Truncation { cutoff, tail: 1.0, tolerance: tail_tolerance });
    }
    state.normalize();
    Ok(state)
}

/// Which resonator of each pair carries the logical qubit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetModes {
    /// Resonators 1, 3, ..., 2N − 1 (the senders).
    Odd,
    /// Resonators 2, 4, ..., 2N (the receivers).
    Even,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WStateSpec {
    pub n_logical: usize,
    pub alpha: C64,
    pub target_modes: TargetModes,
    /// Largest acceptable truncated cat probability.
    pub tail_tolerance: f64,
}

impl WStateSpec {
    pub fn new(n_logical: usize, alpha: f64, target_modes: TargetModes) -> Self {
        Self { n_logical, alpha: C64::new(alpha, 0.0), target_modes, tail_tolerance: 1e-6 }
    }

    pub fn with_tail_tolerance(self, tail_tolerance: f64) -> Self {
        Self { tail_tolerance, ..self }
    }
}

fn vacuum(cutoff: usize) -> Vec<C64> {
    let mut v = vec![C64::new(0.0, 0.0); cutoff];
    v[0] = C64::new(1.0, 0.0);
    v
}

fn kron_all(factors: &[Vec<C64>]) -> Vec<C64> {
    factors.iter().fold(vec![C64::new(1.0, 0.0)], |acc, f| {
        acc.iter().flat_map(|a| f.iter().map(move |b| a * b)).collect()
    })
}

fn w_state_with_phases(spec: &WStateSpec, phases: &[f64], layout: &HilbertLayout) -> Result<QuantumState, StateError> {
    let cavity = if layout.has_qutrit() { layout.cavity_layout()? } else { layout.clone() };
    let n = spec.n_logical;
    if n == 0 {
        return Err(StateError::Mismatch("W state needs at least one logical qubit".into()));
    }
    if cavity.n_modes() != 2 * n {
        return Err(StateError::Mismatch(format!(
            "{} logical qubits need {} modes, layout has {}",
            n,
            2 * n,
            cavity.n_modes()
        )));
    }
    if phases.len() != n {
        return Err(StateError::Mismatch(format!("expected {n} phases, got {}", phases.len())));
    }
    let cutoffs: Vec<usize> = (1..=2 * n).map(|m| cavity.mode_cutoff(m)).collect::<Result<_, _>>()?;

    let mut even = Vec::with_capacity(n);
    let mut odd = Vec::with_capacity(n);
    for j in 0..n {
        let mode = match spec.target_modes {
            TargetModes::Odd => 2 * j,
            TargetModes::Even => 2 * j + 1,
        };
        let d = cutoffs[mode];
        let e = CatParams::rotated(spec.alpha, Parity::Even, phases[j])?;
        let o = CatParams::rotated(spec.alpha, Parity::Odd, phases[j])?;
        even.push(cat_state(&e, d, spec.tail_tolerance)?.amplitudes()?.to_vec());
        odd.push(cat_state(&o, d, spec.tail_tolerance)?.amplitudes()?.to_vec());
    }

    let mut total = vec![C64::new(0.0, 0.0); cavity.dim()];
    let weight = 1.0 / (n as f64).sqrt();
    for k in 0..n {
        let mut factors = Vec::with_capacity(2 * n);
        for j in 0..n {
            let cat = if j == k { odd[j].clone() } else { even[j].clone() };
            match spec.target_modes {
                TargetModes::Odd => {
                    factors.push(cat);
                    factors.push(vacuum(cutoffs[2 * j + 1]));
                }
                TargetModes::Even => {
                    factors.push(vacuum(cutoffs[2 * j]));
                    factors.push(cat);
                }
            }
        }
        for (t, v) in total.iter_mut().zip(kron_all(&factors)) {
            *t += weight * v;
        }
    }
    Ok(QuantumState::vector(cavity, total)?)
}

/// Cat-encoded W state on the cavity modes of `layout`: one odd cat shared
/// symmetrically among the target modes, even cats on the other target
/// modes, vacuum on the non-target modes. The qutrit is not included.
pub fn w_state(spec: &WStateSpec, layout: &HilbertLayout) -> Result<QuantumState, StateError> {
    w_state_with_phases(spec, &vec![0.0; spec.n_logical], layout)
}

/// Transferred W state on the receiving (even) modes with vacuum on the
/// senders, each receiving cat rotated by its entry in `phases`.
pub fn ideal_target(spec: &WStateSpec, phases: &[f64], layout: &HilbertLayout) -> Result<QuantumState, StateError> {
    let spec = WStateSpec { target_modes: TargetModes::Even, ..spec.clone() };
    w_state_with_phases(&spec, phases, layout)
}

/// (|g⟩ + |e⟩)/√2 on a bare qutrit.
pub fn dressed_plus() -> QuantumState {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    QuantumState::vector(HilbertLayout::qutrit(), vec![C64::new(h, 0.0), C64::new(h, 0.0), C64::new(0.0, 0.0)])
        .expect("qutrit vector")
}

/// (|g⟩ − |e⟩)/√2 on a bare qutrit.
pub fn dressed_minus() -> QuantumState {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    QuantumState::vector(HilbertLayout::qutrit(), vec![C64::new(h, 0.0), C64::new(-h, 0.0), C64::new(0.0, 0.0)])
        .expect("qutrit vector")
}

/// |+⟩ ⊗ W on the senders: the state at the start of the transfer.
pub fn initial_state(spec: &WStateSpec, layout: &HilbertLayout) -> Result<QuantumState, StateError> {
    let spec = WStateSpec { target_modes: TargetModes::Odd, ..spec.clone() };
    let w = w_state(&spec, layout)?;
    Ok(dressed_plus().tensor(&w)?)
}
