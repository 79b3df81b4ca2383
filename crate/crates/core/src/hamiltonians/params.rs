use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use super::HamiltonianError;

const MHZ: f64 = TAU * 1e6;
const GHZ: f64 = TAU * 1e9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QutritFrequencies {
    pub eg: f64,
    pub fe: f64,
    pub fg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseLeakage {
    /// Rabi frequency of the stray |e⟩ ↔ |f⟩ drive.
    pub omega_fe: f64,
    /// Detuning of that drive, ω_fe − ω_eg.
    pub delta_p: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QutritRelaxation {
    pub eg: f64,
    pub fe: f64,
    pub fg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QutritDephasing {
    pub e: f64,
    pub f: f64,
}

/// Physical parameters. Frequencies and rates are angular (rad/s); decay
/// rates are inverse lifetimes (1/s).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub n_pairs: usize,
    /// Coupling g_j of resonator j (index j − 1).
    pub g: Vec<f64>,
    /// Detuning Δ of each pair, as it appears in the interaction-picture phases.
    pub delta_pair: Vec<f64>,
    /// Rabi frequency Ω of the |g⟩ ↔ |e⟩ drive.
    pub omega_drive: f64,
    pub mode_freqs: Vec<f64>,
    pub qutrit_freqs: QutritFrequencies,
    /// Uniform inter-cavity crosstalk strength.
    pub crosstalk: f64,
    pub leak: PulseLeakage,
    pub kappa: Vec<f64>,
    pub relaxation: QutritRelaxation,
    pub dephasing: QutritDephasing,
    /// Cat amplitude (dimensionless).
    pub alpha: f64,
}

/// Resonator frequencies that satisfy the frequency-matching identities:
/// ω_{2j−1} = ω_fg − Δ_j and ω_{2j} = ω_fe − Δ_j.
pub fn matched_mode_frequencies(qutrit: &QutritFrequencies, delta_pair: &[f64]) -> Vec<f64> {
    delta_pair.iter().flat_map(|&d| [qutrit.fg - d, qutrit.fe - d]).collect()
}

impl SystemParams {
    /// Operating point used throughout the project: g/2π = 150 MHz on every
    /// resonator, Δ/2π = +450 MHz for the first pair and −450 MHz for the
    /// rest, resonators placed by frequency matching, weak crosstalk at 2 %
    /// of the swap rate, and the coherence times of a flux qutrit with
    /// 20 μs cavities.
    pub fn defaults(n_pairs: usize) -> Self {
        let g = vec![150.0 * MHZ; 2 * n_pairs];
        let delta_pair: Vec<f64> =
            (0..n_pairs).map(|j| if j == 0 { 450.0 * MHZ } else { -450.0 * MHZ }).collect();
        let qutrit_freqs = QutritFrequencies { eg: 7.5 * GHZ, fe: 5.0 * GHZ, fg: 12.5 * GHZ };
        let mode_freqs = matched_mode_frequencies(&qutrit_freqs, &delta_pair);
        let mut p = Self {
            n_pairs,
            g,
            delta_pair,
            omega_drive: DEFAULT_DRIVE_MHZ * MHZ,
            mode_freqs,
            qutrit_freqs,
            crosstalk: 0.0,
            leak: PulseLeakage { omega_fe: 47.0 * MHZ, delta_p: -2.5 * GHZ },
            kappa: vec![1.0 / 20e-6; 2 * n_pairs],
            relaxation: QutritRelaxation { eg: 1.0 / 30e-6, fe: 1.0 / 20e-6, fg: 1.0 / 60e-6 },
            dephasing: QutritDephasing { e: 1.0 / 40e-6, f: 1.0 / 25e-6 },
            alpha: 0.5,
        };
        p.crosstalk = 0.02 * p.derived().lambda;
        p
    }

    /// Defaults with every dissipative and spurious channel switched off.
    pub fn ideal(n_pairs: usize) -> Self {
        let mut p = Self::defaults(n_pairs);
        p.crosstalk = 0.0;
        p.leak.omega_fe = 0.0;
        p.kappa.iter_mut().for_each(|k| *k = 0.0);
        p.relaxation = QutritRelaxation { eg: 0.0, fe: 0.0, fg: 0.0 };
        p.dephasing = QutritDephasing { e: 0.0, f: 0.0 };
        p
    }

    /// Structural checks: list lengths and sign of rates.
    pub fn validate(&self) -> Result<(), HamiltonianError> {
        let n = self.n_pairs;
        if n == 0 {
            return Err(HamiltonianError::Params("n_pairs must be at least 1".into()));
        }
        let lens = [("g", self.g.len(), 2 * n), ("delta_pair", self.delta_pair.len(), n), ("mode_freqs", self.mode_freqs.len(), 2 * n), ("kappa", self.kappa.len(), 2 * n)];
        for (name, got, want) in lens {
            if got != want {
                return Err(HamiltonianError::Params(format!("{name} has {got} entries, expected {want}")));
            }
        }
        if self.delta_pair.iter().any(|&d| d == 0.0) {
            return Err(HamiltonianError::Params("pair detunings must be nonzero".into()));
        }
        let rates = self.kappa.iter().copied().chain([
            self.relaxation.eg,
            self.relaxation.fe,
            self.relaxation.fg,
            self.dephasing.e,
            self.dephasing.f,
        ]);
        for r in rates {
            if !(r >= 0.0) {
                return Err(HamiltonianError::Params(format!("decay rates must be non-negative, got {r}")));
            }
        }
        Ok(())
    }

    pub fn derived(&self) -> DerivedCouplings {
        DerivedCouplings::from_params(self)
    }

    /// Pair detuning seen by resonator `mode` (numbered from 1).
    pub fn mode_detuning(&self, mode: usize) -> f64 {
        self.delta_pair[(mode - 1) / 2]
    }

    /// Multiply every coupling and detuning by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        let mut p = self.clone();
        p.g.iter_mut().for_each(|g| *g *= s);
        p.delta_pair.iter_mut().for_each(|d| *d *= s);
        p.mode_freqs = matched_mode_frequencies(&p.qutrit_freqs, &p.delta_pair);
        p
    }

    /// Same couplings, with detunings set so every λ keeps its default
    /// magnitude-to-sign pattern but g/|Δ| equals `ratio`.
    pub fn with_dispersive_ratio(&self, ratio: f64) -> Self {
        let mut p = self.clone();
        for (j, d) in p.delta_pair.iter_mut().enumerate() {
            *d = d.signum() * self.g[2 * j] / ratio;
        }
        p.mode_freqs = matched_mode_frequencies(&p.qutrit_freqs, &p.delta_pair);
        p
    }
}

/// Drive Rabi frequency Ω/2π used by [`SystemParams::defaults`], in MHz.
pub const DEFAULT_DRIVE_MHZ: f64 = 250.0;

/// Second-order couplings obtained after eliminating the |f⟩ level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedCouplings {
    /// Stark coefficients λ_j = g_j² / (2Δ) per resonator.
    pub lambda_j: Vec<f64>,
    /// Raman coefficients λ_{(2j−1)(2j)} = g_{2j−1} g_{2j} / (2Δ) per pair.
    pub lambda_pair: Vec<f64>,
    /// Swap rate |λ₁₂|.
    pub lambda: f64,
    /// Swap time π / (2λ).
    pub t_swap: f64,
    /// Drive phase Ω π / (2λ) accumulated over one swap.
    pub phi0: f64,
}

impl DerivedCouplings {
    pub fn from_params(p: &SystemParams) -> Self {
        let lambda_j: Vec<f64> =
            p.g.iter().enumerate().map(|(j, g)| g * g / (2.0 * p.delta_pair[j / 2])).collect();
        let lambda_pair: Vec<f64> =
            p.delta_pair.iter().enumerate().map(|(j, d)| p.g[2 * j] * p.g[2 * j + 1] / (2.0 * d)).collect();
        let lambda = lambda_pair[0].abs();
        Self { lambda_j, lambda_pair, lambda, t_swap: PI / (2.0 * lambda), phi0: p.omega_drive * PI / (2.0 * lambda) }
    }
}
