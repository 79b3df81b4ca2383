use std::fmt;

use serde::{Deserialize, Serialize};

use super::SystemParams;

/// Relative residual below which a matching condition counts as satisfied.
pub const CONDITION_TOLERANCE: f64 = 1e-9;

/// Regime warnings fire when a ratio drops below this factor.
const REGIME_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    /// λ_{2j−1} = λ_{2j}: the two Stark shifts of a pair cancel in the dressed frame.
    PairStarkBalance,
    /// λ_{12} = λ and λ_{(2j−1)(2j)} = −λ for j ≥ 2.
    MatchedSwapRates,
    /// g₁g₂/Δ₁₂ = −g_{2j−1}g_{2j}/Δ_j for j ≥ 2.
    CouplingRatio,
    /// ω_fg − ω_{2j−1} = ω_fe − ω_{2j} = Δ_j.
    FrequencyMatching,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Condition::PairStarkBalance => "pair Stark balance",
            Condition::MatchedSwapRates => "matched swap rates",
            Condition::CouplingRatio => "coupling ratio",
            Condition::FrequencyMatching => "frequency matching",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionCheck {
    pub condition: Condition,
    /// Pair number, from 1.
    pub pair: usize,
    /// Absolute residual in the units of the compared quantity.
    pub residual: f64,
    pub relative: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub checks: Vec<ConditionCheck>,
    pub warnings: Vec<String>,
}

impl ConditionReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ConditionCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }

    /// First failing check of the given kind.
    pub fn find(&self, condition: Condition, pair: usize) -> Option<&ConditionCheck> {
        self.checks.iter().find(|c| c.condition == condition && c.pair == pair)
    }

    pub fn failure_summary(&self) -> String {
        self.failures()
            .map(|c| format!("{} on pair {} (relative residual {:.3e})", c.condition, c.pair, c.relative))
            .collect::<Vec<_>>()
            .join("; ")
    }
}

fn check(condition: Condition, pair: usize, residual: f64, scale: f64) -> ConditionCheck {
    let relative = if scale == 0.0 { residual } else { residual / scale.abs() };
    ConditionCheck { condition, pair, residual, relative, passed: relative <= CONDITION_TOLERANCE }
}

/// Evaluate every matching condition and flag operating-regime concerns.
/// Assumes `p` passes [`SystemParams::validate`].
pub fn validate_conditions(p: &SystemParams) -> ConditionReport {
    let d = p.derived();
    let lam = d.lambda;
    let mut checks = Vec::new();
    let ref_ratio = p.g[0] * p.g[1] / p.delta_pair[0];
    for j in 1..=p.n_pairs {
        let (a, b) = (2 * j - 2, 2 * j - 1);
        checks.push(check(
            Condition::PairStarkBalance,
            j,
            (d.lambda_j[b] - d.lambda_j[a]).abs(),
            d.lambda_j[a],
        ));
        let want = if j == 1 { lam } else { -lam };
        checks.push(check(Condition::MatchedSwapRates, j, (d.lambda_pair[j - 1] - want).abs(), lam));
        if j > 1 {
            let ratio = p.g[a] * p.g[b] / p.delta_pair[j - 1];
            checks.push(check(Condition::CouplingRatio, j, (ref_ratio + ratio).abs(), ref_ratio));
        }
        let delta = p.delta_pair[j - 1];
        let mismatch = ((p.qutrit_freqs.fg - p.mode_freqs[a]) - delta)
            .abs()
            .max(((p.qutrit_freqs.fe - p.mode_freqs[b]) - delta).abs());
        checks.push(check(Condition::FrequencyMatching, j, mismatch, delta));
    }

    let mut warnings = Vec::new();
    for j in 1..=p.n_pairs {
        let g = p.g[2 * j - 2].abs().max(p.g[2 * j - 1].abs());
        let delta = p.delta_pair[j - 1].abs();
        if delta < REGIME_FACTOR * g {
            warnings.push(format!(
                "pair {j}: |Δ|/g = {:.2} is below {REGIME_FACTOR}; the dispersive elimination of |f⟩ is not accurate",
                delta / g
            ));
        }
    }
    for j in 1..=p.n_pairs {
        let delta = p.delta_pair[j - 1].abs();
        if REGIME_FACTOR * p.omega_drive.abs() > delta {
            warnings.push(format!(
                "pair {j}: Ω/|Δ| = {:.2} exceeds {}; the drive moves the virtual |f⟩ detunings to Δ ± Ω",
                p.omega_drive.abs() / delta,
                1.0 / REGIME_FACTOR
            ));
        }
    }
    let lam_max = d.lambda_j.iter().chain(&d.lambda_pair).map(|l| l.abs()).fold(0.0, f64::max);
    if 2.0 * p.omega_drive.abs() < REGIME_FACTOR * lam_max {
        warnings.push(format!(
            "2Ω/λ = {:.2} is below {REGIME_FACTOR}; the dressed-state rotating-wave approximation is not accurate",
            2.0 * p.omega_drive.abs() / lam_max
        ));
    }
    ConditionReport { checks, warnings }
}
