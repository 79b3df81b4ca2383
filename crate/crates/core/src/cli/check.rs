//! Self-checks behind `catw check`.

use std::f64::consts::FRAC_PI_2;

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{heisenberg_swap_check, Probe};
use crate::dynamics::{evolve, CollapseSet, Method, SolverConfig};
use crate::hamiltonians::{
    build_crosstalk, build_dressed_rwa, build_effective_h, build_full_h, build_h0, build_ideal_h, build_leak,
    build_open_system_h, build_pair_he, validate_conditions, HamiltonianChoice, SystemParams, TimeDependentH,
};
use crate::hilbert::{number, parity, HilbertLayout, SparseOperator};
use crate::states::{cat_state, default_cutoff, ideal_target, initial_state, CatParams, Parity, TargetModes, WStateSpec};

use super::CliError;

/// Relative tolerance for identities that hold exactly up to rounding.
const EXACT: f64 = 1e-12;
const SWAP_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckItem {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub items: Vec<CheckItem>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.items.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckItem> {
        self.items.iter().filter(|c| !c.passed)
    }

    fn push(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.items.push(CheckItem { name: name.into(), passed, detail: detail.into() });
    }

    fn push_result(&mut self, name: &str, r: Result<(bool, String), CliError>) {
        match r {
            Ok((passed, detail)) => self.push(name, passed, detail),
            Err(e) => self.push(name, false, e.to_string()),
        }
    }
}

fn max_abs(op: &SparseOperator) -> f64 {
    op.values().iter().map(|v| v.norm()).fold(0.0, f64::max)
}

/// Largest |[a, b]| entry relative to |a|·|b|.
fn relative_commutator(a: &SparseOperator, b: &SparseOperator) -> Result<f64, CliError> {
    let c = a.commutator(b).map_err(|e| CliError::Verification(e.to_string()))?;
    let scale = max_abs(a) * max_abs(b);
    Ok(if scale == 0.0 { 0.0 } else { max_abs(&c) / scale })
}

fn hermiticity(p: &SystemParams, layout: &HilbertLayout, times: usize) -> Result<(bool, String), CliError> {
    let statics: Vec<(&str, SparseOperator)> = vec![
        ("effective", build_effective_h(p, layout)?),
        ("dressed", build_dressed_rwa(p, layout)?),
        ("H0", build_h0(p, layout)?),
        ("ideal", build_ideal_h(p, layout)?),
    ];
    let dynamic: Vec<(&str, TimeDependentH)> = vec![
        ("full", build_full_h(p, layout)?),
        ("crosstalk", build_crosstalk(p, layout)?),
        ("leak", build_leak(p, layout)?),
        ("full open", build_open_system_h(p, layout, HamiltonianChoice::Full)?),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let t_max = 2.0 * p.derived().t_swap;
    let ts: Vec<f64> = (0..times).map(|_| rng.gen_range(0.0..t_max)).collect();
    let mut worst: (f64, String) = (0.0, String::new());
    let mut note = |name: &str, op: &SparseOperator| {
        let scale = max_abs(op);
        let dev = if scale == 0.0 { 0.0 } else { op.max_hermitian_deviation() / scale };
        if dev >= worst.0 {
            worst = (dev, name.to_string());
        }
    };
    for (name, op) in &statics {
        note(name, op);
    }
    for (name, h) in &dynamic {
        for &t in &ts {
            note(name, &h.eval(t));
        }
    }
    Ok((worst.0 < EXACT, format!("worst relative deviation {:.2e} ({}) over {times} times", worst.0, worst.1)))
}

fn pair_commutators(p: &SystemParams, layout: &HilbertLayout) -> Result<(bool, String, bool, String), CliError> {
    let n = p.n_pairs;
    let he: Vec<SparseOperator> = (1..=n).map(|j| build_pair_he(p, layout, j)).collect::<Result<_, _>>()?;
    let mut cross: f64 = 0.0;
    for j in 0..n {
        for l in j + 1..n {
            cross = cross.max(relative_commutator(&he[j], &he[l])?);
        }
    }
    let mut conserved: f64 = 0.0;
    let hv = |e: crate::hilbert::HilbertError| CliError::Verification(e.to_string());
    for j in 1..=n {
        let (a, b) = (2 * j - 1, 2 * j);
        let pair_n = number(a, layout).map_err(hv)?.add(&number(b, layout).map_err(hv)?).map_err(hv)?;
        let pair_p = parity(a, layout).map_err(hv)?.mul(&parity(b, layout).map_err(hv)?).map_err(hv)?;
        conserved = conserved.max(relative_commutator(&he[j - 1], &pair_n)?);
        conserved = conserved.max(relative_commutator(&he[j - 1], &pair_p)?);
    }
    Ok((
        cross < EXACT,
        format!("largest relative [H_e,j, H_e,l] {cross:.2e}"),
        conserved < EXACT,
        format!("largest relative commutator with pair number or parity {conserved:.2e}"),
    ))
}

fn cat_orthogonality() -> Result<(bool, String), CliError> {
    let mut worst: f64 = 0.0;
    for alpha in [0.3, 0.5, 1.0, 2.0] {
        let a = C64::new(alpha, 0.0);
        let cutoff = default_cutoff(a, 1e-12);
        let even = cat_state(&CatParams::new(a, Parity::Even)?, cutoff, 1e-10)?;
        let odd = cat_state(&CatParams::new(a, Parity::Odd)?, cutoff, 1e-10)?;
        let overlap = even.inner(&odd).map_err(|e| CliError::Verification(e.to_string()))?.norm();
        worst = worst.max(overlap).max((even.norm() - 1.0).abs()).max((odd.norm() - 1.0).abs());
    }
    Ok((worst < EXACT, format!("largest |⟨C+|C−⟩| or norm error {worst:.2e} for α in {{0.3, 0.5, 1, 2}}")))
}

/// One pair, d = 3, every rate raised a thousandfold so the channels matter
/// within a fraction of T.
fn boosted_pair(p: &SystemParams) -> SystemParams {
    let mut q = p.clone();
    q.n_pairs = 1;
    q.g.truncate(2);
    q.delta_pair.truncate(1);
    q.mode_freqs.truncate(2);
    q.kappa.truncate(2);
    q.kappa.iter_mut().for_each(|k| *k *= 1e3);
    q.relaxation.eg *= 1e3;
    q.relaxation.fe *= 1e3;
    q.relaxation.fg *= 1e3;
    q.dephasing.e *= 1e3;
    q.dephasing.f *= 1e3;
    q
}

fn boosted_setup(p: &SystemParams) -> Result<(TimeDependentH, CollapseSet, crate::hilbert::QuantumState, Probe), CliError> {
    let q = boosted_pair(p);
    let layout = HilbertLayout::uniform(1, 3).map_err(|e| CliError::Config(e.to_string()))?;
    let h = build_open_system_h(&q, &layout, HamiltonianChoice::Effective)?;
    let c = CollapseSet::from_params(&q, &layout)?;
    let spec = WStateSpec::new(1, q.alpha, TargetModes::Odd).with_tail_tolerance(0.05);
    let psi = initial_state(&spec, &layout)?;
    let probe = Probe::new(&layout, q.derived().t_swap);
    Ok((h, c, psi, probe))
}

fn lindblad_health(p: &SystemParams) -> Result<(bool, String), CliError> {
    let (h, c, psi, probe) = boosted_setup(p)?;
    let t = p.derived().t_swap;
    let cfg = SolverConfig::new(Method::LindbladRk4, t / 400.0, 400).with_stride(20);
    let ev = evolve(&h, &c, &psi.to_density(), &cfg, &probe)?;
    let d = &ev.result.diagnostics;
    let ok = d.max_norm_drift < 1e-8 && d.max_hermitian_deviation < 1e-10 && !d.positivity_warning;
    Ok((
        ok,
        format!(
            "trace drift {:.2e}, Hermiticity {:.2e}, min eigenvalue {:.2e}",
            d.max_norm_drift,
            d.max_hermitian_deviation,
            d.min_eigenvalue.unwrap_or(f64::NAN)
        ),
    ))
}

fn determinism(p: &SystemParams) -> Result<(bool, String), CliError> {
    let (h, c, psi, probe) = boosted_setup(p)?;
    let t = p.derived().t_swap;
    let cfg = SolverConfig::new(Method::Trajectories, t / 200.0, 200).with_stride(20).with_trajectories(16, 11);
    let a = evolve(&h, &c, &psi, &cfg, &probe)?.result;
    let b = evolve(&h, &c, &psi, &cfg, &probe)?.result;
    let jumps = a.diagnostics.total_jumps.unwrap_or(0);
    Ok((a == b, format!("two trajectory runs with seed 11 agree bit for bit ({jumps} jumps)")))
}

/// Pair j of `p` on a bare two-mode layout, rotated through a quarter period.
fn swap_checks(p: &SystemParams, cutoff: usize) -> Result<(bool, String), CliError> {
    let lam = p.derived().lambda;
    let layout = HilbertLayout::modes(&[cutoff, cutoff]).map_err(|e| CliError::Config(e.to_string()))?;
    let mut worst: f64 = 0.0;
    let mut detail = Vec::new();
    for j in 1..=p.n_pairs.min(2) {
        let mut q = p.clone();
        q.n_pairs = 1;
        q.g = p.g[2 * j - 2..2 * j].to_vec();
        q.delta_pair = vec![p.delta_pair[j - 1]];
        q.mode_freqs = p.mode_freqs[2 * j - 2..2 * j].to_vec();
        q.kappa = p.kappa[2 * j - 2..2 * j].to_vec();
        let h = build_pair_he(&q, &layout, 1)?;
        // a†_{2j−1} → +i a†_{2j} for the first pair and −i a†_{2j} for the others.
        let sign = if j == 1 { 1.0 } else { -1.0 };
        let r = heisenberg_swap_check(&h, lam, FRAC_PI_2 / lam, sign).map_err(|e| CliError::Verification(e.to_string()))?;
        worst = worst.max(r.max_deviation);
        detail.push(format!("pair {j}: {:.2e}", r.max_deviation));
    }
    Ok((worst < SWAP_TOLERANCE, format!("d = {cutoff}, {}", detail.join(", "))))
}

fn ideal_transfer(p: &SystemParams) -> Result<(bool, String), CliError> {
    let mut q = SystemParams::ideal(p.n_pairs);
    q.g = p.g.clone();
    q.delta_pair = p.delta_pair.clone();
    q.mode_freqs = p.mode_freqs.clone();
    q.omega_drive = p.omega_drive;
    q.qutrit_freqs = p.qutrit_freqs;
    let layout = HilbertLayout::uniform(q.n_pairs, 4).map_err(|e| CliError::Config(e.to_string()))?;
    let h = TimeDependentH::from_static(build_ideal_h(&q, &layout)?);
    let spec = WStateSpec::new(q.n_pairs, q.alpha, TargetModes::Odd).with_tail_tolerance(0.05);
    let psi = initial_state(&spec, &layout)?;
    let target = ideal_target(&spec, &vec![0.0; q.n_pairs], &layout.cavity_layout().map_err(|e| CliError::Config(e.to_string()))?)?;
    let t = q.derived().t_swap;
    let probe = Probe::new(&layout, t).with_target(&target).map_err(|e| CliError::Verification(e.to_string()))?;
    let cfg = SolverConfig::new(Method::ClosedRk4, t / 1000.0, 1000).with_stride(500);
    let r = evolve(&h, &CollapseSet::new(&layout), &psi, &cfg, &probe)?.result;
    let f = r.fidelity_near(1.0).unwrap_or(0.0);
    Ok((f > 1.0 - 1e-6, format!("F(T) = {f:.10} at N = {}, d = 4", q.n_pairs)))
}

/// Run the self-checks on parameters `p`. The fast variant uses fewer
/// sample times and a two-pair system.
pub fn run_checks(p: &SystemParams, fast: bool) -> CheckReport {
    let mut report = CheckReport::default();
    let (n, times) = if fast { (p.n_pairs.min(2), 20) } else { (p.n_pairs, 100) };
    let p = shrink(p, n);

    let conditions = validate_conditions(&p);
    let detail = if conditions.all_passed() {
        format!("{} checks within relative {:.0e}", conditions.checks.len(), crate::hamiltonians::CONDITION_TOLERANCE)
    } else {
        conditions.failure_summary()
    };
    report.push("matching conditions", conditions.all_passed(), detail);

    match HilbertLayout::uniform(n, 3) {
        Ok(layout) => {
            report.push_result("Hamiltonians are Hermitian", hermiticity(&p, &layout, times));
            match pair_commutators(&p, &layout) {
                Ok((a, da, b, db)) => {
                    report.push("pair exchange terms commute", a, da);
                    report.push("pair number and parity conserved", b, db);
                }
                Err(e) => {
                    report.push("pair exchange terms commute", false, e.to_string());
                    report.push("pair number and parity conserved", false, e.to_string());
                }
            }
        }
        Err(e) => report.push("layout", false, e.to_string()),
    }
    report.push_result("cat states orthonormal", cat_orthogonality());
    report.push_result("Heisenberg swap at a quarter period", swap_checks(&p, 8));
    report.push_result("Lindblad trace and Hermiticity", lindblad_health(&p));
    report.push_result("trajectory determinism", determinism(&p));
    report.push_result("ideal transfer", ideal_transfer(&p));
    report
}

fn shrink(p: &SystemParams, n: usize) -> SystemParams {
    let mut q = p.clone();
    q.n_pairs = n;
    q.g.truncate(2 * n);
    q.delta_pair.truncate(n);
    q.mode_freqs.truncate(2 * n);
    q.kappa.truncate(2 * n);
    q
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_pass_fast_checks() {
        let r = run_checks(&SystemParams::defaults(3), true);
        for item in &r.items {
            assert!(item.passed, "{}: {}", item.name, item.detail);
        }
        assert_eq!(r.items.len(), 9);
    }

    #[test]
    fn lambda_mismatch_is_caught() {
        let mut p = SystemParams::defaults(2);
        p.g[3] *= 1.01;
        let r = run_checks(&p, true);
        let failed: Vec<&str> = r.failures().map(|c| c.name.as_str()).collect();
        assert!(failed.contains(&"matching conditions"), "{failed:?}");
        assert!(failed.contains(&"ideal transfer"), "{failed:?}");
    }

    #[test]
    fn wrong_swap_sign_is_caught() {
        let mut p = SystemParams::defaults(2);
        p.delta_pair[1] = -p.delta_pair[1];
        p.mode_freqs = crate::hamiltonians::matched_mode_frequencies(&p.qutrit_freqs, &p.delta_pair);
        let r = run_checks(&p, true);
        let swap = r.items.iter().find(|c| c.name.starts_with("Heisenberg")).unwrap();
        assert!(!swap.passed, "{}", swap.detail);
        assert!(!r.passed());
    }
}
