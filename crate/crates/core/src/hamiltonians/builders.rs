use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use super::{validate_conditions, Coefficient, HamiltonianError, SystemParams, TimeDependentH};
use crate::hilbert::{annihilation, creation, number, qutrit_op, HilbertError, HilbertLayout, Level, SparseOperator};

fn real(x: f64) -> C64 {
    C64::new(x, 0.0)
}

fn check_layout(p: &SystemParams, layout: &HilbertLayout, need_qutrit: bool) -> Result<(), HamiltonianError> {
    p.validate()?;
    if need_qutrit && !layout.has_qutrit() {
        return Err(HilbertError::NoQutrit.into());
    }
    if layout.n_modes() != 2 * p.n_pairs {
        return Err(HamiltonianError::Params(format!(
            "{} pairs need {} modes, layout has {}",
            p.n_pairs,
            2 * p.n_pairs,
            layout.n_modes()
        )));
    }
    Ok(())
}

fn sum(layout: &HilbertLayout, ops: impl IntoIterator<Item = SparseOperator>) -> Result<SparseOperator, HilbertError> {
    ops.into_iter().try_fold(SparseOperator::zero(layout), |acc, op| acc.add(&op))
}

/// σ_x = |e⟩⟨g| + |g⟩⟨e| on the qutrit.
fn sigma_x_eg(layout: &HilbertLayout) -> Result<SparseOperator, HilbertError> {
    qutrit_op(Level::E, Level::G, layout)?.add(&qutrit_op(Level::G, Level::E, layout)?)
}

/// a_{2j−1} a†_{2j} + h.c. for pair `j` (numbered from 1).
fn pair_hop(j: usize, layout: &HilbertLayout) -> Result<SparseOperator, HilbertError> {
    let hop = annihilation(2 * j - 1, layout)?.mul(&creation(2 * j, layout)?)?;
    hop.add(&hop.adjoint())
}

/// Which description of the qutrit-mediated coupling to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HamiltonianChoice {
    /// Explicit |f⟩-level couplings with their detuning phases.
    Full,
    /// Static dispersive Hamiltonian with |f⟩ eliminated.
    Effective,
}

/// Σ_j g e^{iΔt} (a_{2j−1} σ⁺_fg + a_{2j} σ⁺_fe) + Ω σ⁺_eg + h.c.
pub fn build_full_h(p: &SystemParams, layout: &HilbertLayout) -> Result<TimeDependentH, HamiltonianError> {
    check_layout(p, layout, true)?;
    let mut h = TimeDependentH::new(layout);
    let up_fg = qutrit_op(Level::F, Level::G, layout)?;
    let up_fe = qutrit_op(Level::F, Level::E, layout)?;
    for j in 1..=p.n_pairs {
        let delta = p.delta_pair[j - 1];
        let (m1, m2) = (2 * j - 1, 2 * j);
        let t1 = annihilation(m1, layout)?.mul(&up_fg)?;
        let t2 = annihilation(m2, layout)?.mul(&up_fe)?;
        h.push(t1, Coefficient::Oscillating { amplitude: real(p.g[m1 - 1]), frequency: delta }, true)?;
        h.push(t2, Coefficient::Oscillating { amplitude: real(p.g[m2 - 1]), frequency: delta }, true)?;
    }
    h.push(qutrit_op(Level::E, Level::G, layout)?, Coefficient::Constant(real(p.omega_drive)), true)?;
    Ok(h)
}

/// Dispersive Hamiltonian after eliminating |f⟩:
/// Σ_j [−2λ_{2j−1} n_{2j−1} σ_gg − 2λ_{2j} n_{2j} σ_ee
///      − 2λ_pair (a_{2j−1} a†_{2j} σ⁺_eg + h.c.)] + Ω σ_x.
pub fn build_effective_h(p: &SystemParams, layout: &HilbertLayout) -> Result<SparseOperator, HamiltonianError> {
    check_layout(p, layout, true)?;
    let d = p.derived();
    let sgg = qutrit_op(Level::G, Level::G, layout)?;
    let see = qutrit_op(Level::E, Level::E, layout)?;
    let up_eg = qutrit_op(Level::E, Level::G, layout)?;
    let mut ops = Vec::new();
    for j in 1..=p.n_pairs {
        let (m1, m2) = (2 * j - 1, 2 * j);
        ops.push(number(m1, layout)?.mul(&sgg)?.scale_real(-2.0 * d.lambda_j[m1 - 1]));
        ops.push(number(m2, layout)?.mul(&see)?.scale_real(-2.0 * d.lambda_j[m2 - 1]));
        let raman = annihilation(m1, layout)?.mul(&creation(m2, layout)?)?.mul(&up_eg)?;
        ops.push(raman.add(&raman.adjoint())?.scale_real(-2.0 * d.lambda_pair[j - 1]));
    }
    ops.push(sigma_x_eg(layout)?.scale_real(p.omega_drive));
    Ok(sum(layout, ops)?)
}

/// Secular part of the dispersive Hamiltonian in the dressed basis |±⟩:
/// −Σ λ_j n_j P + [Ω − Σ_j λ_pair (a_{2j−1} a†_{2j} + h.c.)] σ_x,
/// with P = σ_gg + σ_ee. Terms rotating at 2Ω are dropped.
pub fn build_dressed_rwa(p: &SystemParams, layout: &HilbertLayout) -> Result<SparseOperator, HamiltonianError> {
    check_layout(p, layout, true)?;
    let d = p.derived();
    let sx = sigma_x_eg(layout)?;
    let p_ge = qutrit_op(Level::G, Level::G, layout)?.add(&qutrit_op(Level::E, Level::E, layout)?)?;
    let mut ops = Vec::new();
    for m in 1..=2 * p.n_pairs {
        ops.push(number(m, layout)?.mul(&p_ge)?.scale_real(-d.lambda_j[m - 1]));
    }
    let mut exchange = SparseOperator::zero(layout);
    for j in 1..=p.n_pairs {
        exchange = exchange.add(&pair_hop(j, layout)?.scale_real(-d.lambda_pair[j - 1]))?;
    }
    ops.push(exchange.mul(&sx)?);
    ops.push(sx.scale_real(p.omega_drive));
    Ok(sum(layout, ops)?)
}

/// Free part of the dressed-frame Hamiltonian: −Σ λ_j n_j + Ω σ_x.
pub fn build_h0(p: &SystemParams, layout: &HilbertLayout) -> Result<SparseOperator, HamiltonianError> {
    check_layout(p, layout, true)?;
    let d = p.derived();
    let mut ops = Vec::new();
    for m in 1..=2 * p.n_pairs {
        ops.push(number(m, layout)?.scale_real(-d.lambda_j[m - 1]));
    }
    ops.push(sigma_x_eg(layout)?.scale_real(p.omega_drive));
    Ok(sum(layout, ops)?)
}

/// Exchange Hamiltonian of pair `j` alone: −λ_pair (a†_{2j−1} a_{2j} + h.c.).
/// `layout` may or may not contain the qutrit.
pub fn build_pair_he(p: &SystemParams, layout: &HilbertLayout, j: usize) -> Result<SparseOperator, HamiltonianError> {
    check_layout(p, layout, false)?;
    if j == 0 || j > p.n_pairs {
        return Err(HamiltonianError::Params(format!("pair {j} out of range 1..={}", p.n_pairs)));
    }
    Ok(pair_hop(j, layout)?.scale_real(-p.derived().lambda_pair[j - 1]))
}

/// Σ_j of the pair exchange Hamiltonians. With matched couplings this is
/// −λ(a†₁a₂ + h.c.) + λ Σ_{j≥2} (a†_{2j−1}a_{2j} + h.c.). Fails when the
/// matching conditions do not hold.
pub fn build_he(p: &SystemParams, layout: &HilbertLayout) -> Result<SparseOperator, HamiltonianError> {
    check_layout(p, layout, false)?;
    let report = validate_conditions(p);
    if !report.all_passed() {
        return Err(HamiltonianError::Conditions(report.failure_summary()));
    }
    let parts = (1..=p.n_pairs).map(|j| build_pair_he(p, layout, j)).collect::<Result<Vec<_>, _>>()?;
    Ok(sum(layout, parts)?)
}

/// H₀ + H_e. The two commute under the matching conditions, so evolving
/// under their sum is the same as applying e^{−iH₀t} e^{−iH_e t}.
pub fn build_ideal_h(p: &SystemParams, layout: &HilbertLayout) -> Result<SparseOperator, HamiltonianError> {
    Ok(build_h0(p, layout)?.add(&build_he(p, layout)?)?)
}

/// Σ_{j<l} g_cr a_j a†_l e^{i(ω_l − ω_j)t} + h.c.
pub fn build_crosstalk(p: &SystemParams, layout: &HilbertLayout) -> Result<TimeDependentH, HamiltonianError> {
    check_layout(p, layout, false)?;
    let mut h = TimeDependentH::new(layout);
    if p.crosstalk == 0.0 {
        return Ok(h);
    }
    let m = 2 * p.n_pairs;
    for j in 1..=m {
        for l in j + 1..=m {
            let op = annihilation(j, layout)?.mul(&creation(l, layout)?)?;
            let w = p.mode_freqs[l - 1] - p.mode_freqs[j - 1];
            h.push(op, Coefficient::Oscillating { amplitude: real(p.crosstalk), frequency: w }, true)?;
        }
    }
    Ok(h)
}

/// Stray drive on the |e⟩ ↔ |f⟩ transition: Ω_fe e^{iΔ_p t} σ⁺_fe + h.c.
pub fn build_leak(p: &SystemParams, layout: &HilbertLayout) -> Result<TimeDependentH, HamiltonianError> {
    check_layout(p, layout, true)?;
    let mut h = TimeDependentH::new(layout);
    if p.leak.omega_fe != 0.0 {
        h.push(
            qutrit_op(Level::F, Level::E, layout)?,
            Coefficient::Oscillating { amplitude: real(p.leak.omega_fe), frequency: p.leak.delta_p },
            true,
        )?;
    }
    Ok(h)
}

/// Perturbative |f⟩ population from the stray drive, (Ω_fe/Δ_p)².
pub fn leakage_estimate(p: &SystemParams) -> f64 {
    (p.leak.omega_fe / p.leak.delta_p).powi(2)
}

/// Protocol Hamiltonian plus crosstalk and pulse leakage.
pub fn build_open_system_h(
    p: &SystemParams,
    layout: &HilbertLayout,
    choice: HamiltonianChoice,
) -> Result<TimeDependentH, HamiltonianError> {
    let mut h = match choice {
        HamiltonianChoice::Full => build_full_h(p, layout)?,
        HamiltonianChoice::Effective => TimeDependentH::from_static(build_effective_h(p, layout)?),
    };
    h.extend(build_crosstalk(p, layout)?)?;
    h.extend(build_leak(p, layout)?)?;
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{parity, DenseMatrix, QuantumState};
    use nalgebra::SymmetricEigen;
    use std::f64::consts::TAU;

    const MHZ: f64 = TAU * 1e6;

    fn setup(n: usize, d: usize) -> (SystemParams, HilbertLayout) {
        (SystemParams::defaults(n), HilbertLayout::uniform(n, d).unwrap())
    }

    fn is_zero(op: &SparseOperator, tol: f64) -> bool {
        op.values().iter().all(|v| v.norm() < tol)
    }

    fn real_eigenvalues(op: &SparseOperator) -> Vec<f64> {
        let m: DenseMatrix = op.to_dense();
        let mut e: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
        e.sort_by(|a, b| a.partial_cmp(b).unwrap());
        e
    }

    #[test]
    fn full_h_hermitian_at_random_times() {
        let (p, layout) = setup(2, 3);
        let h = build_full_h(&p, &layout).unwrap();
        let t_swap = p.derived().t_swap;
        for k in 0..100 {
            let t = t_swap * ((k as f64 * 0.618_033_988_7) % 1.0);
            let op = h.eval(t);
            let scale = op.values().iter().map(|v| v.norm()).fold(0.0, f64::max);
            assert!(op.max_hermitian_deviation() < 1e-12 * scale);
        }
    }

    #[test]
    fn full_h_matrix_elements() {
        let (p, layout) = setup(1, 3);
        let h = build_full_h(&p, &layout).unwrap();
        let t = 1.3e-9;
        let op = h.eval(t);
        // ⟨f,0,0| H |g,1,0⟩ = g e^{iΔt}
        let row = layout.index_of(&[2, 0, 0]);
        let col = layout.index_of(&[0, 1, 0]);
        let want = C64::from_polar(p.g[0], p.delta_pair[0] * t);
        assert!((op.get(row, col) - want).norm() < 1e-6 * p.g[0]);
        // ⟨f,0,0| H |e,0,1⟩ = g e^{iΔt}
        let col = layout.index_of(&[1, 0, 1]);
        assert!((op.get(row, col) - want).norm() < 1e-6 * p.g[0]);
        // ⟨e| H |g⟩ = Ω
        let (r, c) = (layout.index_of(&[1, 0, 0]), layout.index_of(&[0, 0, 0]));
        assert!((op.get(r, c).re - p.omega_drive).abs() < 1e-9 * p.omega_drive);
    }

    #[test]
    fn zero_couplings_give_drive_only() {
        let (mut p, layout) = setup(1, 3);
        p.g.iter_mut().for_each(|g| *g = 0.0);
        p.omega_drive = 0.0;
        assert!(build_full_h(&p, &layout).unwrap().eval(0.4).is_zero());
        p.crosstalk = 0.0;
        assert!(build_crosstalk(&p, &layout).unwrap().terms().is_empty());
    }

    #[test]
    fn effective_two_level_block() {
        let (p, layout) = setup(1, 3);
        let h = build_effective_h(&p, &layout).unwrap();
        let d = p.derived();
        let a = layout.index_of(&[0, 1, 0]);
        let b = layout.index_of(&[1, 0, 1]);
        let tol = 1e-9 * d.lambda;
        assert!((h.get(a, a).re + 2.0 * d.lambda_j[0]).abs() < tol);
        assert!((h.get(b, b).re + 2.0 * d.lambda_j[1]).abs() < tol);
        assert!((h.get(b, a).re + 2.0 * d.lambda_pair[0]).abs() < tol);
        assert!((h.get(a, b).re + 2.0 * d.lambda_pair[0]).abs() < tol);
        assert!(h.is_hermitian());
    }

    #[test]
    fn effective_conserves_pair_charges_without_drive() {
        let (mut p, layout) = setup(1, 4);
        p.omega_drive = 0.0;
        let h = build_effective_h(&p, &layout).unwrap();
        let n1 = number(1, &layout).unwrap();
        let n2 = number(2, &layout).unwrap();
        let see = qutrit_op(Level::E, Level::E, &layout).unwrap();
        let sff = qutrit_op(Level::F, Level::F, &layout).unwrap();
        let total = n1.add(&n2).unwrap().add(&sff).unwrap();
        let imbalance = n1.sub(&n2).unwrap().add(&see.scale_real(2.0)).unwrap().add(&sff).unwrap();
        let tol = 1e-6 * p.derived().lambda;
        assert!(is_zero(&h.commutator(&total).unwrap(), tol));
        assert!(is_zero(&h.commutator(&imbalance).unwrap(), tol));
        // The Raman term moves |g⟩ to |e⟩, so σ_ee alone is not conserved.
        assert!(!is_zero(&h.commutator(&see).unwrap(), tol));
    }

    #[test]
    fn full_h_conserves_pair_charge_without_drive() {
        let (mut p, layout) = setup(1, 3);
        p.omega_drive = 0.0;
        let h = build_full_h(&p, &layout).unwrap().eval(2.1e-9);
        let q = number(1, &layout)
            .unwrap()
            .add(&number(2, &layout).unwrap())
            .unwrap()
            .add(&qutrit_op(Level::F, Level::F, &layout).unwrap())
            .unwrap();
        assert!(is_zero(&h.commutator(&q).unwrap(), 1e-6 * p.g[0]));
    }

    #[test]
    fn pair_exchange_operators_commute() {
        let (p, layout) = setup(3, 3);
        let cav = layout.cavity_layout().unwrap();
        let hs: Vec<_> = (1..=3).map(|j| build_pair_he(&p, &cav, j).unwrap()).collect();
        let tol = 1e-6 * p.derived().lambda;
        for j in 1..3 {
            assert!(is_zero(&hs[0].commutator(&hs[j]).unwrap(), tol));
        }
        let he = build_he(&p, &cav).unwrap();
        for j in 1..=3 {
            let pair_n = number(2 * j - 1, &cav).unwrap().add(&number(2 * j, &cav).unwrap()).unwrap();
            assert!(is_zero(&he.commutator(&pair_n).unwrap(), tol));
            let pair_parity = parity(2 * j - 1, &cav).unwrap().mul(&parity(2 * j, &cav).unwrap()).unwrap();
            assert!(is_zero(&he.commutator(&pair_parity).unwrap(), tol));
        }
    }

    #[test]
    fn exchange_signs_and_vacuum() {
        let (p, layout) = setup(2, 3);
        let cav = layout.cavity_layout().unwrap();
        let lam = p.derived().lambda;
        let h1 = build_pair_he(&p, &cav, 1).unwrap();
        let h2 = build_pair_he(&p, &cav, 2).unwrap();
        let (a, b) = (cav.index_of(&[1, 0, 0, 0]), cav.index_of(&[0, 1, 0, 0]));
        assert!((h1.get(a, b).re + lam).abs() < 1e-9 * lam);
        let (a, b) = (cav.index_of(&[0, 0, 1, 0]), cav.index_of(&[0, 0, 0, 1]));
        assert!((h2.get(a, b).re - lam).abs() < 1e-9 * lam);

        let he = build_he(&p, &cav).unwrap();
        let vac = QuantumState::basis(cav.clone(), &[0, 0, 0, 0]).unwrap();
        assert!(he.apply(vac.amplitudes().unwrap()).iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn he_refuses_mismatched_couplings() {
        let (mut p, layout) = setup(1, 3);
        p.g[1] *= 1.1;
        assert!(matches!(build_he(&p, &layout), Err(HamiltonianError::Conditions(_))));
    }

    #[test]
    fn h0_spectrum() {
        let (p, layout) = setup(1, 3);
        let h0 = build_h0(&p, &layout).unwrap();
        let lam = p.derived().lambda;
        let mut want = Vec::new();
        for n1 in 0..3 {
            for n2 in 0..3 {
                let n = (n1 + n2) as f64;
                for s in [p.omega_drive, -p.omega_drive, 0.0] {
                    want.push(-lam * n + s);
                }
            }
        }
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let got = real_eigenvalues(&h0);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-6 * p.omega_drive, "{g} vs {w}");
        }
    }

    #[test]
    fn h0_vanishes_without_drive_or_couplings() {
        let (mut p, layout) = setup(1, 3);
        p.omega_drive = 0.0;
        p.g.iter_mut().for_each(|g| *g = 0.0);
        assert!(build_h0(&p, &layout).unwrap().is_zero());
    }

    #[test]
    fn ideal_h_commutes_with_frame_and_pair_numbers() {
        let (p, layout) = setup(2, 3);
        let h0 = build_h0(&p, &layout).unwrap();
        let he = build_he(&p, &layout).unwrap();
        let tol = 1e-6 * p.derived().lambda;
        assert!(is_zero(&h0.commutator(&he).unwrap(), tol));
        for j in 1..=2 {
            let pair_n = number(2 * j - 1, &layout).unwrap().add(&number(2 * j, &layout).unwrap()).unwrap();
            assert!(is_zero(&h0.commutator(&pair_n).unwrap(), tol));
        }
        let ideal = build_ideal_h(&p, &layout).unwrap();
        assert!(is_zero(&ideal.sub(&h0.add(&he).unwrap()).unwrap(), tol));
    }

    #[test]
    fn leak_is_diagonal_in_modes() {
        let (p, layout) = setup(1, 3);
        let op = build_leak(&p, &layout).unwrap().eval(0.7e-9);
        assert!(op.nnz() > 0);
        for (r, c, _) in op.triplets() {
            assert_eq!(layout.digits(r)[1..], layout.digits(c)[1..]);
        }
        let mut q = p.clone();
        q.leak.omega_fe = 0.0;
        assert!(build_leak(&q, &layout).unwrap().eval(0.3).is_zero());
    }

    #[test]
    fn dressed_rwa_is_secular_part_of_effective() {
        // Average U₀† H U₀ over one drive period, U₀ = exp(−iΩσ_x t): only
        // terms that commute with σ_x survive.
        let (p, layout) = setup(1, 3);
        let heff = build_effective_h(&p, &layout).unwrap().to_dense();
        let sx = sigma_x_eg(&layout).unwrap().to_dense();
        let dim = layout.dim();
        let eig = SymmetricEigen::new(sx.clone());
        let period = TAU / (2.0 * p.omega_drive);
        let samples = 64;
        let mut avg = DenseMatrix::zeros(dim, dim);
        for k in 0..samples {
            let t = period * k as f64 / samples as f64;
            let phases = eig.eigenvalues.map(|e| C64::from_polar(1.0, -p.omega_drive * e * t));
            let u = &eig.eigenvectors * DenseMatrix::from_diagonal(&phases) * eig.eigenvectors.adjoint();
            avg += u.adjoint() * &heff * &u;
        }
        avg /= C64::new(samples as f64, 0.0);
        let rwa = build_dressed_rwa(&p, &layout).unwrap().to_dense();
        let err = (&avg - &rwa).iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert!(err < 1e-6 * p.derived().lambda, "{err}");
    }

    #[test]
    fn crosstalk_term_count() {
        let (p, layout) = setup(3, 2);
        let h = build_crosstalk(&p, &layout).unwrap();
        assert_eq!(h.terms().len(), 15);
        assert!(h.terms().iter().all(|t| t.plus_hc));
        let op = h.eval(3.3e-9);
        assert!(op.max_hermitian_deviation() < 1e-9 * p.crosstalk);
    }

    #[test]
    fn leakage_estimate_default() {
        let p = SystemParams::defaults(1);
        let want = (47.0f64 / 2500.0).powi(2);
        assert!((leakage_estimate(&p) - want).abs() < 1e-12);
        assert!((want - 3.5e-4).abs() < 1e-5);
    }

    #[test]
    fn effective_scales_with_couplings() {
        let (p, layout) = setup(1, 3);
        let mut q = p.scaled(2.0);
        q.omega_drive = 2.0 * p.omega_drive;
        let a = build_effective_h(&p, &layout).unwrap();
        let b = build_effective_h(&q, &layout).unwrap();
        let diff = b.sub(&a.scale_real(2.0)).unwrap();
        assert!(is_zero(&diff, 1e-6 * MHZ));
    }

    #[test]
    fn open_system_h_combines_parts() {
        let (p, layout) = setup(1, 3);
        let h = build_open_system_h(&p, &layout, HamiltonianChoice::Effective).unwrap();
        assert_eq!(h.terms().len(), 1 + 1 + 1);
        let h = build_open_system_h(&p, &layout, HamiltonianChoice::Full).unwrap();
        assert_eq!(h.terms().len(), 3 + 1 + 1);
        assert!(build_open_system_h(&p, &HilbertLayout::uniform(2, 3).unwrap(), HamiltonianChoice::Full).is_err());
    }
}
