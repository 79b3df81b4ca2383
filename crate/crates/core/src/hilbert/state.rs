use num_complex::Complex64 as C64;

use super::{HilbertError, HilbertLayout, SparseOperator, Subsystem};

const ZERO: C64 = C64::new(0.0, 0.0);

/// Amplitudes of a pure state, or a row-major `D × D` density matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum StateData {
    Vector(Vec<C64>),
    Density(Vec<C64>),
}

/// A state on a composite layout.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantumState {
    layout: HilbertLayout,
    data: StateData,
}

impl QuantumState {
    pub fn vector(layout: HilbertLayout, amplitudes: Vec<C64>) -> Result<Self, HilbertError> {
        if amplitudes.len() != layout.dim() {
            return Err(HilbertError::DimensionMismatch { expected: layout.dim(), found: amplitudes.len() });
        }
        Ok(Self { layout, data: StateData::Vector(amplitudes) })
    }

    pub fn density(layout: HilbertLayout, rho: Vec<C64>) -> Result<Self, HilbertError> {
        let d = layout.dim();
        if rho.len() != d * d {
            return Err(HilbertError::DimensionMismatch { expected: d * d, found: rho.len() });
        }
        Ok(Self { layout, data: StateData::Density(rho) })
    }

    /// Basis state with the given per-subsystem digits.
    pub fn basis(layout: HilbertLayout, digits: &[usize]) -> Result<Self, HilbertError> {
        if digits.len() != layout.n_subsystems() {
            return Err(HilbertError::DimensionMismatch { expected: layout.n_subsystems(), found: digits.len() });
        }
        for (s, (&d, sub)) in digits.iter().zip(layout.subsystems()).enumerate() {
            if d >= sub.dim() {
                return Err(HilbertError::SubsystemOutOfRange { index: s, count: sub.dim() });
            }
        }
        let mut v = vec![ZERO; layout.dim()];
        v[layout.index_of(digits)] = C64::new(1.0, 0.0);
        Self::vector(layout, v)
    }

    pub fn layout(&self) -> &HilbertLayout {
        &self.layout
    }

    pub fn data(&self) -> &StateData {
        &self.data
    }

    pub fn into_data(self) -> StateData {
        self.data
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn is_vector(&self) -> bool {
        matches!(self.data, StateData::Vector(_))
    }

    fn kind(&self) -> &'static str {
        match self.data {
            StateData::Vector(_) => "state vector",
            StateData::Density(_) => "density matrix",
        }
    }

    pub fn amplitudes(&self) -> Result<&[C64], HilbertError> {
        match &self.data {
            StateData::Vector(v) => Ok(v),
            StateData::Density(_) => Err(HilbertError::WrongStateKind { expected: "state vector", found: self.kind() }),
        }
    }

    pub fn rho(&self) -> Result<&[C64], HilbertError> {
        match &self.data {
            StateData::Density(r) => Ok(r),
            StateData::Vector(_) => Err(HilbertError::WrongStateKind { expected: "density matrix", found: self.kind() }),
        }
    }

    /// |ψ⟩⟨ψ| for vectors; a copy for density matrices.
    pub fn to_density(&self) -> Self {
        match &self.data {
            StateData::Density(_) => self.clone(),
            StateData::Vector(v) => {
                let d = v.len();
                let mut rho = vec![ZERO; d * d];
                for (i, vi) in v.iter().enumerate() {
                    for (j, vj) in v.iter().enumerate() {
                        rho[i * d + j] = vi * vj.conj();
                    }
                }
                Self { layout: self.layout.clone(), data: StateData::Density(rho) }
            }
        }
    }

    /// ‖ψ‖₂ for vectors, tr ρ (real part) for density matrices.
    pub fn norm(&self) -> f64 {
        match &self.data {
            StateData::Vector(v) => v.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt(),
            StateData::Density(_) => self.trace().re,
        }
    }

    pub fn trace(&self) -> C64 {
        match &self.data {
            StateData::Vector(v) => C64::new(v.iter().map(|a| a.norm_sqr()).sum(), 0.0),
            StateData::Density(r) => {
                let d = self.dim();
                (0..d).map(|i| r[i * d + i]).sum()
            }
        }
    }

    /// Rescale to unit norm (vectors) or unit trace (density matrices).
    pub fn normalize(&mut self) {
        let n = self.norm();
        if n == 0.0 {
            return;
        }
        match &mut self.data {
            StateData::Vector(v) => v.iter_mut().for_each(|a| *a /= n),
            StateData::Density(r) => r.iter_mut().for_each(|a| *a /= n),
        }
    }

    /// Largest |ρ − ρ†| entry (zero for vectors).
    pub fn hermitian_deviation(&self) -> f64 {
        match &self.data {
            StateData::Vector(_) => 0.0,
            StateData::Density(r) => max_hermitian_deviation(r, self.dim()),
        }
    }

    /// ⟨self|other⟩ for two vectors on the same layout.
    pub fn inner(&self, other: &Self) -> Result<C64, HilbertError> {
        if self.layout != other.layout {
            return Err(HilbertError::LayoutMismatch);
        }
        let (a, b) = (self.amplitudes()?, other.amplitudes()?);
        Ok(a.iter().zip(b).map(|(x, y)| x.conj() * y).sum())
    }

    /// ⟨A⟩ for either representation.
    pub fn expectation(&self, op: &SparseOperator) -> Result<C64, HilbertError> {
        if op.layout() != &self.layout {
            return Err(HilbertError::LayoutMismatch);
        }
        Ok(match &self.data {
            StateData::Vector(v) => op.expectation(v),
            StateData::Density(r) => op.expectation_density(r),
        })
    }

    /// Tensor product `self ⊗ other`. Both must be vectors or both density
    /// matrices; `other` may not contain a qutrit.
    pub fn tensor(&self, other: &Self) -> Result<Self, HilbertError> {
        let subs: Vec<Subsystem> =
            self.layout.subsystems().iter().chain(other.layout.subsystems()).copied().collect();
        let layout = HilbertLayout::from_subsystems(subs)?;
        let (da, db) = (self.dim(), other.dim());
        match (&self.data, &other.data) {
            (StateData::Vector(a), StateData::Vector(b)) => {
                let v = a.iter().flat_map(|x| b.iter().map(move |y| x * y)).collect();
                Self::vector(layout, v)
            }
            (StateData::Density(a), StateData::Density(b)) => {
                let d = da * db;
                let mut r = vec![ZERO; d * d];
                for i in 0..da {
                    for j in 0..da {
                        let aij = a[i * da + j];
                        if aij == ZERO {
                            continue;
                        }
                        for k in 0..db {
                            for l in 0..db {
                                r[(i * db + k) * d + j * db + l] = aij * b[k * db + l];
                            }
                        }
                    }
                }
                Self::density(layout, r)
            }
            _ => Err(HilbertError::WrongStateKind { expected: "matching representations", found: "mixed" }),
        }
    }
}

/// Largest |ρ_ij − ρ_ji*| of a row-major d×d matrix.
pub fn max_hermitian_deviation(r: &[C64], d: usize) -> f64 {
    let mut m: f64 = 0.0;
    for i in 0..d {
        for j in i..d {
            m = m.max((r[i * d + j] - r[j * d + i].conj()).norm());
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::Subsystem;

    #[test]
    fn tensor_of_basis_states() {
        let q = QuantumState::basis(HilbertLayout::qutrit(), &[1]).unwrap();
        let m = QuantumState::basis(HilbertLayout::modes(&[3, 2]).unwrap(), &[2, 1]).unwrap();
        let t = q.tensor(&m).unwrap();
        let expected_layout = HilbertLayout::from_subsystems(vec![
            Subsystem::Qutrit,
            Subsystem::Mode { cutoff: 3 },
            Subsystem::Mode { cutoff: 2 },
        ])
        .unwrap();
        assert_eq!(t.layout(), &expected_layout);
        let idx = expected_layout.index_of(&[1, 2, 1]);
        assert_eq!(t.amplitudes().unwrap()[idx], C64::new(1.0, 0.0));
        assert!((t.norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn density_tensor_matches_vector_tensor() {
        let a = QuantumState::vector(
            HilbertLayout::qutrit(),
            vec![C64::new(0.6, 0.0), C64::new(0.0, 0.8), C64::new(0.0, 0.0)],
        )
        .unwrap();
        let b = QuantumState::vector(HilbertLayout::modes(&[2]).unwrap(), vec![C64::new(0.0, 1.0), C64::new(0.0, 0.0)])
            .unwrap();
        let via_vec = a.tensor(&b).unwrap().to_density();
        let via_rho = a.to_density().tensor(&b.to_density()).unwrap();
        assert_eq!(via_vec.layout(), via_rho.layout());
        let (x, y) = (via_vec.rho().unwrap(), via_rho.rho().unwrap());
        assert!(x.iter().zip(y).all(|(p, q)| (p - q).norm() < 1e-15));
        assert!((via_rho.trace().re - 1.0).abs() < 1e-15);
        assert!(via_rho.hermitian_deviation() < 1e-15);
    }

    #[test]
    fn wrong_kind_is_reported() {
        let a = QuantumState::basis(HilbertLayout::qutrit(), &[0]).unwrap();
        assert!(a.rho().is_err());
        assert!(a.to_density().amplitudes().is_err());
        assert!(QuantumState::vector(HilbertLayout::qutrit(), vec![C64::new(1.0, 0.0)]).is_err());
    }
}
