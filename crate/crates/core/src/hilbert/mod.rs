//! Truncated Fock-space and qutrit algebra on a composite tensor-product space.
//!
//! Subsystems are always ordered qutrit first (when present), then bosonic
//! modes 1..M. Basis indices are row-major in that order: the last mode is
//! the fastest-varying digit.

mod operator;
mod state;

pub use operator::SparseOperator;
pub use state::{max_hermitian_deviation, QuantumState, StateData};

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dimension of the qutrit subsystem.
pub const QUTRIT_DIM: usize = 3;

/// Stored sparse entries with magnitude below this are dropped.
pub const DROP_TOLERANCE: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HilbertError {
    #[error("invalid layout: {0}")]
    InvalidLayout(String),
    #[error("mode {mode} out of range (layout has {n_modes} modes, numbered from 1)")]
    ModeOutOfRange { mode: usize, n_modes: usize },
    #[error("subsystem {index} out of range (layout has {count} subsystems)")]
    SubsystemOutOfRange { index: usize, count: usize },
    #[error("layout has no qutrit subsystem")]
    NoQutrit,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("operands live on different layouts")]
    LayoutMismatch,
    #[error("operation requires a {expected} but the state is a {found}")]
    WrongStateKind { expected: &'static str, found: &'static str },
}

/// Qutrit energy levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    G,
    E,
    F,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::G, Level::E, Level::F];

    pub fn index(self) -> usize {
        match self {
            Level::G => 0,
            Level::E => 1,
            Level::F => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Subsystem {
    Qutrit,
    Mode { cutoff: usize },
}

impl Subsystem {
    pub fn dim(self) -> usize {
        match self {
            Subsystem::Qutrit => QUTRIT_DIM,
            Subsystem::Mode { cutoff } => cutoff,
        }
    }
}

/// Ordered list of subsystems making up the composite space.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HilbertLayout {
    subsystems: Vec<Subsystem>,
    strides: Vec<usize>,
    dim: usize,
}

impl HilbertLayout {
    /// The physical layout: one qutrit followed by an even number (≥ 2) of
    /// modes with the given Fock cutoffs.
    pub fn new(mode_cutoffs: &[usize]) -> Result<Self, HilbertError> {
        if mode_cutoffs.len() < 2 || mode_cutoffs.len() % 2 != 0 {
            return Err(HilbertError::InvalidLayout(format!(
                "mode count must be even and at least 2, got {}",
                mode_cutoffs.len()
            )));
        }
        let mut subsystems = vec![Subsystem::Qutrit];
        subsystems.extend(mode_cutoffs.iter().map(|&cutoff| Subsystem::Mode { cutoff }));
        Self::from_subsystems(subsystems)
    }

    /// Qutrit plus `2 * n_pairs` modes sharing one cutoff.
    pub fn uniform(n_pairs: usize, cutoff: usize) -> Result<Self, HilbertError> {
        Self::new(&vec![cutoff; 2 * n_pairs])
    }

    /// Modes only, no qutrit. Used for cavity-reduced states and bare-mode checks.
    pub fn modes(mode_cutoffs: &[usize]) -> Result<Self, HilbertError> {
        if mode_cutoffs.is_empty() {
            return Err(HilbertError::InvalidLayout("no modes".into()));
        }
        Self::from_subsystems(mode_cutoffs.iter().map(|&cutoff| Subsystem::Mode { cutoff }).collect())
    }

    pub fn qutrit() -> Self {
        Self::from_subsystems(vec![Subsystem::Qutrit]).expect("qutrit layout is valid")
    }

    pub fn from_subsystems(subsystems: Vec<Subsystem>) -> Result<Self, HilbertError> {
        if subsystems.is_empty() {
            return Err(HilbertError::InvalidLayout("empty layout".into()));
        }
        for (i, s) in subsystems.iter().enumerate() {
            match *s {
                Subsystem::Qutrit if i != 0 => {
                    return Err(HilbertError::InvalidLayout(
                        "the qutrit must be the first subsystem".into(),
                    ))
                }
                Subsystem::Mode { cutoff } if cutoff < 2 => {
                    return Err(HilbertError::InvalidLayout(format!(
                        "Fock cutoff must be at least 2, got {cutoff}"
                    )))
                }
                _ => {}
            }
        }
        let mut strides = vec![1; subsystems.len()];
        for i in (0..subsystems.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * subsystems[i + 1].dim();
        }
        let dim = strides[0] * subsystems[0].dim();
        Ok(Self { subsystems, strides, dim })
    }

    /// Total dimension of the composite space.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn subsystems(&self) -> &[Subsystem] {
        &self.subsystems
    }

    pub fn subsystem_dims(&self) -> Vec<usize> {
        self.subsystems.iter().map(|s| s.dim()).collect()
    }

    pub fn n_subsystems(&self) -> usize {
        self.subsystems.len()
    }

    pub fn stride(&self, subsystem: usize) -> usize {
        self.strides[subsystem]
    }

    pub fn has_qutrit(&self) -> bool {
        self.subsystems[0] == Subsystem::Qutrit
    }

    pub fn n_modes(&self) -> usize {
        self.subsystems.len() - usize::from(self.has_qutrit())
    }

    pub fn n_pairs(&self) -> usize {
        self.n_modes() / 2
    }

    /// Subsystem index of resonator `mode` (numbered from 1).
    pub fn mode_subsystem(&self, mode: usize) -> Result<usize, HilbertError> {
        if mode == 0 || mode > self.n_modes() {
            return Err(HilbertError::ModeOutOfRange { mode, n_modes: self.n_modes() });
        }
        Ok(mode - 1 + usize::from(self.has_qutrit()))
    }

    pub fn mode_cutoff(&self, mode: usize) -> Result<usize, HilbertError> {
        Ok(self.subsystems[self.mode_subsystem(mode)?].dim())
    }

    /// The same modes without the qutrit.
    pub fn cavity_layout(&self) -> Result<Self, HilbertError> {
        let modes: Vec<Subsystem> =
            self.subsystems.iter().copied().filter(|s| *s != Subsystem::Qutrit).collect();
        if modes.is_empty() {
            return Err(HilbertError::InvalidLayout("layout has no modes".into()));
        }
        Self::from_subsystems(modes)
    }

    /// Sub-layout made of the listed subsystems, in canonical order.
    pub fn select(&self, keep: &[usize]) -> Result<Self, HilbertError> {
        let mut keep = keep.to_vec();
        keep.sort_unstable();
        keep.dedup();
        for &k in &keep {
            if k >= self.subsystems.len() {
                return Err(HilbertError::SubsystemOutOfRange { index: k, count: self.subsystems.len() });
            }
        }
        Self::from_subsystems(keep.iter().map(|&k| self.subsystems[k]).collect())
    }

    /// Digit of basis index `index` on subsystem `subsystem`.
    #[inline]
    pub fn digit(&self, index: usize, subsystem: usize) -> usize {
        (index / self.strides[subsystem]) % self.subsystems[subsystem].dim()
    }

    /// All digits of a basis index.
    pub fn digits(&self, index: usize) -> Vec<usize> {
        (0..self.subsystems.len()).map(|s| self.digit(index, s)).collect()
    }

    /// Basis index from per-subsystem digits.
    pub fn index_of(&self, digits: &[usize]) -> usize {
        digits.iter().zip(&self.strides).map(|(d, s)| d * s).sum()
    }
}

pub type DenseMatrix = nalgebra::DMatrix<C64>;

/// Local annihilation operator on a Fock space truncated to `cutoff` levels.
pub fn local_annihilation(cutoff: usize) -> DenseMatrix {
    let mut m = DenseMatrix::zeros(cutoff, cutoff);
    for n in 1..cutoff {
        m[(n - 1, n)] = C64::new((n as f64).sqrt(), 0.0);
    }
    m
}

/// Local |bra⟩⟨ket| on the qutrit.
pub fn local_qutrit(bra: Level, ket: Level) -> DenseMatrix {
    let mut m = DenseMatrix::zeros(QUTRIT_DIM, QUTRIT_DIM);
    m[(bra.index(), ket.index())] = C64::new(1.0, 0.0);
    m
}

/// Embed a local operator on one subsystem, identity elsewhere.
pub fn embed(local: &DenseMatrix, subsystem: usize, layout: &HilbertLayout) -> Result<SparseOperator, HilbertError> {
    if subsystem >= layout.n_subsystems() {
        return Err(HilbertError::SubsystemOutOfRange { index: subsystem, count: layout.n_subsystems() });
    }
    let local_dim = layout.subsystems()[subsystem].dim();
    if local.nrows() != local_dim || local.ncols() != local_dim {
        return Err(HilbertError::DimensionMismatch { expected: local_dim, found: local.nrows() });
    }
    let stride = layout.stride(subsystem);
    let local_nz: Vec<Vec<(usize, C64)>> = (0..local_dim)
        .map(|r| {
            (0..local_dim)
                .filter(|&c| local[(r, c)].norm() >= DROP_TOLERANCE)
                .map(|c| (c, local[(r, c)]))
                .collect()
        })
        .collect();
    let mut triplets = Vec::new();
    for row in 0..layout.dim() {
        let k = layout.digit(row, subsystem);
        for &(c, v) in &local_nz[k] {
            let col = row - k * stride + c * stride;
            triplets.push((row, col, v));
        }
    }
    Ok(SparseOperator::from_triplets(layout.clone(), triplets))
}

/// â for resonator `mode` (numbered from 1), embedded in the composite space.
pub fn annihilation(mode: usize, layout: &HilbertLayout) -> Result<SparseOperator, HilbertError> {
    let s = layout.mode_subsystem(mode)?;
    embed(&local_annihilation(layout.subsystems()[s].dim()), s, layout)
}

pub fn creation(mode: usize, layout: &HilbertLayout) -> Result<SparseOperator, HilbertError> {
    Ok(annihilation(mode, layout)?.adjoint())
}

/// n̂ = â†â for resonator `mode`.
pub fn number(mode: usize, layout: &HilbertLayout) -> Result<SparseOperator, HilbertError> {
    let s = layout.mode_subsystem(mode)?;
    let d = layout.subsystems()[s].dim();
    let local = DenseMatrix::from_fn(d, d, |r, c| if r == c { C64::new(r as f64, 0.0) } else { C64::new(0.0, 0.0) });
    embed(&local, s, layout)
}

/// (−1)^n̂ for resonator `mode`.
pub fn parity(mode: usize, layout: &HilbertLayout) -> Result<SparseOperator, HilbertError> {
    let s = layout.mode_subsystem(mode)?;
    let d = layout.subsystems()[s].dim();
    let local = DenseMatrix::from_fn(d, d, |r, c| {
        if r == c {
            C64::new(if r % 2 == 0 { 1.0 } else { -1.0 }, 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    });
    embed(&local, s, layout)
}

/// |bra⟩⟨ket| on the qutrit, identity on all modes.
pub fn qutrit_op(bra: Level, ket: Level, layout: &HilbertLayout) -> Result<SparseOperator, HilbertError> {
    if !layout.has_qutrit() {
        return Err(HilbertError::NoQutrit);
    }
    embed(&local_qutrit(bra, ket), 0, layout)
}
