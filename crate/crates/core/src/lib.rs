//! Simulation engine for single-step transfer of a cat-encoded W state across
//! pairs of resonators coupled to a driven superconducting qutrit.

pub mod hilbert;
pub mod analysis;
pub mod dynamics;
pub mod hamiltonians;
pub mod states;
pub mod cli;

pub use num_complex::Complex64 as C64;
