//! Numerical and symbolic laboratory for the dilute Bose gas on the unit
//! torus in the Gross-Pitaevskii scaling.
//!
//! The pieces: a truncated momentum lattice, occupation-number Fock bases
//! with sparse ladder operators, the radial scattering problem, the
//! second-quantized Hamiltonian and its excitation form, generalized
//! Bogoliubov transformations, a symbolic expansion engine for nested
//! commutators, and Lanczos-based spectra.

pub mod bogoliubov;
pub mod cli;
pub mod error;
pub mod fock;
pub mod hamiltonians;
pub mod lattice;
pub mod linalg;
pub mod potential;
pub mod scattering;
pub mod spectra;
pub mod symbolic;

pub use error::{Error, Result};
