//! Adaptive variational quantum imaginary time evolution (AVQITE) for spin-1
//! chains simulated on qubit registers.
//!
//! The crate is organised bottom-up:
//!
//! - [`pauli`]: symplectic Pauli strings, real Pauli sums, and their action
//!   on statevectors.
//! - [`statevector`]: the dense `2^N` register.
//! - [`encoding`]: spin-1 to qubit encodings (standard binary, Gray, unary,
//!   multiplet), encoded operators and spin-1 subspace projectors.
//! - [`model`]: the Blume-Capel / anisotropic XXZ chain Hamiltonian, as a
//!   qubit Pauli sum or a matrix-free spin-1 operator.
//! - [`avqite`]: metric/gradient assembly, McLachlan distance, adaptive
//!   ansatz growth and the imaginary-time integrator.
//! - [`exactdiag`]: exact diagonalization, fidelity, Binder cumulant and
//!   twisted-boundary sector crossings.
//! - [`harness`]: reference sweeps, statistics, CNOT accounting, ranking,
//!   scaling fits and report files.

pub mod avqite;
pub mod encoding;
pub mod error;
pub mod exactdiag;
pub mod harness;
pub mod model;
pub mod pauli;
pub mod statevector;

pub use error::{Error, Result};
pub use pauli::{Pauli, PauliString, PauliSum, Phase};
pub use statevector::StateVector;
