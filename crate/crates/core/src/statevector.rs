//! Dense `2^N` statevector.
//!
//! Qubit 0 is the leftmost bitstring character and the most significant bit
//! of the amplitude index.

use std::io::Write;

use num_complex::Complex64;

use crate::error::{Error, Result};

pub const DEFAULT_MAX_QUBITS: usize = 24;

/// Tolerance on `|‖ψ‖² − 1|` for states entering normalized-only operations.
pub const NORM_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    n_qubits: usize,
    amps: Vec<Complex64>,
}

impl StateVector {
    /// Computational basis state `|b⟩` for an index `b < 2^n`.
    pub fn basis_index(n_qubits: usize, index: usize) -> Result<Self> {
        Self::basis_index_with_cap(n_qubits, index, DEFAULT_MAX_QUBITS)
    }

    pub fn basis_index_with_cap(n_qubits: usize, index: usize, cap: usize) -> Result<Self> {
        if n_qubits > cap {
            return Err(Error::TooManyQubits { n: n_qubits, cap });
        }
        let dim = 1usize << n_qubits;
        if index >= dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: index,
            });
        }
        let mut amps = vec![Complex64::new(0.0, 0.0); dim];
        amps[index] = Complex64::new(1.0, 0.0);
        Ok(StateVector { n_qubits, amps })
    }

    /// Computational basis state from a `0`/`1` string, qubit 0 first.
    pub fn basis_state(bits: &str) -> Result<Self> {
        Self::basis_state_with_cap(bits, DEFAULT_MAX_QUBITS)
    }

    pub fn basis_state_with_cap(bits: &str, cap: usize) -> Result<Self> {
        let n = bits.len();
        let mut index = 0usize;
        for ch in bits.chars() {
            index <<= 1;
            match ch {
                '0' => {}
                '1' => index |= 1,
                _ => return Err(Error::InvalidBitstring(bits.to_string())),
            }
        }
        Self::basis_index_with_cap(n, index, cap)
    }

    /// Wraps amplitudes after checking length and normalization.
    pub fn from_amplitudes(amps: Vec<Complex64>) -> Result<Self> {
        let n_qubits = dim_to_qubits(amps.len())?;
        let s = StateVector { n_qubits, amps };
        s.check_normalized()?;
        Ok(s)
    }

    /// Wraps amplitudes and rescales them to unit norm.
    pub fn normalized(amps: Vec<Complex64>) -> Result<Self> {
        let n_qubits = dim_to_qubits(amps.len())?;
        let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::NonFinite("state norm"));
        }
        Ok(StateVector {
            n_qubits,
            amps: amps.into_iter().map(|a| a / norm).collect(),
        })
    }

    pub(crate) fn from_raw(n_qubits: usize, amps: Vec<Complex64>) -> Self {
        debug_assert_eq!(amps.len(), 1usize << n_qubits);
        StateVector { n_qubits, amps }
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub(crate) fn amplitudes_mut(&mut self) -> &mut [Complex64] {
        &mut self.amps
    }

    pub fn into_amplitudes(self) -> Vec<Complex64> {
        self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn check_normalized(&self) -> Result<()> {
        let n = self.norm_sqr();
        if (n - 1.0).abs() > NORM_TOL {
            return Err(Error::NotNormalized { norm_sqr: n });
        }
        Ok(())
    }

    pub fn check_same_dim(&self, other: &StateVector) -> Result<()> {
        if self.amps.len() != other.amps.len() {
            return Err(Error::DimensionMismatch {
                expected: self.amps.len(),
                got: other.amps.len(),
            });
        }
        Ok(())
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &StateVector) -> Result<Complex64> {
        self.check_same_dim(other)?;
        Ok(inner_raw(&self.amps, &other.amps))
    }

    /// Single-qubit Hadamard on every qubit.
    pub fn hadamard_all(&self) -> StateVector {
        let mut amps = self.amps.clone();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let mut stride = 1;
        while stride < amps.len() {
            for block in amps.chunks_mut(2 * stride) {
                let (lo, hi) = block.split_at_mut(stride);
                for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                    let (u, v) = (*a, *b);
                    *a = (u + v) * r;
                    *b = (u - v) * r;
                }
            }
            stride *= 2;
        }
        StateVector {
            n_qubits: self.n_qubits,
            amps,
        }
    }

    /// Largest `|Im ψ_b|`.
    pub fn max_imag(&self) -> f64 {
        self.amps.iter().fold(0.0, |m, a| m.max(a.im.abs()))
    }

    /// Little-endian `(re, im)` f64 pairs in index order.
    pub fn write_le_bytes<W: Write>(&self, mut w: W) -> Result<()> {
        for a in &self.amps {
            w.write_all(&a.re.to_le_bytes())?;
            w.write_all(&a.im.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_le_bytes(bytes: &[u8]) -> Result<StateVector> {
        if bytes.len() % 16 != 0 {
            return Err(Error::Io("amplitude dump length is not a multiple of 16".into()));
        }
        let amps: Vec<Complex64> = bytes
            .chunks_exact(16)
            .map(|ch| {
                let re = f64::from_le_bytes(ch[..8].try_into().unwrap());
                let im = f64::from_le_bytes(ch[8..].try_into().unwrap());
                Complex64::new(re, im)
            })
            .collect();
        let n_qubits = dim_to_qubits(amps.len())?;
        Ok(StateVector { n_qubits, amps })
    }
}

fn dim_to_qubits(dim: usize) -> Result<usize> {
    if dim == 0 || !dim.is_power_of_two() {
        return Err(Error::DimensionMismatch {
            expected: dim.next_power_of_two(),
            got: dim,
        });
    }
    let n = dim.trailing_zeros() as usize;
    if n > DEFAULT_MAX_QUBITS {
        return Err(Error::TooManyQubits {
            n,
            cap: DEFAULT_MAX_QUBITS,
        });
    }
    Ok(n)
}

#[inline]
pub(crate) fn inner_raw(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}
