//! Pauli strings in symplectic `(x, z)` bitmask form and real-weighted sums
//! of them.
//!
//! Qubit 0 is the leftmost character of a rendered string and the most
//! significant bit of an amplitude index, so qubit `q` of an `n`-qubit string
//! lives at mask bit `n - 1 - q`.
//!
//! A string with masks `(x, z)` denotes the operator `i^{|x & z|} X^x Z^z`,
//! which makes every string Hermitian (`Y = i X Z`).

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::statevector::{inner_raw, StateVector};

/// Largest register a mask can describe.
pub const MAX_MASK_QUBITS: usize = 64;

/// Coefficients with magnitude below this are dropped from sums.
pub const PRUNE_TOL: f64 = 1e-14;

/// Imaginary residue tolerated when a complex result is reduced to a real sum.
pub const HERMITIAN_TOL: f64 = 1e-12;

/// Single-qubit Pauli factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    fn bits(self) -> (bool, bool) {
        match self {
            Pauli::I => (false, false),
            Pauli::X => (true, false),
            Pauli::Y => (true, true),
            Pauli::Z => (false, true),
        }
    }

    fn from_bits(x: bool, z: bool) -> Self {
        match (x, z) {
            (false, false) => Pauli::I,
            (true, false) => Pauli::X,
            (true, true) => Pauli::Y,
            (false, true) => Pauli::Z,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            Pauli::I => 'I',
            Pauli::X => 'X',
            Pauli::Y => 'Y',
            Pauli::Z => 'Z',
        }
    }
}

/// A power of `i`: `+1`, `+i`, `-1`, `-i` for exponents 0..4.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Phase(u8);

impl Phase {
    pub const ONE: Phase = Phase(0);
    pub const I: Phase = Phase(1);
    pub const MINUS_ONE: Phase = Phase(2);
    pub const MINUS_I: Phase = Phase(3);

    pub fn from_exponent(k: u32) -> Self {
        Phase((k % 4) as u8)
    }

    pub fn exponent(self) -> u8 {
        self.0
    }

    pub fn to_complex(self) -> Complex64 {
        match self.0 {
            0 => Complex64::new(1.0, 0.0),
            1 => Complex64::new(0.0, 1.0),
            2 => Complex64::new(-1.0, 0.0),
            _ => Complex64::new(0.0, -1.0),
        }
    }
}

/// Tensor product of single-qubit Paulis on `n_qubits` qubits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct PauliString {
    n_qubits: usize,
    x: u64,
    z: u64,
}

impl PauliString {
    pub fn identity(n_qubits: usize) -> Self {
        assert!(n_qubits <= MAX_MASK_QUBITS);
        PauliString { n_qubits, x: 0, z: 0 }
    }

    /// Builds a string from raw masks; bits above `n_qubits` are rejected.
    pub fn from_masks(n_qubits: usize, x: u64, z: u64) -> Result<Self> {
        if n_qubits > MAX_MASK_QUBITS {
            return Err(Error::TooManyQubits {
                n: n_qubits,
                cap: MAX_MASK_QUBITS,
            });
        }
        let full = full_mask(n_qubits);
        if x & !full != 0 || z & !full != 0 {
            return Err(Error::Invalid(format!(
                "mask bits outside {n_qubits} qubits"
            )));
        }
        Ok(PauliString { n_qubits, x, z })
    }

    /// Builds a string from `(qubit, factor)` pairs; later pairs overwrite
    /// earlier ones on the same qubit.
    pub fn from_factors(n_qubits: usize, factors: &[(usize, Pauli)]) -> Result<Self> {
        let mut p = PauliString::identity(n_qubits);
        for &(q, f) in factors {
            if q >= n_qubits {
                return Err(Error::Invalid(format!(
                    "qubit {q} out of range for {n_qubits} qubits"
                )));
            }
            p.set(q, f);
        }
        Ok(p)
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn x_mask(&self) -> u64 {
        self.x
    }

    pub fn z_mask(&self) -> u64 {
        self.z
    }

    fn bit(&self, q: usize) -> u64 {
        1u64 << (self.n_qubits - 1 - q)
    }

    pub fn get(&self, q: usize) -> Pauli {
        let b = self.bit(q);
        Pauli::from_bits(self.x & b != 0, self.z & b != 0)
    }

    pub fn set(&mut self, q: usize, p: Pauli) {
        let b = self.bit(q);
        let (xb, zb) = p.bits();
        self.x = if xb { self.x | b } else { self.x & !b };
        self.z = if zb { self.z | b } else { self.z & !b };
    }

    pub fn weight(&self) -> usize {
        (self.x | self.z).count_ones() as usize
    }

    pub fn is_identity(&self) -> bool {
        self.x == 0 && self.z == 0
    }

    pub fn y_count(&self) -> usize {
        (self.x & self.z).count_ones() as usize
    }

    pub fn has_odd_y_parity(&self) -> bool {
        self.y_count() % 2 == 1
    }

    pub fn commutes_with(&self, other: &PauliString) -> bool {
        ((self.x & other.z).count_ones() + (self.z & other.x).count_ones()) % 2 == 0
    }

    /// Product `self · other = phase · r`.
    pub fn multiply(&self, other: &PauliString) -> Result<(Phase, PauliString)> {
        if self.n_qubits != other.n_qubits {
            return Err(Error::QubitMismatch {
                left: self.n_qubits,
                right: other.n_qubits,
            });
        }
        Ok(self.multiply_unchecked(other))
    }

    pub(crate) fn multiply_unchecked(&self, other: &PauliString) -> (Phase, PauliString) {
        let x = self.x ^ other.x;
        let z = self.z ^ other.z;
        // i^{a1} X^{x1} Z^{z1} i^{a2} X^{x2} Z^{z2}
        //   = i^{a1 + a2 + 2|z1 & x2|} X^{x1^x2} Z^{z1^z2}
        let a1 = (self.x & self.z).count_ones();
        let a2 = (other.x & other.z).count_ones();
        let a3 = (x & z).count_ones();
        let swap = (self.z & other.x).count_ones();
        let k = a1 + a2 + 2 * swap + 4 * 64 - a3;
        (
            Phase::from_exponent(k),
            PauliString {
                n_qubits: self.n_qubits,
                x,
                z,
            },
        )
    }

    /// Phase picked up by basis index `b`: `P|b⟩ = phase(b) |b ^ x⟩`.
    #[inline]
    pub(crate) fn base_phase(&self) -> Complex64 {
        Phase::from_exponent((self.x & self.z).count_ones()).to_complex()
    }

    #[inline]
    pub(crate) fn sign(&self, b: usize) -> f64 {
        if (self.z & b as u64).count_ones() % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// `out += coeff · P · input` on raw amplitude slices.
    pub(crate) fn accumulate(&self, coeff: Complex64, input: &[Complex64], out: &mut [Complex64]) {
        let c = coeff * self.base_phase();
        let x = self.x as usize;
        for (b, &a) in input.iter().enumerate() {
            out[b ^ x] += c * self.sign(b) * a;
        }
    }

    /// `⟨φ|P|ψ⟩` on raw slices.
    pub(crate) fn matrix_element(&self, phi: &[Complex64], psi: &[Complex64]) -> Complex64 {
        let x = self.x as usize;
        let mut acc = Complex64::new(0.0, 0.0);
        for (b, &a) in psi.iter().enumerate() {
            acc += phi[b ^ x].conj() * a * self.sign(b);
        }
        acc * self.base_phase()
    }

    /// In-place `ψ ← e^{-iθP} ψ = cos θ ψ − i sin θ Pψ`.
    pub(crate) fn rotate_in_place(&self, theta: f64, psi: &mut [Complex64]) {
        let (s, c) = theta.sin_cos();
        let minus_i_s = Complex64::new(0.0, -s) * self.base_phase();
        let x = self.x as usize;
        if x == 0 {
            for (b, a) in psi.iter_mut().enumerate() {
                *a *= c + minus_i_s * self.sign(b);
            }
            return;
        }
        // pair b with b ^ x, visiting each pair once from the member whose
        // highest x bit is clear
        let top = 1usize << (usize::BITS - 1 - x.leading_zeros());
        for b in 0..psi.len() {
            if b & top != 0 {
                continue;
            }
            let bp = b ^ x;
            let a0 = psi[b];
            let a1 = psi[bp];
            psi[b] = c * a0 + minus_i_s * self.sign(bp) * a1;
            psi[bp] = c * a1 + minus_i_s * self.sign(b) * a0;
        }
    }
}

fn full_mask(n: usize) -> u64 {
    if n == 64 {
        u64::MAX
    } else {
        (1u64 << n) - 1
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for q in 0..self.n_qubits {
            write!(f, "{}", self.get(q).as_char())?;
        }
        Ok(())
    }
}

impl FromStr for PauliString {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let n = s.chars().count();
        if n > MAX_MASK_QUBITS {
            return Err(Error::ParsePauli(s.to_string()));
        }
        let mut p = PauliString::identity(n);
        for (q, ch) in s.chars().enumerate() {
            let f = match ch {
                'I' => Pauli::I,
                'X' => Pauli::X,
                'Y' => Pauli::Y,
                'Z' => Pauli::Z,
                _ => return Err(Error::ParsePauli(s.to_string())),
            };
            p.set(q, f);
        }
        Ok(p)
    }
}

impl TryFrom<String> for PauliString {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<PauliString> for String {
    fn from(p: PauliString) -> String {
        p.to_string()
    }
}

/// Complex-coefficient accumulator used while composing operators whose
/// intermediate factors are not Hermitian (e.g. `|0⟩⟨1| = (X + iY)/2`).
#[derive(Debug, Clone, Default)]
pub(crate) struct ComplexPauliSum {
    pub n_qubits: usize,
    pub terms: HashMap<PauliString, Complex64>,
}

impl ComplexPauliSum {
    pub fn new(n_qubits: usize) -> Self {
        ComplexPauliSum {
            n_qubits,
            terms: HashMap::new(),
        }
    }

    pub fn add(&mut self, coeff: Complex64, p: PauliString) {
        *self.terms.entry(p).or_insert(Complex64::new(0.0, 0.0)) += coeff;
    }

    pub fn mul(&self, other: &ComplexPauliSum) -> ComplexPauliSum {
        let mut out = ComplexPauliSum::new(self.n_qubits);
        for (p, &a) in &self.terms {
            for (q, &b) in &other.terms {
                let (ph, r) = p.multiply_unchecked(q);
                out.add(a * b * ph.to_complex(), r);
            }
        }
        out
    }

    /// Tensor product `self ⊗ other`, with `self` on the leading qubits.
    pub fn kron(&self, other: &ComplexPauliSum) -> ComplexPauliSum {
        let n = self.n_qubits + other.n_qubits;
        let shift = other.n_qubits;
        let mut out = ComplexPauliSum::new(n);
        for (p, &a) in &self.terms {
            for (q, &b) in &other.terms {
                let r = PauliString {
                    n_qubits: n,
                    x: (p.x << shift) | q.x,
                    z: (p.z << shift) | q.z,
                };
                out.add(a * b, r);
            }
        }
        out
    }

    pub fn into_real(self) -> Result<PauliSum> {
        let mut terms = Vec::with_capacity(self.terms.len());
        for (p, c) in self.terms {
            if c.im.abs() > HERMITIAN_TOL {
                return Err(Error::NonHermitian {
                    string: p.to_string(),
                    imag: c.im,
                });
            }
            terms.push((c.re, p));
        }
        PauliSum::from_terms(self.n_qubits, terms)
    }
}

impl From<&PauliSum> for ComplexPauliSum {
    fn from(s: &PauliSum) -> Self {
        let mut out = ComplexPauliSum::new(s.n_qubits);
        for (c, p) in &s.terms {
            out.add(Complex64::new(*c, 0.0), *p);
        }
        out
    }
}

/// Real-weighted sum of Pauli strings, kept canonical: sorted by mask,
/// duplicates merged, near-zero coefficients pruned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PauliSum {
    n_qubits: usize,
    terms: Vec<(f64, PauliString)>,
}

impl PauliSum {
    pub fn zero(n_qubits: usize) -> Self {
        PauliSum {
            n_qubits,
            terms: Vec::new(),
        }
    }

    pub fn identity(n_qubits: usize) -> Self {
        PauliSum {
            n_qubits,
            terms: vec![(1.0, PauliString::identity(n_qubits))],
        }
    }

    pub fn single(coeff: f64, p: PauliString) -> Self {
        PauliSum::from_terms(p.n_qubits, [(coeff, p)]).expect("single string has matching size")
    }

    pub fn from_terms<I>(n_qubits: usize, terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = (f64, PauliString)>,
    {
        let mut merged: HashMap<PauliString, f64> = HashMap::new();
        for (c, p) in terms {
            if p.n_qubits != n_qubits {
                return Err(Error::QubitMismatch {
                    left: n_qubits,
                    right: p.n_qubits,
                });
            }
            if !c.is_finite() {
                return Err(Error::NonFinite("Pauli sum coefficient"));
            }
            *merged.entry(p).or_insert(0.0) += c;
        }
        let mut terms: Vec<(f64, PauliString)> = merged
            .into_iter()
            .filter(|(_, c)| c.abs() >= PRUNE_TOL)
            .map(|(p, c)| (c, p))
            .collect();
        terms.sort_by(|a, b| a.1.cmp(&b.1));
        Ok(PauliSum { n_qubits, terms })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn terms(&self) -> &[(f64, PauliString)] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coefficient(&self, p: &PauliString) -> f64 {
        self.terms
            .binary_search_by(|t| t.1.cmp(p))
            .map(|i| self.terms[i].0)
            .unwrap_or(0.0)
    }

    fn check_size(&self, other: &PauliSum) -> Result<()> {
        if self.n_qubits != other.n_qubits {
            return Err(Error::QubitMismatch {
                left: self.n_qubits,
                right: other.n_qubits,
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &PauliSum) -> Result<PauliSum> {
        self.check_size(other)?;
        PauliSum::from_terms(
            self.n_qubits,
            self.terms.iter().chain(other.terms.iter()).copied(),
        )
    }

    pub fn scale(&self, factor: f64) -> PauliSum {
        PauliSum::from_terms(
            self.n_qubits,
            self.terms.iter().map(|&(c, p)| (c * factor, p)),
        )
        .expect("scaling keeps sizes")
    }

    /// Product `self · other`; fails when the product carries imaginary
    /// coefficients, i.e. when the factors do not multiply to a Hermitian
    /// operator.
    pub fn multiply(&self, other: &PauliSum) -> Result<PauliSum> {
        self.check_size(other)?;
        ComplexPauliSum::from(self)
            .mul(&ComplexPauliSum::from(other))
            .into_real()
    }

    /// The Hermitian operator `-i[self, other]`.
    pub fn commutator(&self, other: &PauliSum) -> Result<PauliSum> {
        self.check_size(other)?;
        let a = ComplexPauliSum::from(self);
        let b = ComplexPauliSum::from(other);
        let mut ab = a.mul(&b);
        for (p, c) in b.mul(&a).terms {
            ab.add(-c, p);
        }
        let mut out = ComplexPauliSum::new(self.n_qubits);
        for (p, c) in ab.terms {
            out.add(Complex64::new(0.0, -1.0) * c, p);
        }
        out.into_real()
    }

    /// Largest coefficient difference against `other`, matching strings.
    pub fn max_abs_diff(&self, other: &PauliSum) -> Result<f64> {
        let diff = self.add(&other.scale(-1.0))?;
        Ok(diff.terms.iter().fold(0.0, |m, (c, _)| m.max(c.abs())))
    }

    /// `out = self · input` on raw amplitude slices.
    pub(crate) fn apply_raw(&self, input: &[Complex64], out: &mut [Complex64]) {
        out.iter_mut().for_each(|a| *a = Complex64::new(0.0, 0.0));
        for (c, p) in &self.terms {
            p.accumulate(Complex64::new(*c, 0.0), input, out);
        }
    }

    /// `⟨ψ|self|ψ⟩` without the normalization check.
    pub(crate) fn expectation_raw(&self, psi: &[Complex64]) -> Complex64 {
        self.terms
            .iter()
            .map(|(c, p)| *c * p.matrix_element(psi, psi))
            .sum()
    }
}

impl fmt::Display for PauliSum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (k, (c, p)) in self.terms.iter().enumerate() {
            if k > 0 {
                write!(f, " ")?;
            }
            write!(f, "{c:+.12}*{p}")?;
        }
        Ok(())
    }
}

fn check_qubits(n: usize, psi: &StateVector) -> Result<()> {
    if n != psi.n_qubits() {
        return Err(Error::DimensionMismatch {
            expected: 1usize << n,
            got: psi.dim(),
        });
    }
    Ok(())
}

/// `P|ψ⟩`.
pub fn apply_string(p: &PauliString, psi: &StateVector) -> Result<StateVector> {
    check_qubits(p.n_qubits(), psi)?;
    let mut out = vec![Complex64::new(0.0, 0.0); psi.dim()];
    p.accumulate(Complex64::new(1.0, 0.0), psi.amplitudes(), &mut out);
    Ok(StateVector::from_raw(psi.n_qubits(), out))
}

/// `e^{-iθP}|ψ⟩`.
pub fn exp_apply(p: &PauliString, theta: f64, psi: &StateVector) -> Result<StateVector> {
    let mut out = psi.clone();
    exp_apply_in_place(p, theta, &mut out)?;
    Ok(out)
}

pub fn exp_apply_in_place(p: &PauliString, theta: f64, psi: &mut StateVector) -> Result<()> {
    if p.is_identity() {
        return Err(Error::IdentityGenerator);
    }
    check_qubits(p.n_qubits(), psi)?;
    p.rotate_in_place(theta, psi.amplitudes_mut());
    Ok(())
}

/// `h|ψ⟩` as raw amplitudes (not normalized).
pub fn apply_sum(h: &PauliSum, psi: &StateVector) -> Result<Vec<Complex64>> {
    check_qubits(h.n_qubits(), psi)?;
    let mut out = vec![Complex64::new(0.0, 0.0); psi.dim()];
    h.apply_raw(psi.amplitudes(), &mut out);
    Ok(out)
}

/// `⟨ψ|h|ψ⟩` for a normalized state.
pub fn expectation(h: &PauliSum, psi: &StateVector) -> Result<f64> {
    check_qubits(h.n_qubits(), psi)?;
    psi.check_normalized()?;
    let e = h.expectation_raw(psi.amplitudes());
    if e.im.abs() > HERMITIAN_TOL * (1.0 + e.re.abs()) {
        return Err(Error::NonHermitian {
            string: "<psi|h|psi>".into(),
            imag: e.im,
        });
    }
    Ok(e.re)
}

/// `‖h|ψ⟩‖² − ⟨ψ|h|ψ⟩²`, clamped at zero.
pub fn variance(h: &PauliSum, psi: &StateVector) -> Result<f64> {
    check_qubits(h.n_qubits(), psi)?;
    psi.check_normalized()?;
    let hpsi = apply_sum(h, psi)?;
    Ok(variance_from(psi.amplitudes(), &hpsi))
}

/// Variance from a state and its image `h|ψ⟩`.
pub(crate) fn variance_from(psi: &[Complex64], hpsi: &[Complex64]) -> f64 {
    let mean = inner_raw(psi, hpsi).re;
    let sq: f64 = hpsi.iter().map(|a| a.norm_sqr()).sum();
    (sq - mean * mean).max(0.0)
}
