//! Spin-1 to qubit encodings.
//!
//! Each spin-1 site occupies `n` consecutive qubits (`n = 3` for unary, `2`
//! otherwise); site `j` (1-based) starts at qubit `(j - 1) n`. Spin levels
//! `0, 1, 2` are the `m = +1, 0, -1` eigenstates of `S^z`.
//!
//! | level | standard | Gray | unary | multiplet            |
//! |-------|----------|------|-------|----------------------|
//! | 0     | 00       | 00   | 001   | 00                   |
//! | 1     | 01       | 01   | 010   | (01 + 10)/√2         |
//! | 2     | 10       | 11   | 100   | 11                   |
//!
//! Operators are encoded by expanding `op = Σ c_ij |i⟩⟨j|` into qubit outer
//! products and rewriting each single-qubit `|b⟩⟨b'|` as Paulis. The
//! multiplet encoding instead substitutes `S^α → ½(σ^α ⊗ 1 + 1 ⊗ σ^α)` and
//! builds everything else as polynomials in those.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pauli::{ComplexPauliSum, Pauli, PauliString, PauliSum};
use crate::statevector::{StateVector, DEFAULT_MAX_QUBITS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncodingKind {
    Standard,
    Gray,
    Unary,
    Multiplet,
}

impl EncodingKind {
    pub const ALL: [EncodingKind; 4] = [
        EncodingKind::Standard,
        EncodingKind::Gray,
        EncodingKind::Unary,
        EncodingKind::Multiplet,
    ];

    pub fn qubits_per_site(self) -> usize {
        match self {
            EncodingKind::Unary => 3,
            _ => 2,
        }
    }

    pub fn n_qubits(self, chain_len: usize) -> usize {
        self.qubits_per_site() * chain_len
    }

    /// First qubit of 1-based `site`.
    pub fn qubit_offset(self, site: usize) -> usize {
        (site - 1) * self.qubits_per_site()
    }

    pub fn name(self) -> &'static str {
        match self {
            EncodingKind::Standard => "standard",
            EncodingKind::Gray => "gray",
            EncodingKind::Unary => "unary",
            EncodingKind::Multiplet => "multiplet",
        }
    }

    /// Local qubit image of a spin level as `(bits, amplitude)` pairs; bits
    /// are site-local with the site's first qubit most significant.
    pub fn level_image(self, level: usize) -> &'static [(usize, f64)] {
        use std::f64::consts::FRAC_1_SQRT_2 as R;
        const STD: [&[(usize, f64)]; 3] = [&[(0b00, 1.0)], &[(0b01, 1.0)], &[(0b10, 1.0)]];
        const GRAY: [&[(usize, f64)]; 3] = [&[(0b00, 1.0)], &[(0b01, 1.0)], &[(0b11, 1.0)]];
        const UNARY: [&[(usize, f64)]; 3] = [&[(0b001, 1.0)], &[(0b010, 1.0)], &[(0b100, 1.0)]];
        const MULT: [&[(usize, f64)]; 3] = [&[(0b00, 1.0)], &[(0b01, R), (0b10, R)], &[(0b11, 1.0)]];
        match self {
            EncodingKind::Standard => STD[level],
            EncodingKind::Gray => GRAY[level],
            EncodingKind::Unary => UNARY[level],
            EncodingKind::Multiplet => MULT[level],
        }
    }
}

impl fmt::Display for EncodingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EncodingKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "standard" => Ok(EncodingKind::Standard),
            "gray" => Ok(EncodingKind::Gray),
            "unary" => Ok(EncodingKind::Unary),
            "multiplet" => Ok(EncodingKind::Multiplet),
            _ => Err(Error::UnknownName {
                kind: "encoding",
                value: s.to_string(),
            }),
        }
    }
}

/// Product basis of the reference state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceBasis {
    Z,
    X,
}

impl fmt::Display for ReferenceBasis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReferenceBasis::Z => "z",
            ReferenceBasis::X => "x",
        })
    }
}

impl FromStr for ReferenceBasis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "z" => Ok(ReferenceBasis::Z),
            "x" => Ok(ReferenceBasis::X),
            _ => Err(Error::UnknownName {
                kind: "reference basis",
                value: s.to_string(),
            }),
        }
    }
}

/// Parses a spin-1 configuration like `"0121"` into levels.
pub fn parse_spins(spins: &str) -> Result<Vec<usize>> {
    spins
        .chars()
        .map(|ch| match ch {
            '0' => Ok(0),
            '1' => Ok(1),
            '2' => Ok(2),
            _ => Err(Error::InvalidSpinString(spins.to_string())),
        })
        .collect()
}

/// 3×3 operator in the ordered spin-1 basis `{|0⟩, |1⟩, |2⟩}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpinSiteOperator {
    pub matrix: [[Complex64; 3]; 3],
}

impl SpinSiteOperator {
    pub fn from_real(m: [[f64; 3]; 3]) -> Self {
        let mut matrix = [[Complex64::new(0.0, 0.0); 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                matrix[i][j] = Complex64::new(m[i][j], 0.0);
            }
        }
        SpinSiteOperator { matrix }
    }

    pub fn identity() -> Self {
        Self::from_real([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    }

    pub fn sx() -> Self {
        let r = std::f64::consts::FRAC_1_SQRT_2;
        Self::from_real([[0.0, r, 0.0], [r, 0.0, r], [0.0, r, 0.0]])
    }

    pub fn sy() -> Self {
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let z = Complex64::new(0.0, 0.0);
        let mi = Complex64::new(0.0, -r);
        let pi = Complex64::new(0.0, r);
        SpinSiteOperator {
            matrix: [[z, mi, z], [pi, z, mi], [z, pi, z]],
        }
    }

    pub fn sz() -> Self {
        Self::from_real([[1.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, -1.0]])
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut matrix = [[Complex64::new(0.0, 0.0); 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    matrix[i][j] += self.matrix[i][k] * other.matrix[k][j];
                }
            }
        }
        SpinSiteOperator { matrix }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.combine(other, Complex64::new(1.0, 0.0))
    }

    pub fn scale(&self, c: Complex64) -> Self {
        let mut out = *self;
        out.matrix.iter_mut().flatten().for_each(|a| *a *= c);
        out
    }

    fn combine(&self, other: &Self, c: Complex64) -> Self {
        let mut out = *self;
        for i in 0..3 {
            for j in 0..3 {
                out.matrix[i][j] += c * other.matrix[i][j];
            }
        }
        out
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        (0..3).all(|i| (0..3).all(|j| (self.matrix[i][j] - self.matrix[j][i].conj()).norm() <= tol))
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                m = m.max((self.matrix[i][j] - other.matrix[i][j]).norm());
            }
        }
        m
    }
}

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// `|a⟩⟨b|` on one qubit as Paulis.
fn qubit_outer(a: usize, b: usize) -> ComplexPauliSum {
    let mut s = ComplexPauliSum::new(1);
    let i = PauliString::identity(1);
    let x = PauliString::from_factors(1, &[(0, Pauli::X)]).unwrap();
    let y = PauliString::from_factors(1, &[(0, Pauli::Y)]).unwrap();
    let z = PauliString::from_factors(1, &[(0, Pauli::Z)]).unwrap();
    match (a, b) {
        (0, 0) => {
            s.add(c(0.5), i);
            s.add(c(0.5), z);
        }
        (1, 1) => {
            s.add(c(0.5), i);
            s.add(c(-0.5), z);
        }
        (0, 1) => {
            s.add(c(0.5), x);
            s.add(Complex64::new(0.0, 0.5), y);
        }
        _ => {
            s.add(c(0.5), x);
            s.add(Complex64::new(0.0, -0.5), y);
        }
    }
    s
}

/// `|a⟩⟨b|` on `n` qubits, with `a`/`b` read most-significant-first.
fn register_outer(a: usize, b: usize, n: usize) -> ComplexPauliSum {
    let mut acc = ComplexPauliSum::new(0);
    acc.add(c(1.0), PauliString::identity(0));
    for k in (0..n).rev() {
        acc = acc.kron(&qubit_outer((a >> k) & 1, (b >> k) & 1));
    }
    acc
}

/// Encoded operator on the site's own `n` qubits.
fn encode_local(op: &SpinSiteOperator, enc: EncodingKind) -> ComplexPauliSum {
    let n = enc.qubits_per_site();
    if enc == EncodingKind::Multiplet {
        return multiplet_local(op);
    }
    let mut out = ComplexPauliSum::new(n);
    for i in 0..3 {
        for j in 0..3 {
            let cij = op.matrix[i][j];
            if cij.norm() == 0.0 {
                continue;
            }
            for &(bi, ai) in enc.level_image(i) {
                for &(bj, aj) in enc.level_image(j) {
                    for (p, v) in register_outer(bi, bj, n).terms {
                        out.add(cij * ai * aj * v, p);
                    }
                }
            }
        }
    }
    out
}

fn multiplet_spin(alpha: Pauli) -> ComplexPauliSum {
    let mut s = ComplexPauliSum::new(2);
    s.add(c(0.5), PauliString::from_factors(2, &[(0, alpha)]).unwrap());
    s.add(c(0.5), PauliString::from_factors(2, &[(1, alpha)]).unwrap());
    s
}

fn sum_of(parts: &[(Complex64, &ComplexPauliSum)], n: usize) -> ComplexPauliSum {
    let mut out = ComplexPauliSum::new(n);
    for (w, part) in parts {
        for (p, v) in &part.terms {
            out.add(*w * *v, *p);
        }
    }
    out
}

/// The nine spin-1 multipoles spanning all 3×3 operators: identity, the three
/// spin components, and five quadratic combinations.
fn multipole_basis() -> [SpinSiteOperator; 9] {
    let (x, y, z) = (SpinSiteOperator::sx(), SpinSiteOperator::sy(), SpinSiteOperator::sz());
    let anti = |a: &SpinSiteOperator, b: &SpinSiteOperator| a.mul(b).add(&b.mul(a));
    [
        SpinSiteOperator::identity(),
        x,
        y,
        z,
        z.mul(&z),
        x.mul(&x).combine(&y.mul(&y), c(-1.0)),
        anti(&x, &y),
        anti(&x, &z),
        anti(&y, &z),
    ]
}

fn multiplet_local(op: &SpinSiteOperator) -> ComplexPauliSum {
    let sx = multiplet_spin(Pauli::X);
    let sy = multiplet_spin(Pauli::Y);
    let sz = multiplet_spin(Pauli::Z);
    let (xx, yy, zz) = (sx.mul(&sx), sy.mul(&sy), sz.mul(&sz));
    let anti = |a: &ComplexPauliSum, b: &ComplexPauliSum| sum_of(&[(c(1.0), &a.mul(b)), (c(1.0), &b.mul(a))], 2);
    // identity on the spin-1 space is ½ Σ_α (S^α)²
    let ident = sum_of(&[(c(0.5), &xx), (c(0.5), &yy), (c(0.5), &zz)], 2);
    let encoded = [
        ident,
        sx.clone(),
        sy.clone(),
        sz.clone(),
        zz.clone(),
        sum_of(&[(c(1.0), &xx), (c(-1.0), &yy)], 2),
        anti(&sx, &sy),
        anti(&sx, &sz),
        anti(&sy, &sz),
    ];

    let basis = multipole_basis();
    let a = DMatrix::from_fn(9, 9, |r, k| basis[k].matrix[r / 3][r % 3]);
    let rhs = DVector::from_fn(9, |r, _| op.matrix[r / 3][r % 3]);
    let coeffs = a.lu().solve(&rhs).expect("multipole basis is complete");

    let mut out = ComplexPauliSum::new(2);
    for (k, part) in encoded.iter().enumerate() {
        let w = coeffs[k];
        if w.norm() < 1e-15 {
            continue;
        }
        for (p, v) in &part.terms {
            out.add(w * *v, *p);
        }
    }
    out
}

fn check_site(site: usize, chain_len: usize) -> Result<()> {
    if site == 0 || site > chain_len {
        return Err(Error::SiteOutOfRange {
            site,
            len: chain_len,
        });
    }
    Ok(())
}

/// Places a site-local operator at 1-based `site` of a chain of `chain_len`.
fn embed_local(local: &ComplexPauliSum, site: usize, enc: EncodingKind, chain_len: usize) -> ComplexPauliSum {
    let n = enc.qubits_per_site();
    let mut left = ComplexPauliSum::new(n * (site - 1));
    left.add(c(1.0), PauliString::identity(n * (site - 1)));
    let mut right = ComplexPauliSum::new(n * (chain_len - site));
    right.add(c(1.0), PauliString::identity(n * (chain_len - site)));
    left.kron(local).kron(&right)
}

/// Encoded qubit form of a single-site spin-1 operator, acting as identity
/// on every other site.
pub fn encode_operator(
    op: &SpinSiteOperator,
    site: usize,
    enc: EncodingKind,
    chain_len: usize,
) -> Result<PauliSum> {
    check_site(site, chain_len)?;
    embed_local(&encode_local(op, enc), site, enc, chain_len).into_real()
}

/// Encoded `(S^x, S^y, S^z)` at one site.
pub fn encoded_spin(site: usize, enc: EncodingKind, chain_len: usize) -> Result<[PauliSum; 3]> {
    Ok([
        encode_operator(&SpinSiteOperator::sx(), site, enc, chain_len)?,
        encode_operator(&SpinSiteOperator::sy(), site, enc, chain_len)?,
        encode_operator(&SpinSiteOperator::sz(), site, enc, chain_len)?,
    ])
}

/// `P_j = ½ Σ_α (S̃^α_j)²`, the projector onto the encoded spin-1 levels of
/// site `j`.
pub fn site_projector(site: usize, enc: EncodingKind, chain_len: usize) -> Result<PauliSum> {
    let spins = encoded_spin(site, enc, chain_len)?;
    let mut acc = PauliSum::zero(enc.n_qubits(chain_len));
    for s in &spins {
        acc = acc.add(&s.multiply(s)?)?;
    }
    Ok(acc.scale(0.5))
}

/// Precomputed site projectors for repeated `⟨⊗_j P_j⟩` evaluation.
#[derive(Debug, Clone)]
pub struct SpinProjector {
    sites: Vec<PauliSum>,
}

impl SpinProjector {
    pub fn new(enc: EncodingKind, chain_len: usize) -> Result<Self> {
        let sites = (1..=chain_len)
            .map(|j| site_projector(j, enc, chain_len))
            .collect::<Result<Vec<_>>>()?;
        Ok(SpinProjector { sites })
    }

    /// `⟨ψ| ⊗_j P_j |ψ⟩`.
    pub fn expectation(&self, psi: &StateVector) -> Result<f64> {
        psi.check_normalized()?;
        let mut work = psi.amplitudes().to_vec();
        let mut scratch = vec![Complex64::new(0.0, 0.0); work.len()];
        for p in &self.sites {
            if p.n_qubits() != psi.n_qubits() {
                return Err(Error::DimensionMismatch {
                    expected: 1usize << p.n_qubits(),
                    got: psi.dim(),
                });
            }
            p.apply_raw(&work, &mut scratch);
            std::mem::swap(&mut work, &mut scratch);
        }
        let v: Complex64 = psi.amplitudes().iter().zip(&work).map(|(a, b)| a.conj() * b).sum();
        Ok(v.re)
    }
}

/// `⟨ψ| ⊗_j P_j |ψ⟩` for a chain of `chain_len` sites.
pub fn global_projector_expectation(psi: &StateVector, enc: EncodingKind, chain_len: usize) -> Result<f64> {
    SpinProjector::new(enc, chain_len)?.expectation(psi)
}

fn check_register(enc: EncodingKind, chain_len: usize) -> Result<usize> {
    let n = enc.n_qubits(chain_len);
    if n > DEFAULT_MAX_QUBITS {
        return Err(Error::TooManyQubits {
            n,
            cap: DEFAULT_MAX_QUBITS,
        });
    }
    Ok(n)
}

/// Qubit image of one spin configuration as `(index, amplitude)` pairs.
pub fn configuration_image(levels: &[usize], enc: EncodingKind) -> Vec<(usize, f64)> {
    let n = enc.qubits_per_site();
    let mut acc: Vec<(usize, f64)> = vec![(0, 1.0)];
    for &lv in levels {
        let img = enc.level_image(lv);
        acc = acc
            .iter()
            .flat_map(|&(idx, a)| img.iter().map(move |&(b, w)| ((idx << n) | b, a * w)))
            .collect();
    }
    acc
}

/// Encoded computational-basis state of a spin configuration such as `"021"`.
pub fn encode_basis(spins: &str, enc: EncodingKind) -> Result<StateVector> {
    let levels = parse_spins(spins)?;
    let n = check_register(enc, levels.len())?;
    let mut amps = vec![Complex64::new(0.0, 0.0); 1usize << n];
    for (idx, a) in configuration_image(&levels, enc) {
        amps[idx] += a;
    }
    Ok(StateVector::from_raw(n, amps))
}

/// Decodes a spin-1 basis index (site 1 is the most significant base-3 digit)
/// into levels.
pub fn index_to_levels(mut index: usize, chain_len: usize) -> Vec<usize> {
    let mut levels = vec![0; chain_len];
    for k in (0..chain_len).rev() {
        levels[k] = index % 3;
        index /= 3;
    }
    levels
}

/// Applies the encoding isometry to a real spin-1 vector of length `3^L`.
pub fn embed_spin_vector(v: &[f64], enc: EncodingKind, chain_len: usize) -> Result<Vec<Complex64>> {
    let dim = 3usize.pow(chain_len as u32);
    if v.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: v.len(),
        });
    }
    let n = check_register(enc, chain_len)?;
    let mut amps = vec![Complex64::new(0.0, 0.0); 1usize << n];
    for (s, &w) in v.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for (idx, a) in configuration_image(&index_to_levels(s, chain_len), enc) {
            amps[idx] += w * a;
        }
    }
    Ok(amps)
}

/// Adjoint of [`embed_spin_vector`]: `E†ψ` as a complex spin-1 vector.
pub fn project_to_spin(psi: &[Complex64], enc: EncodingKind, chain_len: usize) -> Result<Vec<Complex64>> {
    let n = check_register(enc, chain_len)?;
    if psi.len() != 1usize << n {
        return Err(Error::DimensionMismatch {
            expected: 1usize << n,
            got: psi.len(),
        });
    }
    let dim = 3usize.pow(chain_len as u32);
    Ok((0..dim)
        .map(|s| {
            configuration_image(&index_to_levels(s, chain_len), enc)
                .into_iter()
                .map(|(idx, a)| psi[idx] * a)
                .sum()
        })
        .collect())
}

/// Encoded spin configuration, optionally followed by a Hadamard on every
/// qubit.
pub fn reference_state(spins: &str, basis: ReferenceBasis, enc: EncodingKind) -> Result<StateVector> {
    let s = encode_basis(spins, enc)?;
    Ok(match basis {
        ReferenceBasis::Z => s,
        ReferenceBasis::X => s.hadamard_all(),
    })
}
