//! Spin-1 chain Hamiltonian
//!
//! `H = Σ_bonds J (S^x_i S^x_j + S^y_i S^y_j) + Δ S^z_i S^z_j + Σ_j D (S^z_j)² + h_x S^x_j`
//!
//! realized either as an encoded qubit [`PauliSum`] or as a matrix-free
//! operator on the native `3^L` spin-1 basis.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoding::{encoded_spin, EncodingKind};
use crate::error::{Error, Result};
use crate::pauli::PauliSum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    #[default]
    Open,
    Periodic,
    /// Periodic with the sign of the boundary bond's planar exchange flipped.
    Twisted,
}

impl fmt::Display for Boundary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Boundary::Open => "open",
            Boundary::Periodic => "periodic",
            Boundary::Twisted => "twisted",
        })
    }
}

impl FromStr for Boundary {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "open" => Ok(Boundary::Open),
            "periodic" => Ok(Boundary::Periodic),
            "twisted" => Ok(Boundary::Twisted),
            _ => Err(Error::UnknownName {
                kind: "boundary",
                value: s.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelFamily {
    /// Blume-Capel: `J = 0`.
    Bc,
    /// Anisotropic XXZ: `h_x = 0`.
    Xxz,
    #[default]
    General,
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelFamily::Bc => "bc",
            ModelFamily::Xxz => "xxz",
            ModelFamily::General => "general",
        })
    }
}

impl FromStr for ModelFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bc" => Ok(ModelFamily::Bc),
            "xxz" => Ok(ModelFamily::Xxz),
            "general" => Ok(ModelFamily::General),
            _ => Err(Error::UnknownName {
                kind: "model",
                value: s.to_string(),
            }),
        }
    }
}

/// Parameters of the chain. Field names follow the run-config keys.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(default)]
    pub model: ModelFamily,
    #[serde(rename = "L")]
    pub chain_len: usize,
    #[serde(rename = "J", default)]
    pub j: f64,
    #[serde(default)]
    pub delta: f64,
    #[serde(rename = "Dz", default)]
    pub d: f64,
    #[serde(default)]
    pub hx: f64,
    #[serde(default)]
    pub boundary: Boundary,
}

impl ModelSpec {
    pub fn blume_capel(chain_len: usize, delta: f64, d: f64, hx: f64) -> Self {
        ModelSpec {
            model: ModelFamily::Bc,
            chain_len,
            j: 0.0,
            delta,
            d,
            hx,
            boundary: Boundary::Open,
        }
    }

    pub fn xxz(chain_len: usize, j: f64, delta: f64, d: f64) -> Self {
        ModelSpec {
            model: ModelFamily::Xxz,
            chain_len,
            j,
            delta,
            d,
            hx: 0.0,
            boundary: Boundary::Open,
        }
    }

    pub fn general(chain_len: usize, j: f64, delta: f64, d: f64, hx: f64) -> Self {
        ModelSpec {
            model: ModelFamily::General,
            chain_len,
            j,
            delta,
            d,
            hx,
            boundary: Boundary::Open,
        }
    }

    pub fn with_boundary(mut self, boundary: Boundary) -> Self {
        self.boundary = boundary;
        self
    }

    pub fn with_len(mut self, chain_len: usize) -> Self {
        self.chain_len = chain_len;
        self
    }

    /// Checks parameters and that the family preset pins its parameter.
    pub fn validate(&self) -> Result<()> {
        if self.chain_len == 0 {
            return Err(Error::Invalid("chain length must be at least 1".into()));
        }
        for (name, v) in [("J", self.j), ("delta", self.delta), ("Dz", self.d), ("hx", self.hx)] {
            if !v.is_finite() {
                return Err(Error::Invalid(format!("{name} is not finite")));
            }
        }
        match self.model {
            ModelFamily::Bc if self.j != 0.0 => Err(Error::Invalid("bc model requires J = 0".into())),
            ModelFamily::Xxz if self.hx != 0.0 => Err(Error::Invalid("xxz model requires hx = 0".into())),
            _ => Ok(()),
        }
    }

    /// Nearest-neighbour bonds as `(i, j, planar_sign)` with 0-based sites.
    pub fn bonds(&self) -> Vec<(usize, usize, f64)> {
        let l = self.chain_len;
        let mut out: Vec<(usize, usize, f64)> = (0..l.saturating_sub(1)).map(|k| (k, k + 1, 1.0)).collect();
        if l >= 2 {
            match self.boundary {
                Boundary::Open => {}
                Boundary::Periodic => out.push((l - 1, 0, 1.0)),
                Boundary::Twisted => out.push((l - 1, 0, -1.0)),
            }
        }
        out
    }

    pub fn spin_dim(&self) -> usize {
        3usize.pow(self.chain_len as u32)
    }
}

/// Encoded qubit Hamiltonian; every operator product is formed by
/// multiplying encoded single-site factors.
pub fn build_qubit_hamiltonian(spec: &ModelSpec, enc: EncodingKind) -> Result<PauliSum> {
    spec.validate()?;
    let l = spec.chain_len;
    let n = enc.n_qubits(l);
    let spins = (1..=l)
        .map(|site| encoded_spin(site, enc, l))
        .collect::<Result<Vec<_>>>()?;
    let mut h = PauliSum::zero(n);
    for (a, b, sign) in spec.bonds() {
        let [xa, ya, za] = &spins[a];
        let [xb, yb, zb] = &spins[b];
        if spec.j != 0.0 {
            let planar = xa.multiply(xb)?.add(&ya.multiply(yb)?)?;
            h = h.add(&planar.scale(spec.j * sign))?;
        }
        if spec.delta != 0.0 {
            h = h.add(&za.multiply(zb)?.scale(spec.delta))?;
        }
    }
    for [x, _, z] in &spins {
        if spec.d != 0.0 {
            h = h.add(&z.multiply(z)?.scale(spec.d))?;
        }
        if spec.hx != 0.0 {
            h = h.add(&x.scale(spec.hx))?;
        }
    }
    Ok(h)
}

/// Matrix-free Hamiltonian on the `3^L` spin-1 basis. Site 1 is the most
/// significant base-3 digit; digit `ℓ` carries `m = 1 − ℓ`.
#[derive(Debug, Clone)]
pub struct Spin1Hamiltonian {
    spec: ModelSpec,
    pow3: Vec<usize>,
    diag: Vec<f64>,
}

#[inline]
fn digit(s: usize, p: usize) -> usize {
    (s / p) % 3
}

impl Spin1Hamiltonian {
    pub fn new(spec: &ModelSpec) -> Result<Self> {
        spec.validate()?;
        let l = spec.chain_len;
        // pow3[k] is the place value of site k (0-based)
        let pow3: Vec<usize> = (0..l).map(|k| 3usize.pow((l - 1 - k) as u32)).collect();
        let bonds = spec.bonds();
        let dim = spec.spin_dim();
        let diag = (0..dim)
            .into_par_iter()
            .map(|s| {
                let m = |k: usize| 1.0 - digit(s, pow3[k]) as f64;
                let mut e = 0.0;
                for &(a, b, _) in &bonds {
                    e += spec.delta * m(a) * m(b);
                }
                for k in 0..l {
                    e += spec.d * m(k) * m(k);
                }
                e
            })
            .collect();
        Ok(Spin1Hamiltonian {
            spec: *spec,
            pow3,
            diag,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }

    /// `(H v)_s` for one output entry.
    fn row_dot(&self, s: usize, v: &[f64], bonds: &[(usize, usize, f64)]) -> f64 {
        let hx = self.spec.hx * std::f64::consts::FRAC_1_SQRT_2;
        let mut acc = self.diag[s] * v[s];
        if hx != 0.0 {
            for &p in &self.pow3 {
                let lv = digit(s, p);
                if lv > 0 {
                    acc += hx * v[s - p];
                }
                if lv < 2 {
                    acc += hx * v[s + p];
                }
            }
        }
        if self.spec.j != 0.0 {
            // J (S^x S^x + S^y S^y) = (J/2)(S^+ S^- + S^- S^+); each allowed
            // flip-flop has matrix element J
            for &(a, b, sign) in bonds {
                let (pa, pb) = (self.pow3[a], self.pow3[b]);
                let (la, lb) = (digit(s, pa), digit(s, pb));
                let w = self.spec.j * sign;
                if la < 2 && lb > 0 {
                    acc += w * v[s + pa - pb];
                }
                if la > 0 && lb < 2 {
                    acc += w * v[s - pa + pb];
                }
            }
        }
        acc
    }

    /// `out = H v`.
    pub fn apply(&self, v: &[f64], out: &mut [f64]) -> Result<()> {
        let dim = self.dim();
        if v.len() != dim || out.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: v.len().min(out.len()),
            });
        }
        self.apply_unchecked(v, out);
        Ok(())
    }

    pub(crate) fn apply_unchecked(&self, v: &[f64], out: &mut [f64]) {
        let dim = self.dim();
        let bonds = self.spec.bonds();
        if dim >= 4096 {
            out.par_iter_mut()
                .enumerate()
                .for_each(|(s, o)| *o = self.row_dot(s, v, &bonds));
        } else {
            for (s, o) in out.iter_mut().enumerate() {
                *o = self.row_dot(s, v, &bonds);
            }
        }
    }

    /// Dense matrix, for small chains.
    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let dim = self.dim();
        let mut m = nalgebra::DMatrix::zeros(dim, dim);
        let bonds = self.spec.bonds();
        let mut e = vec![0.0; dim];
        for col in 0..dim {
            e[col] = 1.0;
            for row in 0..dim {
                m[(row, col)] = self.row_dot(row, &e, &bonds);
            }
            e[col] = 0.0;
        }
        m
    }
}

/// `H v` on the spin-1 basis.
pub fn spin1_matvec(spec: &ModelSpec, v: &[f64]) -> Result<Vec<f64>> {
    let h = Spin1Hamiltonian::new(spec)?;
    let mut out = vec![0.0; h.dim()];
    h.apply(v, &mut out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::SpinSiteOperator;
    use crate::statevector::StateVector;
    use nalgebra::{DMatrix, DVector};
    use num_complex::Complex64;

    type CMat = DMatrix<Complex64>;

    fn site_mat(op: &SpinSiteOperator) -> CMat {
        DMatrix::from_fn(3, 3, |i, j| op.matrix[i][j])
    }

    /// Dense oracle: Kronecker products of the 3x3 spin matrices.
    fn dense_spin_hamiltonian(spec: &ModelSpec) -> CMat {
        let l = spec.chain_len;
        let dim = 3usize.pow(l as u32);
        let place = |op: &CMat, k: usize| {
            let mut m = CMat::identity(1, 1);
            for site in 0..l {
                m = if site == k { m.kronecker(op) } else { m.kronecker(&CMat::identity(3, 3)) };
            }
            m
        };
        let (x, y, z) = (
            site_mat(&SpinSiteOperator::sx()),
            site_mat(&SpinSiteOperator::sy()),
            site_mat(&SpinSiteOperator::sz()),
        );
        let c = |r: f64| Complex64::new(r, 0.0);
        let mut h = CMat::zeros(dim, dim);
        for (a, b, sign) in spec.bonds() {
            h += (place(&x, a) * place(&x, b) + place(&y, a) * place(&y, b)) * c(spec.j * sign);
            h += place(&z, a) * place(&z, b) * c(spec.delta);
        }
        for k in 0..l {
            h += place(&z, k) * place(&z, k) * c(spec.d);
            h += place(&x, k) * c(spec.hx);
        }
        h
    }

    fn dense_qubit(h: &PauliSum) -> CMat {
        let d = 1usize << h.n_qubits();
        let mut m = CMat::zeros(d, d);
        for col in 0..d {
            let e = StateVector::basis_index(h.n_qubits(), col).unwrap();
            let v = crate::pauli::apply_sum(h, &e).unwrap();
            for row in 0..d {
                m[(row, col)] = v[row];
            }
        }
        m
    }

    #[test]
    fn single_site_anisotropy_spectrum() {
        let spec = ModelSpec::general(1, 0.0, 0.0, 1.0, 0.0);
        let h = build_qubit_hamiltonian(&spec, EncodingKind::Standard).unwrap();
        let m = dense_qubit(&h);
        // diagonal in the computational basis: D m² on 00, 01, 10 and 0 on 11
        let diag: Vec<f64> = (0..4).map(|k| m[(k, k)].re).collect();
        assert_eq!(diag, vec![1.0, 0.0, 1.0, 0.0]);
        let mut evs: Vec<f64> = m.map(|a| a.re).symmetric_eigenvalues().iter().copied().collect();
        evs.sort_by(f64::total_cmp);
        for (a, b) in evs.iter().zip([0.0, 0.0, 1.0, 1.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn ising_pair_ground_energy() {
        let spec = ModelSpec::general(2, 0.0, -1.0, 0.0, 0.0);
        let spin = dense_spin_hamiltonian(&spec);
        let min = (0..9).map(|k| spin[(k, k)].re).fold(f64::INFINITY, f64::min);
        assert_eq!(min, -1.0);
        for enc in EncodingKind::ALL {
            let h = build_qubit_hamiltonian(&spec, enc).unwrap();
            let restricted = restrict(&h, enc, 2);
            let evs = restricted.symmetric_eigenvalues();
            let e0 = evs.iter().copied().fold(f64::INFINITY, f64::min);
            assert!((e0 + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn all_zero_is_empty() {
        let spec = ModelSpec::general(3, 0.0, 0.0, 0.0, 0.0);
        assert!(build_qubit_hamiltonian(&spec, EncodingKind::Gray).unwrap().is_empty());
    }

    /// `E† H E` on the embedded spin-1 basis, real part.
    fn restrict(h: &PauliSum, enc: EncodingKind, l: usize) -> DMatrix<f64> {
        let dim = 3usize.pow(l as u32);
        let cols: Vec<Vec<Complex64>> = (0..dim)
            .map(|s| {
                let mut v = vec![0.0; dim];
                v[s] = 1.0;
                crate::encoding::embed_spin_vector(&v, enc, l).unwrap()
            })
            .collect();
        let n = enc.n_qubits(l);
        let hcols: Vec<Vec<Complex64>> = cols
            .iter()
            .map(|c| crate::pauli::apply_sum(h, &StateVector::from_raw(n, c.clone())).unwrap())
            .collect();
        DMatrix::from_fn(dim, dim, |r, c| {
            let v: Complex64 = cols[r].iter().zip(&hcols[c]).map(|(a, b)| a.conj() * b).sum();
            assert!(v.im.abs() < 1e-12);
            v.re
        })
    }

    #[test]
    fn matvec_matches_dense_oracle() {
        for spec in [
            ModelSpec::general(2, 0.7, -0.3, 0.4, -1.1),
            ModelSpec::general(3, 1.0, 0.1, 0.385, 0.0).with_boundary(Boundary::Periodic),
            ModelSpec::general(3, 1.0, 0.1, 0.385, 0.2).with_boundary(Boundary::Twisted),
        ] {
            let dense = dense_spin_hamiltonian(&spec);
            assert!(dense.map(|a| a.im.abs()).max() < 1e-14);
            let h = Spin1Hamiltonian::new(&spec).unwrap();
            let mine = h.to_dense();
            assert!((mine - dense.map(|a| a.re)).abs().max() < 1e-13);

            let v: Vec<f64> = (0..spec.spin_dim()).map(|k| ((k * 7 + 3) % 11) as f64 - 5.0).collect();
            let got = spin1_matvec(&spec, &v).unwrap();
            let want = dense.map(|a| a.re) * DVector::from_vec(v);
            for (a, b) in got.iter().zip(want.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn diagonal_basis_action() {
        let spec = ModelSpec::general(3, 0.0, 0.7, -0.4, 0.0);
        // "021": m = (+1, -1, 0)
        let s = 0 * 9 + 2 * 3 + 1;
        let mut v = vec![0.0; 27];
        v[s] = 1.0;
        let out = spin1_matvec(&spec, &v).unwrap();
        let expected = 0.7 * (1.0 * -1.0 + -1.0 * 0.0) + -0.4 * (1.0 + 1.0 + 0.0);
        assert!((out[s] - expected).abs() < 1e-15);
        assert_eq!(out.iter().filter(|a| **a != 0.0).count(), 1);
    }

    #[test]
    fn matvec_linear() {
        let spec = ModelSpec::general(4, 1.0, 0.3, -0.2, 0.5);
        let u: Vec<f64> = (0..81).map(|k| (k as f64 * 0.37).sin()).collect();
        let w: Vec<f64> = (0..81).map(|k| (k as f64 * 1.1).cos()).collect();
        let mix: Vec<f64> = u.iter().zip(&w).map(|(a, b)| 2.0 * a - 0.5 * b).collect();
        let hu = spin1_matvec(&spec, &u).unwrap();
        let hw = spin1_matvec(&spec, &w).unwrap();
        let hm = spin1_matvec(&spec, &mix).unwrap();
        for k in 0..81 {
            assert!((hm[k] - (2.0 * hu[k] - 0.5 * hw[k])).abs() < 1e-12);
        }
        assert!(spin1_matvec(&spec, &u[..80]).is_err());
    }

    #[test]
    fn encoded_spectrum_matches_spin_spectrum() {
        for spec in [
            ModelSpec::blume_capel(2, -1.0, -0.1, -1.405),
            ModelSpec::xxz(3, 1.0, 0.1, 0.385),
        ] {
            let dense = dense_spin_hamiltonian(&spec).map(|a| a.re);
            let mut want: Vec<f64> = dense.symmetric_eigenvalues().iter().copied().collect();
            want.sort_by(f64::total_cmp);
            for enc in EncodingKind::ALL {
                let h = build_qubit_hamiltonian(&spec, enc).unwrap();
                let mut got: Vec<f64> = restrict(&h, enc, spec.chain_len)
                    .symmetric_eigenvalues()
                    .iter()
                    .copied()
                    .collect();
                got.sort_by(f64::total_cmp);
                for (a, b) in got.iter().zip(&want) {
                    assert!((a - b).abs() < 1e-10, "{enc}");
                }
            }
        }
    }

    #[test]
    fn hamiltonian_commutes_with_projector() {
        for enc in EncodingKind::ALL {
            let spec = ModelSpec::general(2, 0.8, 0.3, -0.2, 0.6);
            let h = build_qubit_hamiltonian(&spec, enc).unwrap();
            let mut p = PauliSum::identity(enc.n_qubits(2));
            for site in 1..=2 {
                p = p.multiply(&crate::encoding::site_projector(site, enc, 2).unwrap()).unwrap();
            }
            assert!(h.commutator(&p).unwrap().is_empty(), "{enc}");
        }
    }

    #[test]
    fn presets_and_parsing() {
        let mut bad = ModelSpec::blume_capel(3, -1.0, 0.0, 1.0);
        bad.j = 0.5;
        assert!(bad.validate().is_err());
        let mut bad = ModelSpec::xxz(3, 1.0, 0.0, 0.0);
        bad.hx = 0.1;
        assert!(bad.validate().is_err());
        assert_eq!("twisted".parse::<Boundary>().unwrap(), Boundary::Twisted);
        assert_eq!(ModelSpec::xxz(4, 1.0, 0.0, 0.0).with_boundary(Boundary::Periodic).bonds().len(), 4);
        assert_eq!(ModelSpec::xxz(1, 1.0, 0.0, 0.0).bonds().len(), 0);
    }
}
