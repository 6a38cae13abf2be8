//! Exact diagonalization in the native spin-1 basis.
//!
//! Small problems (dimension below [`DENSE_LIMIT`]) are diagonalized densely;
//! larger ones go through a restarted Lanczos iteration with full
//! reorthogonalization, locking converged eigenvectors one at a time so that
//! degenerate levels are resolved.
//!
//! Also hosts the finite-size phase-transition locators: Binder cumulant
//! crossings and the twisted-boundary symmetry-sector level crossing.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoding::{embed_spin_vector, index_to_levels, EncodingKind};
use crate::error::{Error, Result};
use crate::model::{Boundary, ModelSpec, Spin1Hamiltonian};
use crate::statevector::{inner_raw, StateVector};

pub const DENSE_LIMIT: usize = 1000;
pub const DEGENERACY_TOL: f64 = 1e-10;
pub const RESIDUAL_TOL: f64 = 1e-9;

/// A real symmetric operator applied matrix-free.
pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

impl LinearOperator for Spin1Hamiltonian {
    fn dim(&self) -> usize {
        Spin1Hamiltonian::dim(self)
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.apply_unchecked(x, y);
    }
}

impl LinearOperator for DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (r, o) in y.iter_mut().enumerate() {
            *o = self.row(r).iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdResult {
    /// Ascending.
    pub energies: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
    pub degeneracy_tol: f64,
}

impl EdResult {
    pub fn ground_energy(&self) -> f64 {
        self.energies[0]
    }

    /// Number of returned levels degenerate with the lowest one.
    pub fn ground_degeneracy(&self) -> usize {
        let e0 = self.energies[0];
        let tol = self.degeneracy_tol * e0.abs().max(1.0);
        self.energies.iter().take_while(|e| (*e - e0).abs() <= tol).count()
    }

    pub fn ground_space(&self) -> &[Vec<f64>] {
        &self.states[..self.ground_degeneracy()]
    }

    /// True when every returned level is degenerate with the ground level,
    /// so the ground space may extend beyond what was computed.
    pub fn ground_space_may_be_truncated(&self) -> bool {
        self.ground_degeneracy() == self.energies.len()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(b, a)| *b += alpha * a);
}

fn residual_norm<O: LinearOperator + ?Sized>(op: &O, e: f64, v: &[f64]) -> f64 {
    let mut hv = vec![0.0; v.len()];
    op.apply(v, &mut hv);
    axpy(-e, v, &mut hv);
    norm(&hv)
}

/// Lowest `k` eigenpairs by dense diagonalization.
pub fn dense_lowest<O: LinearOperator + ?Sized>(op: &O, k: usize) -> Result<EdResult> {
    let dim = op.dim();
    let mut m = DMatrix::<f64>::zeros(dim, dim);
    let mut e = vec![0.0; dim];
    let mut col = vec![0.0; dim];
    for c in 0..dim {
        e[c] = 1.0;
        op.apply(&e, &mut col);
        e[c] = 0.0;
        for r in 0..dim {
            m[(r, c)] = col[r];
        }
    }
    // symmetrize away roundoff before the eigensolver
    let m = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let k = k.min(dim);
    let mut out = EdResult {
        energies: Vec::with_capacity(k),
        states: Vec::with_capacity(k),
        residuals: Vec::with_capacity(k),
        degeneracy_tol: DEGENERACY_TOL,
    };
    for &i in order.iter().take(k) {
        let v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
        let ev = eig.eigenvalues[i];
        out.residuals.push(residual_norm(op, ev, &v));
        out.energies.push(ev);
        out.states.push(v);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
pub struct LanczosOptions {
    pub krylov_dim: usize,
    pub max_restarts: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        LanczosOptions {
            krylov_dim: 120,
            max_restarts: 200,
            tol: RESIDUAL_TOL,
            seed: 0x5eed,
        }
    }
}

fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    // classical Gram-Schmidt, twice
    for _ in 0..2 {
        for b in basis {
            let c = dot(b, v);
            axpy(-c, b, v);
        }
    }
}

/// Lowest eigenpair of `op` in the orthogonal complement of `locked`.
fn lanczos_lowest_one<O: LinearOperator + ?Sized>(
    op: &O,
    locked: &[Vec<f64>],
    opts: &LanczosOptions,
) -> Result<(f64, Vec<f64>, f64)> {
    let dim = op.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ (locked.len() as u64).wrapping_mul(0x9e37_79b9));
    let mut start: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let m_max = opts.krylov_dim.min(dim - locked.len()).max(1);
    let mut last_residual = f64::INFINITY;

    for _restart in 0..opts.max_restarts {
        orthogonalize(&mut start, locked);
        let nrm = norm(&start);
        if nrm == 0.0 {
            return Err(Error::Degenerate("Lanczos start vector vanished".into()));
        }
        start.iter_mut().for_each(|a| *a /= nrm);

        let mut q: Vec<Vec<f64>> = vec![start.clone()];
        let mut alpha = Vec::with_capacity(m_max);
        let mut beta: Vec<f64> = Vec::with_capacity(m_max);
        let mut w = vec![0.0; dim];
        loop {
            let j = q.len() - 1;
            op.apply(&q[j], &mut w);
            let a = dot(&q[j], &w);
            alpha.push(a);
            orthogonalize(&mut w, locked);
            orthogonalize(&mut w, &q);
            let b = norm(&w);
            if q.len() >= m_max || b < 1e-12 * a.abs().max(1.0) {
                break;
            }
            beta.push(b);
            q.push(w.iter().map(|x| x / b).collect());
        }

        let m = alpha.len();
        let t = DMatrix::from_fn(m, m, |r, c| {
            if r == c {
                alpha[r]
            } else if r + 1 == c {
                beta[r]
            } else if c + 1 == r {
                beta[c]
            } else {
                0.0
            }
        });
        let eig = SymmetricEigen::new(t);
        let (imin, &theta) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty tridiagonal");
        let y = eig.eigenvectors.column(imin);
        let mut v = vec![0.0; dim];
        for (coef, qi) in y.iter().zip(&q) {
            axpy(*coef, qi, &mut v);
        }
        orthogonalize(&mut v, locked);
        let nv = norm(&v);
        v.iter_mut().for_each(|a| *a /= nv);
        let res = residual_norm(op, theta, &v);
        last_residual = res;
        if res < opts.tol * theta.abs().max(1.0) {
            return Ok((theta, v, res));
        }
        start = v;
    }
    Err(Error::NoConvergence {
        iterations: opts.max_restarts,
        residual: last_residual,
    })
}

/// Lowest `k` eigenpairs by restarted Lanczos with locking.
pub fn lanczos_lowest<O: LinearOperator + ?Sized>(op: &O, k: usize, opts: &LanczosOptions) -> Result<EdResult> {
    let k = k.min(op.dim());
    let mut locked: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut energies = Vec::with_capacity(k);
    let mut residuals = Vec::with_capacity(k);
    for _ in 0..k {
        let (e, v, r) = lanczos_lowest_one(op, &locked, opts)?;
        energies.push(e);
        residuals.push(r);
        locked.push(v);
    }
    // locking can find levels out of order when a start vector is nearly
    // orthogonal to a lower state
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| energies[a].total_cmp(&energies[b]));
    Ok(EdResult {
        energies: order.iter().map(|&i| energies[i]).collect(),
        states: order.iter().map(|&i| locked[i].clone()).collect(),
        residuals: order.iter().map(|&i| residuals[i]).collect(),
        degeneracy_tol: DEGENERACY_TOL,
    })
}

/// Dense below [`DENSE_LIMIT`], Lanczos above.
pub fn lowest_eigenpairs<O: LinearOperator + ?Sized>(op: &O, k: usize) -> Result<EdResult> {
    if op.dim() < DENSE_LIMIT {
        dense_lowest(op, k)
    } else {
        lanczos_lowest(op, k, &LanczosOptions::default())
    }
}

/// Lowest `k` eigenpairs of the chain.
pub fn ground_state(spec: &ModelSpec, k: usize) -> Result<EdResult> {
    let h = Spin1Hamiltonian::new(spec)?;
    lowest_eigenpairs(&h, k.max(1))
}

/// Ground state with enough levels to hold the whole degenerate ground
/// space.
pub fn ground_space(spec: &ModelSpec) -> Result<EdResult> {
    let h = Spin1Hamiltonian::new(spec)?;
    let mut k = 4;
    loop {
        let r = lowest_eigenpairs(&h, k)?;
        if !r.ground_space_may_be_truncated() || k >= h.dim() {
            return Ok(r);
        }
        k *= 2;
    }
}

/// `Σ_{Ψ ∈ ground space} |⟨ψ_av|E Ψ⟩|²` with `E` the encoding isometry.
pub fn fidelity(psi: &StateVector, ed: &EdResult, enc: EncodingKind) -> Result<f64> {
    let dim = ed.states.first().map(|s| s.len()).unwrap_or(0);
    let chain_len = spin_chain_len(dim)?;
    let embedded = embedded_ground_space(ed, enc, chain_len)?;
    fidelity_embedded(psi, &embedded)
}

fn spin_chain_len(dim: usize) -> Result<usize> {
    let mut l = 0;
    let mut p = 1;
    while p < dim {
        p *= 3;
        l += 1;
    }
    if p != dim || dim == 0 {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: dim,
        });
    }
    Ok(l)
}

/// Ground-space members mapped into the qubit register.
pub fn embedded_ground_space(ed: &EdResult, enc: EncodingKind, chain_len: usize) -> Result<Vec<Vec<Complex64>>> {
    ed.ground_space()
        .iter()
        .map(|v| embed_spin_vector(v, enc, chain_len))
        .collect()
}

pub fn fidelity_embedded(psi: &StateVector, ground: &[Vec<Complex64>]) -> Result<f64> {
    let mut f = 0.0;
    for g in ground {
        if g.len() != psi.dim() {
            return Err(Error::DimensionMismatch {
                expected: g.len(),
                got: psi.dim(),
            });
        }
        f += inner_raw(psi.amplitudes(), g).norm_sqr();
    }
    Ok(f)
}

/// Per-basis-state magnetization `m = Σ_i S^z_i / L`.
fn magnetization_diagonal(chain_len: usize) -> Vec<f64> {
    let dim = 3usize.pow(chain_len as u32);
    (0..dim)
        .map(|s| {
            index_to_levels(s, chain_len)
                .iter()
                .map(|&lv| 1.0 - lv as f64)
                .sum::<f64>()
                / chain_len as f64
        })
        .collect()
}

/// `(⟨m²⟩, ⟨m⁴⟩)` averaged uniformly over `states`.
pub fn magnetization_moments(states: &[Vec<f64>], chain_len: usize) -> Result<(f64, f64)> {
    let mag = magnetization_diagonal(chain_len);
    let mut m2 = 0.0;
    let mut m4 = 0.0;
    for v in states {
        if v.len() != mag.len() {
            return Err(Error::DimensionMismatch {
                expected: mag.len(),
                got: v.len(),
            });
        }
        let nn = dot(v, v);
        // apply the diagonal operator twice / four times
        let mv: Vec<f64> = v.iter().zip(&mag).map(|(a, m)| a * m).collect();
        let mmv: Vec<f64> = mv.iter().zip(&mag).map(|(a, m)| a * m).collect();
        m2 += dot(v, &mmv) / nn;
        m4 += dot(&mmv, &mmv) / nn;
    }
    let k = states.len() as f64;
    Ok((m2 / k, m4 / k))
}

/// `U = 1 − ⟨m⁴⟩ / (3⟨m²⟩²)` averaged over `states`.
pub fn binder_from_states(states: &[Vec<f64>], chain_len: usize) -> Result<f64> {
    let (m2, m4) = magnetization_moments(states, chain_len)?;
    if m2 < 1e-14 {
        return Err(Error::Degenerate(format!("<m^2> = {m2:e}; Binder cumulant undefined")));
    }
    Ok(1.0 - m4 / (3.0 * m2 * m2))
}

/// Binder cumulant in the exact ground state (ground space averaged).
pub fn binder_cumulant(spec: &ModelSpec) -> Result<f64> {
    let ed = ground_space(spec)?;
    binder_from_states(ed.ground_space(), spec.chain_len)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanSeries {
    pub label: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossingScan {
    pub parameter: String,
    pub boundary: Boundary,
    pub grid: Vec<f64>,
    pub series: Vec<ScanSeries>,
    /// One refined crossing per compared pair.
    pub pair_crossings: Vec<f64>,
    pub crossing: f64,
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 {
        return Err(Error::Invalid("scan grid needs at least two points".into()));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) || grid.iter().any(|g| !g.is_finite()) {
        return Err(Error::Invalid("scan grid must be finite and strictly increasing".into()));
    }
    Ok(())
}

/// First sign change of `values` on the grid, refined by bisection on `f`.
fn locate_sign_change<F>(grid: &[f64], values: &[f64], what: &str, f: F) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    let k = values
        .windows(2)
        .position(|w| w[0] == 0.0 || w[0].signum() != w[1].signum())
        .ok_or_else(|| Error::NoBracket { what: what.to_string() })?;
    if values[k] == 0.0 {
        return Ok(grid[k]);
    }
    let (mut lo, mut hi) = (grid[k], grid[k + 1]);
    let mut flo = values[k];
    for _ in 0..40 {
        if hi - lo < 1e-6 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let fm = f(mid)?;
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Locates where the Binder curves of adjacent sizes cross as a function of
/// `h_x`, refining each grid bracket by bisection.
pub fn binder_crossing(template: &ModelSpec, sizes: &[usize], h_grid: &[f64]) -> Result<CrossingScan> {
    check_grid(h_grid)?;
    if sizes.len() < 2 {
        return Err(Error::Invalid("Binder crossing needs at least two sizes".into()));
    }
    if sizes.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Degenerate("identical sizes give an identically zero difference".into()));
    }
    let binder_at = |l: usize, h: f64| {
        let mut spec = template.with_len(l);
        spec.hx = h;
        binder_cumulant(&spec)
    };
    let series = sizes
        .par_iter()
        .map(|&l| {
            let values = h_grid
                .par_iter()
                .map(|&h| binder_at(l, h))
                .collect::<Result<Vec<f64>>>()?;
            Ok(ScanSeries {
                label: format!("U_L{l}"),
                values,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut pair_crossings = Vec::new();
    for (p, w) in sizes.windows(2).enumerate() {
        let (la, lb) = (w[0], w[1]);
        let diff: Vec<f64> = series[p]
            .values
            .iter()
            .zip(&series[p + 1].values)
            .map(|(a, b)| a - b)
            .collect();
        let x = locate_sign_change(h_grid, &diff, &format!("U_{la} - U_{lb}"), |h| {
            Ok(binder_at(la, h)? - binder_at(lb, h)?)
        })?;
        pair_crossings.push(x);
    }
    let crossing = pair_crossings.iter().sum::<f64>() / pair_crossings.len() as f64;
    Ok(CrossingScan {
        parameter: "hx".into(),
        boundary: template.boundary,
        grid: h_grid.to_vec(),
        series,
        pair_crossings,
        crossing,
    })
}

/// Orthonormal basis of one space-inversion × spin-reversal sector within
/// the zero-magnetization subspace, stored as sparse columns.
#[derive(Debug, Clone)]
pub struct SymmetrySector {
    pub parity: i8,
    pub spin_dim: usize,
    pub columns: Vec<Vec<(usize, f64)>>,
}

impl SymmetrySector {
    /// States with eigenvalue `parity` under both site inversion
    /// `j → L + 1 − j` and spin reversal `m → −m`, restricted to `Σ m = 0`.
    pub fn new(chain_len: usize, parity: i8) -> Result<Self> {
        if parity != 1 && parity != -1 {
            return Err(Error::Invalid("sector parity must be +1 or -1".into()));
        }
        let dim = 3usize.pow(chain_len as u32);
        let encode = |lv: &[usize]| lv.iter().fold(0usize, |acc, &d| acc * 3 + d);
        let s = parity as f64;
        let mut seen = vec![false; dim];
        let mut columns = Vec::new();
        for idx in 0..dim {
            if seen[idx] {
                continue;
            }
            let lv = index_to_levels(idx, chain_len);
            if lv.iter().map(|&d| 1 - d as i64).sum::<i64>() != 0 {
                continue;
            }
            let inv: Vec<usize> = lv.iter().rev().copied().collect();
            let rev: Vec<usize> = lv.iter().map(|&d| 2 - d).collect();
            let both: Vec<usize> = inv.iter().map(|&d| 2 - d).collect();
            let images = [(idx, 1.0), (encode(&inv), s), (encode(&rev), s), (encode(&both), 1.0)];
            let mut col: Vec<(usize, f64)> = Vec::new();
            for (i, w) in images {
                seen[i] = true;
                match col.iter_mut().find(|(j, _)| *j == i) {
                    Some(e) => e.1 += w,
                    None => col.push((i, w)),
                }
            }
            col.retain(|(_, w)| w.abs() > 1e-12);
            let n = col.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
            if n > 0.0 {
                col.iter_mut().for_each(|(_, w)| *w /= n);
                col.sort_by_key(|(i, _)| *i);
                columns.push(col);
            }
        }
        if columns.is_empty() {
            return Err(Error::Degenerate(format!("sector {parity:+} is empty for L = {chain_len}")));
        }
        Ok(SymmetrySector {
            parity,
            spin_dim: dim,
            columns,
        })
    }

    pub fn dim(&self) -> usize {
        self.columns.len()
    }
}

/// `B^T H B` for a sector basis `B`.
pub struct SectorOperator<'a> {
    pub hamiltonian: &'a Spin1Hamiltonian,
    pub sector: &'a SymmetrySector,
}

impl LinearOperator for SectorOperator<'_> {
    fn dim(&self) -> usize {
        self.sector.dim()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let mut full = vec![0.0; self.sector.spin_dim];
        for (col, &c) in self.sector.columns.iter().zip(x) {
            for &(i, w) in col {
                full[i] += c * w;
            }
        }
        let mut hfull = vec![0.0; full.len()];
        self.hamiltonian.apply_unchecked(&full, &mut hfull);
        for (col, o) in self.sector.columns.iter().zip(y.iter_mut()) {
            *o = col.iter().map(|&(i, w)| w * hfull[i]).sum();
        }
    }
}

/// Lowest energies in the `−1` and `+1` sectors.
pub fn sector_energies(spec: &ModelSpec, minus: &SymmetrySector, plus: &SymmetrySector) -> Result<(f64, f64)> {
    let h = Spin1Hamiltonian::new(spec)?;
    let e = |sector: &SymmetrySector| -> Result<f64> {
        let op = SectorOperator {
            hamiltonian: &h,
            sector,
        };
        Ok(lowest_eigenpairs(&op, 1)?.energies[0])
    };
    Ok((e(minus)?, e(plus)?))
}

/// Scans `D` and locates where the lowest `−1`-sector level crosses the
/// lowest `+1`-sector level under twisted boundary conditions.
pub fn sector_crossing(template: &ModelSpec, d_grid: &[f64], chain_len: usize) -> Result<CrossingScan> {
    check_grid(d_grid)?;
    if template.boundary != Boundary::Twisted {
        return Err(Error::Invalid("sector crossing requires twisted boundary conditions".into()));
    }
    if template.hx != 0.0 {
        return Err(Error::Invalid("sector crossing requires hx = 0 (magnetization conservation)".into()));
    }
    let minus = SymmetrySector::new(chain_len, -1)?;
    let plus = SymmetrySector::new(chain_len, 1)?;
    let at = |d: f64| {
        let mut spec = template.with_len(chain_len);
        spec.d = d;
        sector_energies(&spec, &minus, &plus)
    };
    let pairs = d_grid.par_iter().map(|&d| at(d)).collect::<Result<Vec<_>>>()?;
    let e_minus: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let e_plus: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let diff: Vec<f64> = pairs.iter().map(|p| p.0 - p.1).collect();
    let crossing = locate_sign_change(d_grid, &diff, "E(-1) - E(+1)", |d| {
        let (a, b) = at(d)?;
        Ok(a - b)
    })?;
    Ok(CrossingScan {
        parameter: "Dz".into(),
        boundary: Boundary::Twisted,
        grid: d_grid.to_vec(),
        series: vec![
            ScanSeries {
                label: "E_minus".into(),
                values: e_minus,
            },
            ScanSeries {
                label: "E_plus".into(),
                values: e_plus,
            },
        ],
        pair_crossings: vec![crossing],
        crossing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ising_pair_is_doubly_degenerate() {
        let spec = ModelSpec::general(2, 0.0, -1.0, 0.0, 0.0);
        let ed = ground_space(&spec).unwrap();
        assert!((ed.ground_energy() + 1.0).abs() < 1e-12);
        assert_eq!(ed.ground_degeneracy(), 2);
        // configs (+1,+1) = "00" and (-1,-1) = "22"
        for v in ed.ground_space() {
            let w: f64 = v[0] * v[0] + v[8] * v[8];
            assert!((w - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_site_spectrum() {
        let spec = ModelSpec::general(1, 0.0, 0.0, 0.5, 0.0);
        let ed = ground_state(&spec, 3).unwrap();
        for (a, b) in ed.energies.iter().zip([0.0, 0.5, 0.5]) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn dense_and_lanczos_agree() {
        let spec = ModelSpec::blume_capel(3, -1.0, -0.1, -1.405);
        let h = Spin1Hamiltonian::new(&spec).unwrap();
        let d = dense_lowest(&h, 3).unwrap();
        let opts = LanczosOptions {
            krylov_dim: 12,
            ..Default::default()
        };
        let l = lanczos_lowest(&h, 3, &opts).unwrap();
        assert!((d.energies[0] - l.energies[0]).abs() < 1e-9);
        for r in d.residuals.iter().chain(&l.residuals) {
            assert!(*r < 1e-8);
        }
    }

    #[test]
    fn lanczos_resolves_degenerate_levels() {
        let spec = ModelSpec::general(4, 0.0, -1.0, 0.0, 0.0);
        let h = Spin1Hamiltonian::new(&spec).unwrap();
        let l = lanczos_lowest(&h, 3, &LanczosOptions::default()).unwrap();
        assert!((l.energies[0] + 3.0).abs() < 1e-9);
        assert!((l.energies[1] + 3.0).abs() < 1e-9);
        assert!(l.energies[2] > -3.0 + 1e-6);
    }

    #[test]
    fn fidelity_of_embedded_ground_state() {
        let spec = ModelSpec::blume_capel(2, -1.0, -0.1, -1.405);
        let ed = ground_space(&spec).unwrap();
        for enc in EncodingKind::ALL {
            let g = embedded_ground_space(&ed, enc, 2).unwrap();
            let psi = StateVector::from_amplitudes(g[0].clone()).unwrap();
            assert!((fidelity(&psi, &ed, enc).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn binder_synthetic_vectors() {
        // fully polarized |+1, +1, +1>
        let mut v = vec![0.0; 27];
        v[0] = 1.0;
        assert!((binder_from_states(&[v.clone()], 3).unwrap() - 2.0 / 3.0).abs() < 1e-14);
        // m = ±1 equally weighted
        v[26] = 1.0;
        assert!((binder_from_states(&[v], 3).unwrap() - 2.0 / 3.0).abs() < 1e-14);
        // m = 0 only: undefined
        let mut z = vec![0.0; 9];
        z[4] = 1.0;
        assert!(binder_from_states(&[z], 2).is_err());
    }

    #[test]
    fn binder_disordered_limit() {
        let spec = ModelSpec::blume_capel(4, -1.0, -0.1, 20.0);
        let u = binder_cumulant(&spec).unwrap();
        assert!(u.abs() < 0.25, "{u}");
        let ordered = ModelSpec::blume_capel(4, -1.0, -0.1, 0.05);
        assert!(binder_cumulant(&ordered).unwrap() > 0.6);
    }

    #[test]
    fn crossing_errors() {
        let t = ModelSpec::blume_capel(4, -1.0, -0.1, 0.0);
        assert!(matches!(
            binder_crossing(&t, &[4, 4], &[1.0, 2.0]),
            Err(Error::Degenerate(_))
        ));
        assert!(matches!(
            binder_crossing(&t, &[2, 3], &[3.0, 3.5, 4.0]),
            Err(Error::NoBracket { .. })
        ));
        assert!(binder_crossing(&t, &[2, 3], &[1.0, 0.5]).is_err());
        let x = ModelSpec::xxz(4, 1.0, 0.1, 0.0);
        assert!(sector_crossing(&x, &[0.0, 1.0], 4).is_err());
    }

    #[test]
    fn sector_bases_are_orthonormal_and_invariant() {
        let spec = ModelSpec::xxz(4, 1.0, 0.1, 0.3).with_boundary(Boundary::Twisted);
        let h = Spin1Hamiltonian::new(&spec).unwrap();
        let minus = SymmetrySector::new(4, -1).unwrap();
        let plus = SymmetrySector::new(4, 1).unwrap();
        let dense = |c: &Vec<(usize, f64)>| {
            let mut v = vec![0.0; 81];
            for &(i, w) in c {
                v[i] = w;
            }
            v
        };
        let all: Vec<Vec<f64>> = minus.columns.iter().chain(&plus.columns).map(dense).collect();
        for (a, va) in all.iter().enumerate() {
            for (b, vb) in all.iter().enumerate() {
                let d = dot(va, vb);
                assert!((d - if a == b { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
        // H maps each sector into itself
        for sector in [&minus, &plus] {
            let basis: Vec<Vec<f64>> = sector.columns.iter().map(dense).collect();
            for v in &basis {
                let mut hv = vec![0.0; 81];
                h.apply_unchecked(v, &mut hv);
                let inside: f64 = basis.iter().map(|b| dot(b, &hv).powi(2)).sum();
                assert!((inside - dot(&hv, &hv)).abs() < 1e-10);
            }
        }
    }
}
