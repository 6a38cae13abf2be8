//! Adaptive variational imaginary-time evolution.
//!
//! The variational state is `|ψ(θ)⟩ = U_N ⋯ U_1 |ψ(0)⟩` with
//! `U_k = exp(−i θ_k A_k)` and `A_k` a Pauli string carrying an odd number of
//! `Y` factors, so that every amplitude stays real for a real reference.
//! Each time step assembles the Fubini-Study metric `g`, the gradient `V` and
//! the energy variance, solves `(g + λ)θ̇ = V`, and grows the circuit from an
//! operator pool whenever the McLachlan distance exceeds its threshold.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoding::{reference_state, EncodingKind, ReferenceBasis, SpinProjector};
use crate::error::{Error, Result};
use crate::exactdiag::{embedded_ground_space, fidelity_embedded, ground_space};
use crate::harness::cnot_count_of;
use crate::model::{build_qubit_hamiltonian, ModelSpec};
use crate::pauli::{variance_from, Pauli, PauliString, PauliSum};
use crate::statevector::{inner_raw, StateVector};

/// Fidelity at or above which a run counts as converged to the ground state.
pub const SUCCESS_FIDELITY: f64 = 0.999;

/// Relative slack under which two candidate scores count as tied.
const SCORE_TIE_TOL: f64 = 1e-12;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnsatzElement {
    pub generator: PauliString,
    pub theta: f64,
}

/// Where the reference state came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Reference {
    Product {
        spins: String,
        basis: ReferenceBasis,
        encoding: EncodingKind,
    },
    Custom {
        label: String,
    },
}

impl std::fmt::Display for Reference {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Reference::Product { spins, basis, .. } => write!(f, "{basis}:{spins}"),
            Reference::Custom { label } => write!(f, "custom:{label}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Ansatz {
    reference: Reference,
    initial: StateVector,
    elements: Vec<AnsatzElement>,
}

impl Ansatz {
    pub fn new(reference: Reference, initial: StateVector) -> Result<Self> {
        initial.check_normalized()?;
        Ok(Ansatz {
            reference,
            initial,
            elements: Vec::new(),
        })
    }

    /// Encoded product reference, e.g. spins `"0101"` in the x basis.
    pub fn from_product(spins: &str, basis: ReferenceBasis, encoding: EncodingKind) -> Result<Self> {
        let initial = reference_state(spins, basis, encoding)?;
        Self::new(
            Reference::Product {
                spins: spins.to_string(),
                basis,
                encoding,
            },
            initial,
        )
    }

    pub fn reference(&self) -> &Reference {
        &self.reference
    }

    pub fn initial_state(&self) -> &StateVector {
        &self.initial
    }

    pub fn n_qubits(&self) -> usize {
        self.initial.n_qubits()
    }

    pub fn elements(&self) -> &[AnsatzElement] {
        &self.elements
    }

    pub fn n_params(&self) -> usize {
        self.elements.len()
    }

    pub fn thetas(&self) -> Vec<f64> {
        self.elements.iter().map(|e| e.theta).collect()
    }

    pub fn set_thetas(&mut self, thetas: &[f64]) -> Result<()> {
        if thetas.len() != self.elements.len() {
            return Err(Error::DimensionMismatch {
                expected: self.elements.len(),
                got: thetas.len(),
            });
        }
        for (e, &t) in self.elements.iter_mut().zip(thetas) {
            e.theta = t;
        }
        Ok(())
    }

    /// Appends `exp(−iθA)` after the existing elements.
    pub fn push(&mut self, generator: PauliString, theta: f64) -> Result<()> {
        if generator.n_qubits() != self.n_qubits() {
            return Err(Error::QubitMismatch {
                left: self.n_qubits(),
                right: generator.n_qubits(),
            });
        }
        if !generator.has_odd_y_parity() {
            return Err(Error::Invalid(format!("generator {generator} has even Y parity")));
        }
        self.elements.push(AnsatzElement { generator, theta });
        Ok(())
    }

    pub fn state(&self) -> StateVector {
        let mut amps = self.initial.amplitudes().to_vec();
        for e in &self.elements {
            e.generator.rotate_in_place(e.theta, &mut amps);
        }
        StateVector::from_raw(self.n_qubits(), amps)
    }

    pub fn cnot_count(&self) -> usize {
        cnot_count_of(self.elements.iter().map(|e| &e.generator))
    }
}

/// `|∂_i ψ⟩` for every parameter.
///
/// One forward sweep: after element `k` is applied to the running state,
/// the same rotation is applied to every derivative vector started so far,
/// and `−iA_k` times the running state opens the next one.
pub fn derivative_states(ansatz: &Ansatz) -> Vec<StateVector> {
    let (_, derivs) = state_and_derivatives(ansatz);
    let n = ansatz.n_qubits();
    derivs.into_iter().map(|d| StateVector::from_raw(n, d)).collect()
}

fn minus_i_times(p: &PauliString, psi: &[Complex64]) -> Vec<Complex64> {
    let mut out = vec![ZERO; psi.len()];
    p.accumulate(Complex64::new(0.0, -1.0), psi, &mut out);
    out
}

fn state_and_derivatives(ansatz: &Ansatz) -> (Vec<Complex64>, Vec<Vec<Complex64>>) {
    let mut psi = ansatz.initial.amplitudes().to_vec();
    let mut derivs: Vec<Vec<Complex64>> = Vec::with_capacity(ansatz.n_params());
    for e in &ansatz.elements {
        e.generator.rotate_in_place(e.theta, &mut psi);
        derivs
            .par_iter_mut()
            .for_each(|d| e.generator.rotate_in_place(e.theta, d));
        derivs.push(minus_i_times(&e.generator, &psi));
    }
    (psi, derivs)
}

/// Everything one time step needs about the current state.
#[derive(Debug, Clone)]
struct Assembly {
    psi: Vec<Complex64>,
    hpsi: Vec<Complex64>,
    derivs: Vec<Vec<Complex64>>,
    /// `⟨ψ|∂_iψ⟩`
    berry: Vec<Complex64>,
    g: DMatrix<f64>,
    v: DVector<f64>,
    energy: f64,
    variance: f64,
}

fn metric_entry(di: &[Complex64], dj: &[Complex64], bi: Complex64, bj: Complex64) -> f64 {
    (inner_raw(di, dj) + bi * bj).re
}

impl Assembly {
    fn new(ansatz: &Ansatz, h: &PauliSum) -> Result<Self> {
        if h.n_qubits() != ansatz.n_qubits() {
            return Err(Error::QubitMismatch {
                left: h.n_qubits(),
                right: ansatz.n_qubits(),
            });
        }
        let (psi, derivs) = state_and_derivatives(ansatz);
        let mut hpsi = vec![ZERO; psi.len()];
        h.apply_raw(&psi, &mut hpsi);
        let energy = inner_raw(&psi, &hpsi).re;
        let variance = variance_from(&psi, &hpsi);
        let berry: Vec<Complex64> = derivs.iter().map(|d| inner_raw(&psi, d)).collect();
        let n = derivs.len();
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
        let vals: Vec<f64> = pairs
            .par_iter()
            .map(|&(i, j)| metric_entry(&derivs[i], &derivs[j], berry[i], berry[j]))
            .collect();
        let mut g = DMatrix::zeros(n, n);
        for (&(i, j), &x) in pairs.iter().zip(&vals) {
            g[(i, j)] = x;
            g[(j, i)] = x;
        }
        let v = DVector::from_iterator(n, derivs.iter().map(|d| -inner_raw(d, &hpsi).re));
        Ok(Assembly {
            psi,
            hpsi,
            derivs,
            berry,
            g,
            v,
            energy,
            variance,
        })
    }

    fn bordered_column(&self, d: &[Complex64]) -> (DVector<f64>, f64, f64, Complex64) {
        let bn = inner_raw(&self.psi, d);
        let b = DVector::from_iterator(
            self.derivs.len(),
            self.derivs.iter().zip(&self.berry).map(|(dj, &bj)| metric_entry(d, dj, bn, bj)),
        );
        let c = metric_entry(d, d, bn, bn);
        let vn = -inner_raw(d, &self.hpsi).re;
        (b, c, vn, bn)
    }

    /// Appends `generator` at θ = 0; the state is unchanged and the new
    /// derivative is `−iA|ψ⟩`.
    fn append(&mut self, generator: &PauliString) {
        let d = minus_i_times(generator, &self.psi);
        let (b, c, vn, bn) = self.bordered_column(&d);
        let n = self.derivs.len();
        let mut g = DMatrix::zeros(n + 1, n + 1);
        g.view_mut((0, 0), (n, n)).copy_from(&self.g);
        for j in 0..n {
            g[(n, j)] = b[j];
            g[(j, n)] = b[j];
        }
        g[(n, n)] = c;
        self.g = g;
        self.v = self.v.clone().insert_row(n, vn);
        self.berry.push(bn);
        self.derivs.push(d);
    }

    fn max_grad(&self) -> f64 {
        self.v.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// `(g, V, Var H)` at the current parameters.
pub fn metric_and_gradient(ansatz: &Ansatz, h: &PauliSum) -> Result<(DMatrix<f64>, DVector<f64>, f64)> {
    let a = Assembly::new(ansatz, h)?;
    Ok((a.g, a.v, a.variance))
}

fn check_finite_system(g: &DMatrix<f64>, v: &DVector<f64>) -> Result<()> {
    if g.iter().chain(v.iter()).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("metric or gradient"));
    }
    if g.nrows() != v.len() || g.ncols() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: g.nrows(),
            got: v.len(),
        });
    }
    Ok(())
}

/// Solves `(g + λ)θ̇ = V`, by Cholesky when possible and least squares
/// otherwise.
pub fn solve_eom(g: &DMatrix<f64>, v: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    check_finite_system(g, v)?;
    let n = v.len();
    if n == 0 {
        return Ok(DVector::zeros(0));
    }
    let m = g + DMatrix::identity(n, n) * lambda;
    if let Some(ch) = m.clone().cholesky() {
        let x = ch.solve(v);
        if x.iter().all(|a| a.is_finite()) {
            return Ok(x);
        }
    }
    let svd = m.svd(true, true);
    let eps = svd.singular_values.max() * n as f64 * f64::EPSILON;
    let x = svd.solve(v, eps).map_err(|e| Error::Invalid(e.to_string()))?;
    if x.iter().any(|a| !a.is_finite()) {
        return Err(Error::NonFinite("equation-of-motion solution"));
    }
    Ok(x)
}

/// `L² = 2θ̇ᵀgθ̇ − 4Vᵀθ̇ + 2 Var H`, with tiny negatives clamped to zero.
pub fn mclachlan_distance(g: &DMatrix<f64>, v: &DVector<f64>, theta_dot: &DVector<f64>, variance: f64) -> Result<f64> {
    if g.nrows() != theta_dot.len() || v.len() != theta_dot.len() {
        return Err(Error::DimensionMismatch {
            expected: g.nrows(),
            got: theta_dot.len(),
        });
    }
    let quad = theta_dot.dot(&(g * theta_dot));
    let l2 = 2.0 * quad - 4.0 * v.dot(theta_dot) + 2.0 * variance;
    Ok(clamp_distance(l2))
}

fn clamp_distance(l2: f64) -> f64 {
    if l2 < 0.0 && l2 > -1e-10 {
        0.0
    } else {
        l2
    }
}

/// Factored regularized system reused across every candidate of one scan.
struct BorderedScorer<'a> {
    asm: &'a Assembly,
    lambda: f64,
    chol: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
    m: DMatrix<f64>,
    x: DVector<f64>,
}

impl<'a> BorderedScorer<'a> {
    fn new(asm: &'a Assembly, lambda: f64) -> Result<Self> {
        let n = asm.v.len();
        let m = &asm.g + DMatrix::identity(n, n) * lambda;
        let x = solve_eom(&asm.g, &asm.v, lambda)?;
        let chol = m.clone().cholesky();
        Ok(BorderedScorer {
            asm,
            lambda,
            chol,
            m,
            x,
        })
    }

    fn solve_m(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        match &self.chol {
            Some(ch) => Ok(ch.solve(b)),
            None => solve_eom(&(&self.m - DMatrix::identity(b.len(), b.len()) * self.lambda), b, self.lambda),
        }
    }

    /// Would-be `L²` after appending `a` at θ = 0.
    ///
    /// With `M = g + λ` bordered by `(b, c)` and the gradient extended by
    /// `v`, the Schur complement gives the new solution without
    /// refactoring; at the regularized optimum `L² = 2 Var − 2Vᵀθ̇ − 2λ|θ̇|²`.
    fn score(&self, a: &PauliString) -> Result<f64> {
        let asm = self.asm;
        let psi = &asm.psi;
        // ⟨ψ|∂_new⟩ = −i⟨ψ|A|ψ⟩ and ⟨∂_new|φ⟩ = i⟨ψ|A|φ⟩
        let ia = Complex64::new(0.0, 1.0);
        let bn = -ia * a.matrix_element(psi, psi);
        let b = DVector::from_iterator(
            asm.derivs.len(),
            asm.derivs
                .iter()
                .zip(&asm.berry)
                .map(|(dj, &bj)| (ia * a.matrix_element(psi, dj) + bn * bj).re),
        );
        let c = 1.0 + (bn * bn).re;
        let vn = -(ia * a.matrix_element(psi, &asm.hpsi)).re;

        let y = self.solve_m(&b)?;
        let s = c + self.lambda - b.dot(&y);
        let (td_new, td_old) = if s.abs() < 1e-300 {
            (0.0, self.x.clone())
        } else {
            let t = (vn - b.dot(&self.x)) / s;
            (t, &self.x - &y * t)
        };
        let vt = asm.v.dot(&td_old) + vn * td_new;
        let norm2 = td_old.norm_squared() + td_new * td_new;
        Ok(clamp_distance(2.0 * asm.variance - 2.0 * vt - 2.0 * self.lambda * norm2))
    }
}

/// Would-be McLachlan distance if `a` were appended with θ = 0.
pub fn score_candidate(
    ansatz: &Ansatz,
    h: &PauliSum,
    g: &DMatrix<f64>,
    v: &DVector<f64>,
    variance: f64,
    a: &PauliString,
    lambda: f64,
) -> Result<f64> {
    let mut asm = Assembly::new(ansatz, h)?;
    check_finite_system(g, v)?;
    if g.nrows() != asm.v.len() {
        return Err(Error::DimensionMismatch {
            expected: asm.v.len(),
            got: g.nrows(),
        });
    }
    asm.g = g.clone();
    asm.v = v.clone();
    asm.variance = variance;
    BorderedScorer::new(&asm, lambda)?.score(a)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    Maximal,
    Minimal,
}

impl PoolKind {
    pub const ALL: [PoolKind; 2] = [PoolKind::Minimal, PoolKind::Maximal];

    pub fn name(self) -> &'static str {
        match self {
            PoolKind::Minimal => "minimal",
            PoolKind::Maximal => "maximal",
        }
    }
}

impl std::fmt::Display for PoolKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for PoolKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "minimal" | "min" => Ok(PoolKind::Minimal),
            "maximal" | "max" => Ok(PoolKind::Maximal),
            _ => Err(Error::UnknownName {
                kind: "pool",
                value: s.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pool {
    pub kind: PoolKind,
    pub candidates: Vec<PauliString>,
}

impl Pool {
    /// Candidates in canonical order: forms `Y_i`, `Y_i Z_j`, then for the
    /// maximal pool `Y_i X_j` and `Y_i X_j Z_k`, each with site indices
    /// ascending lexicographically. All indices within a string are distinct.
    pub fn new(kind: PoolKind, n_qubits: usize) -> Result<Self> {
        let n = n_qubits;
        let mk = |f: &[(usize, Pauli)]| PauliString::from_factors(n, f);
        let mut c = Vec::new();
        for i in 0..n {
            c.push(mk(&[(i, Pauli::Y)])?);
        }
        for i in 0..n {
            for j in (0..n).filter(|&j| j != i) {
                c.push(mk(&[(i, Pauli::Y), (j, Pauli::Z)])?);
            }
        }
        if kind == PoolKind::Maximal {
            for i in 0..n {
                for j in (0..n).filter(|&j| j != i) {
                    c.push(mk(&[(i, Pauli::Y), (j, Pauli::X)])?);
                }
            }
            for i in 0..n {
                for j in (0..n).filter(|&j| j != i) {
                    for k in (0..n).filter(|&k| k != i && k != j) {
                        c.push(mk(&[(i, Pauli::Y), (j, Pauli::X), (k, Pauli::Z)])?);
                    }
                }
            }
        }
        Ok(Pool { kind, candidates: c })
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AvqiteConfig {
    pub dtau: f64,
    pub l2_threshold: f64,
    pub grad_cutoff: f64,
    pub lambda: f64,
    pub max_steps: usize,
    pub max_adds_per_step: usize,
    pub min_score_improvement: f64,
}

impl Default for AvqiteConfig {
    fn default() -> Self {
        AvqiteConfig {
            dtau: 0.01,
            l2_threshold: 1e-2,
            grad_cutoff: 1e-4,
            lambda: 1e-6,
            max_steps: 10_000,
            max_adds_per_step: 8,
            min_score_improvement: 1e-8,
        }
    }
}

impl AvqiteConfig {
    pub fn validate(&self) -> Result<()> {
        let reals = [
            ("dtau", self.dtau),
            ("l2_threshold", self.l2_threshold),
            ("grad_cutoff", self.grad_cutoff),
            ("lambda", self.lambda),
            ("min_score_improvement", self.min_score_improvement),
        ];
        for (name, x) in reals {
            if !(x.is_finite() && x > 0.0) {
                return Err(Error::Invalid(format!("{name} must be positive, got {x}")));
            }
        }
        if self.max_steps == 0 || self.max_adds_per_step == 0 {
            return Err(Error::Invalid("max_steps and max_adds_per_step must be positive".into()));
        }
        Ok(())
    }
}

/// Integration and expansion conventions written into every result.
pub const METHOD_NOTE: &str = "forward Euler; candidates appended one at a time at theta=0 (up to \
max_adds_per_step per step); gradient cutoff tested after expansion; maximal pool uses pairwise \
distinct sites";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub tau: f64,
    pub energy: f64,
    pub mclachlan: f64,
    pub n_params: usize,
    pub n_cx: usize,
    pub projector: f64,
    pub max_grad: f64,
    pub added: usize,
}

/// Outcome of one expansion phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expansion {
    pub added: Vec<PauliString>,
    pub before: f64,
    pub after: f64,
}

/// Greedily appends the best-scoring pool members while the McLachlan
/// distance stays above threshold.
fn expand(ansatz: &mut Ansatz, asm: &mut Assembly, pool: &Pool, cfg: &AvqiteConfig, current: f64) -> Result<Expansion> {
    let before = current;
    let mut l2 = current;
    let mut added = Vec::new();
    while l2 > cfg.l2_threshold && added.len() < cfg.max_adds_per_step {
        let scorer = BorderedScorer::new(asm, cfg.lambda)?;
        let last = ansatz.elements.last().filter(|e| e.theta == 0.0).map(|e| e.generator);
        let scores: Vec<f64> = pool
            .candidates
            .par_iter()
            .map(|a| {
                if Some(*a) == last {
                    Ok(f64::INFINITY)
                } else {
                    scorer.score(a)
                }
            })
            .collect::<Result<_>>()?;
        let best = scores.iter().copied().fold(f64::INFINITY, f64::min);
        if !best.is_finite() {
            break;
        }
        let tol = SCORE_TIE_TOL * best.abs().max(1.0);
        let idx = scores.iter().position(|&s| s <= best + tol).expect("finite minimum");
        if l2 - scores[idx] < cfg.min_score_improvement {
            break;
        }
        let a = pool.candidates[idx];
        ansatz.push(a, 0.0)?;
        asm.append(&a);
        l2 = scores[idx];
        added.push(a);
    }
    Ok(Expansion {
        added,
        before,
        after: l2,
    })
}

/// Public wrapper around one expansion phase at the current parameters.
pub fn expand_ansatz(ansatz: &mut Ansatz, pool: &Pool, h: &PauliSum, cfg: &AvqiteConfig) -> Result<Expansion> {
    let mut asm = Assembly::new(ansatz, h)?;
    let td = solve_eom(&asm.g, &asm.v, cfg.lambda)?;
    let l2 = mclachlan_distance(&asm.g, &asm.v, &td, asm.variance)?;
    expand(ansatz, &mut asm, pool, cfg, l2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HaltReason {
    GradientConverged,
    MaxSteps,
    Diverged,
    /// The run could not be executed; see the message.
    Failed,
}

/// Embedded exact ground space of one problem, reused across runs.
#[derive(Debug, Clone)]
pub struct GroundOracle {
    pub energy: f64,
    pub degeneracy: usize,
    pub states: Vec<Vec<Complex64>>,
}

impl GroundOracle {
    pub fn new(spec: &ModelSpec, enc: EncodingKind) -> Result<Self> {
        let ed = ground_space(spec)?;
        let states = embedded_ground_space(&ed, enc, spec.chain_len)?;
        Ok(GroundOracle {
            energy: ed.ground_energy(),
            degeneracy: ed.ground_degeneracy(),
            states,
        })
    }

    pub fn fidelity(&self, psi: &StateVector) -> Result<f64> {
        fidelity_embedded(psi, &self.states)
    }
}

/// Problem definition shared by every run of one sweep cell.
#[derive(Debug, Clone)]
pub struct Problem {
    pub spec: ModelSpec,
    pub encoding: EncodingKind,
    pub hamiltonian: PauliSum,
    pub projector: SpinProjector,
    pub oracle: GroundOracle,
}

impl Problem {
    pub fn new(spec: &ModelSpec, encoding: EncodingKind) -> Result<Self> {
        spec.validate()?;
        Ok(Problem {
            spec: spec.clone(),
            encoding,
            hamiltonian: build_qubit_hamiltonian(spec, encoding)?,
            projector: SpinProjector::new(encoding, spec.chain_len)?,
            oracle: GroundOracle::new(spec, encoding)?,
        })
    }

    pub fn n_qubits(&self) -> usize {
        self.hamiltonian.n_qubits()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalSummary {
    pub energy: f64,
    pub exact_energy: f64,
    pub fidelity: f64,
    pub projector: f64,
    pub n_cx_final: usize,
    pub n_cx_cumulative: usize,
    pub n_params: usize,
    pub steps: usize,
    pub tau: f64,
    pub success: bool,
    pub halted_reason: HaltReason,
    pub initial_variance: f64,
    pub initial_max_grad: f64,
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub model: ModelSpec,
    pub encoding: EncodingKind,
    pub pool: PoolKind,
    pub reference: Reference,
    pub config: AvqiteConfig,
    pub method: String,
    pub trajectory: Vec<StepRecord>,
    pub ansatz: Vec<AnsatzElement>,
    #[serde(rename = "final")]
    pub summary: FinalSummary,
}

impl RunResult {
    /// Recomputed from the stored fidelity, never cached.
    pub fn is_success(&self) -> bool {
        self.summary.fidelity >= SUCCESS_FIDELITY
    }

    /// Whether the reference had no usable gradient and the run halted at
    /// the first step.
    pub fn vanishing_initial_gradient(&self) -> bool {
        self.summary.initial_max_grad < self.config.grad_cutoff
    }
}

/// Runs AVQITE from an encoded product reference.
pub fn run(spec: &ModelSpec, enc: EncodingKind, pool: PoolKind, spins: &str, basis: ReferenceBasis, cfg: &AvqiteConfig) -> Result<RunResult> {
    let problem = Problem::new(spec, enc)?;
    let ansatz = Ansatz::from_product(spins, basis, enc)?;
    run_problem(&problem, pool, ansatz, cfg)
}

/// Runs AVQITE on a prepared problem starting from `ansatz` (normally
/// empty). Divergence ends the run with [`HaltReason::Diverged`] rather than
/// an error.
pub fn run_problem(problem: &Problem, pool_kind: PoolKind, mut ansatz: Ansatz, cfg: &AvqiteConfig) -> Result<RunResult> {
    cfg.validate()?;
    if ansatz.n_qubits() != problem.n_qubits() {
        return Err(Error::QubitMismatch {
            left: problem.n_qubits(),
            right: ansatz.n_qubits(),
        });
    }
    let pool = Pool::new(pool_kind, problem.n_qubits())?;
    let h = &problem.hamiltonian;
    let mut trajectory = Vec::new();
    let mut tau = 0.0;
    let mut cumulative = 0usize;
    let mut initial_variance = f64::NAN;
    let mut initial_max_grad = f64::NAN;
    let mut message = None;
    let mut halted = HaltReason::MaxSteps;

    for step in 0..cfg.max_steps {
        let mut asm = Assembly::new(&ansatz, h)?;
        if !asm.energy.is_finite() || !asm.variance.is_finite() {
            halted = HaltReason::Diverged;
            message = Some(format!("non-finite energy at step {step}"));
            break;
        }
        if step == 0 {
            initial_variance = asm.variance;
        }
        let mut td = solve_eom(&asm.g, &asm.v, cfg.lambda)?;
        let mut l2 = mclachlan_distance(&asm.g, &asm.v, &td, asm.variance)?;
        let mut added = 0;
        if l2 > cfg.l2_threshold {
            let ex = expand(&mut ansatz, &mut asm, &pool, cfg, l2)?;
            added = ex.added.len();
            if added > 0 {
                td = solve_eom(&asm.g, &asm.v, cfg.lambda)?;
                l2 = mclachlan_distance(&asm.g, &asm.v, &td, asm.variance)?;
            }
        }
        let max_grad = asm.max_grad();
        if step == 0 {
            initial_max_grad = max_grad;
        }
        let n_cx = ansatz.cnot_count();
        cumulative += n_cx;
        let psi = StateVector::from_raw(ansatz.n_qubits(), std::mem::take(&mut asm.psi));
        trajectory.push(StepRecord {
            step,
            tau,
            energy: asm.energy,
            mclachlan: l2,
            n_params: ansatz.n_params(),
            n_cx,
            projector: problem.projector.expectation(&psi)?,
            max_grad,
            added,
        });
        if max_grad < cfg.grad_cutoff {
            halted = HaltReason::GradientConverged;
            break;
        }
        if td.iter().any(|x| !x.is_finite()) {
            halted = HaltReason::Diverged;
            message = Some(format!("non-finite parameter velocity at step {step}"));
            break;
        }
        let thetas: Vec<f64> = ansatz
            .elements
            .iter()
            .zip(td.iter())
            .map(|(e, d)| e.theta + d * cfg.dtau)
            .collect();
        ansatz.set_thetas(&thetas)?;
        tau += cfg.dtau;
    }

    let psi = ansatz.state();
    let energy = crate::pauli::expectation(h, &psi).unwrap_or(f64::NAN);
    let fidelity = problem.oracle.fidelity(&psi)?;
    let projector = problem.projector.expectation(&psi)?;
    let n_cx_final = ansatz.cnot_count();
    let summary = FinalSummary {
        energy,
        exact_energy: problem.oracle.energy,
        fidelity,
        projector,
        n_cx_final,
        n_cx_cumulative: cumulative,
        n_params: ansatz.n_params(),
        steps: trajectory.len(),
        tau,
        success: fidelity >= SUCCESS_FIDELITY,
        halted_reason: halted,
        initial_variance,
        initial_max_grad,
        message,
    };
    Ok(RunResult {
        model: problem.spec.clone(),
        encoding: problem.encoding,
        pool: pool_kind,
        reference: ansatz.reference.clone(),
        config: *cfg,
        method: METHOD_NOTE.to_string(),
        trajectory,
        ansatz: ansatz.elements,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pauli::{apply_sum, expectation, exp_apply};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ps(s: &str) -> PauliString {
        s.parse().unwrap()
    }

    fn random_odd_y(n: usize, rng: &mut ChaCha8Rng) -> PauliString {
        loop {
            let mut p = PauliString::identity(n);
            for q in 0..n {
                p.set(q, [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z][rng.gen_range(0..4)]);
            }
            if p.has_odd_y_parity() {
                return p;
            }
        }
    }

    fn random_hamiltonian(n: usize, rng: &mut ChaCha8Rng) -> PauliSum {
        let terms: Vec<(f64, PauliString)> = (0..6)
            .map(|_| {
                let mut p = PauliString::identity(n);
                for q in 0..n {
                    p.set(q, [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z][rng.gen_range(0..4)]);
                }
                (rng.gen_range(-1.0..1.0), p)
            })
            .collect();
        PauliSum::from_terms(n, terms).unwrap()
    }

    fn random_ansatz(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Ansatz {
        let amps: Vec<Complex64> = (0..1usize << n)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let init = StateVector::normalized(amps).unwrap();
        let mut a = Ansatz::new(Reference::Custom { label: "random".into() }, init).unwrap();
        for _ in 0..k {
            a.push(random_odd_y(n, rng), rng.gen_range(-1.0..1.0)).unwrap();
        }
        a
    }

    /// Re-prepares the state from scratch with one angle shifted.
    fn shifted(a: &Ansatz, i: usize, h: f64) -> StateVector {
        let mut b = a.clone();
        let mut t = b.thetas();
        t[i] += h;
        b.set_thetas(&t).unwrap();
        b.state()
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let a = random_ansatz(3, 2, &mut rng);
        let d = derivative_states(&a);
        let h = 1e-5;
        for (i, di) in d.iter().enumerate() {
            assert!((di.norm_sqr() - 1.0).abs() < 1e-12);
            let p = shifted(&a, i, h);
            let m = shifted(&a, i, -h);
            for k in 0..di.dim() {
                let fd = (p.amplitudes()[k] - m.amplitudes()[k]) / (2.0 * h);
                assert!((fd - di.amplitudes()[k]).norm() < 1e-8);
            }
        }
        let empty = Ansatz::from_product("0", ReferenceBasis::Z, EncodingKind::Standard).unwrap();
        assert!(derivative_states(&empty).is_empty());
    }

    #[test]
    fn derivative_at_identity() {
        let mut a = Ansatz::from_product("1", ReferenceBasis::Z, EncodingKind::Standard).unwrap();
        a.push(ps("YI"), 0.0).unwrap();
        let d = derivative_states(&a);
        let oracle = apply_sum(&PauliSum::single(1.0, ps("YI")), a.initial_state())
            .unwrap()
            .into_iter()
            .map(|x| x * Complex64::new(0.0, -1.0));
        for (x, y) in d[0].amplitudes().iter().zip(oracle) {
            assert!((x - y).norm() < 1e-15);
        }
    }

    #[test]
    fn gradient_matches_energy_derivative() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let n = rng.gen_range(1..=4);
            let k = rng.gen_range(1..=4);
            let a = random_ansatz(n, k, &mut rng);
            let h = random_hamiltonian(n, &mut rng);
            let (g, v, _) = metric_and_gradient(&a, &h).unwrap();
            for i in 0..k {
                let ep = expectation(&h, &shifted(&a, i, 1e-4)).unwrap();
                let em = expectation(&h, &shifted(&a, i, -1e-4)).unwrap();
                assert!((v[i] + 0.5 * (ep - em) / 2e-4).abs() < 1e-6);
            }
            // symmetric positive semidefinite
            assert!((&g - g.transpose()).amax() < 1e-14);
            let eig = g.clone().symmetric_eigenvalues();
            assert!(eig.min() > -1e-10);
        }
    }

    #[test]
    fn metric_one_qubit_rotation() {
        let init = StateVector::basis_state("0").unwrap();
        let mut a = Ansatz::new(Reference::Custom { label: "0".into() }, init).unwrap();
        a.push(ps("Y"), 0.3).unwrap();
        let (g, v, var) = metric_and_gradient(&a, &PauliSum::single(1.0, ps("Z"))).unwrap();
        assert!((g[(0, 0)] - 1.0).abs() < 1e-14);
        // E(θ) = cos 2θ so V = sin 2θ
        assert!((v[0] - (0.6f64).sin()).abs() < 1e-14);
        assert!((var - (0.6f64).sin().powi(2)).abs() < 1e-14);
    }

    /// Textbook QGT `⟨∂i|∂j⟩ − ⟨∂i|ψ⟩⟨ψ|∂j⟩` for comparison with the form
    /// used in assembly.
    #[test]
    fn metric_equals_standard_geometric_tensor() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let a = random_ansatz(3, 4, &mut rng);
        let h = random_hamiltonian(3, &mut rng);
        let (g, _, _) = metric_and_gradient(&a, &h).unwrap();
        let psi = a.state();
        let d = derivative_states(&a);
        for i in 0..4 {
            for j in 0..4 {
                let q = d[i].inner(&d[j]).unwrap() - d[i].inner(&psi).unwrap() * psi.inner(&d[j]).unwrap();
                assert!((q.re - g[(i, j)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn eom_solver_cases() {
        let g = DMatrix::identity(3, 3);
        let v = DVector::from_vec(vec![0.5, -1.0, 2.0]);
        assert!((solve_eom(&g, &v, 0.0).unwrap() - &v).amax() < 1e-15);

        let g = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let v = DVector::from_vec(vec![1.0, 1.0]);
        let x = solve_eom(&g, &v, 1e-6).unwrap();
        let r = (&g + DMatrix::identity(2, 2) * 1e-6) * &x - &v;
        assert!(r.amax() < 1e-10);

        let g = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let v = DVector::from_vec(vec![0.2, -0.7]);
        let a = solve_eom(&g, &v, 0.0).unwrap();
        let b = solve_eom(&(&g * 7.5), &(&v * 7.5), 0.0).unwrap();
        assert!((a - b).amax() < 1e-14);

        let bad = DMatrix::from_row_slice(1, 1, &[f64::NAN]);
        assert!(solve_eom(&bad, &DVector::from_vec(vec![1.0]), 0.0).is_err());
    }

    #[test]
    fn mclachlan_identities() {
        let g = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let v = DVector::from_vec(vec![0.2, -0.7]);
        let zero = DVector::zeros(2);
        assert_eq!(mclachlan_distance(&g, &v, &zero, 0.4).unwrap(), 0.8);
        let td = g.clone().try_inverse().unwrap() * &v;
        let expected = 2.0 * 0.4 - 2.0 * v.dot(&td);
        assert!((mclachlan_distance(&g, &v, &td, 0.4).unwrap() - expected).abs() < 1e-14);
        assert!(mclachlan_distance(&g, &v, &DVector::zeros(3), 0.4).is_err());
        let e = DMatrix::zeros(0, 0);
        assert_eq!(mclachlan_distance(&e, &DVector::zeros(0), &DVector::zeros(0), 0.0).unwrap(), 0.0);
    }

    #[test]
    fn one_qubit_score_example() {
        let init = StateVector::basis_state("0").unwrap();
        let a = Ansatz::new(Reference::Custom { label: "0".into() }, init).unwrap();
        let h = PauliSum::single(1.0, ps("X"));
        let (g, v, var) = metric_and_gradient(&a, &h).unwrap();
        assert!((var - 1.0).abs() < 1e-15);
        let s = score_candidate(&a, &h, &g, &v, var, &ps("Y"), 1e-6).unwrap();
        // θ̇ = V/(1+λ) with V² = g = Var = 1: L² = 2(λ/(1+λ))², zero as λ → 0
        let lam: f64 = 1e-6;
        assert!((s - 2.0 * (lam / (1.0 + lam)).powi(2)).abs() < 1e-15);
    }

    /// Appending, re-assembling from scratch and evaluating the literal
    /// distance must reproduce the bordered score.
    #[test]
    fn scores_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for trial in 0..10 {
            let n = 1 + trial % 4;
            let a = random_ansatz(n, rng.gen_range(0..=4), &mut rng);
            let h = random_hamiltonian(n, &mut rng);
            let (g, v, var) = metric_and_gradient(&a, &h).unwrap();
            let pool = Pool::new(PoolKind::Maximal, n).unwrap();
            for cand in &pool.candidates {
                let fast = score_candidate(&a, &h, &g, &v, var, cand, 1e-6).unwrap();
                let mut b = a.clone();
                b.push(*cand, 0.0).unwrap();
                let (g2, v2, var2) = metric_and_gradient(&b, &h).unwrap();
                let td = solve_eom(&g2, &v2, 1e-6).unwrap();
                let slow = mclachlan_distance(&g2, &v2, &td, var2).unwrap();
                assert!((fast - slow).abs() < 1e-10, "{cand}: {fast} vs {slow}");
            }
        }
    }

    #[test]
    fn pool_sizes_and_order() {
        for n in 1..7 {
            let min = Pool::new(PoolKind::Minimal, n).unwrap();
            let max = Pool::new(PoolKind::Maximal, n).unwrap();
            assert_eq!(min.len(), n * n);
            assert_eq!(max.len(), n + 2 * n * (n - 1) + n * (n - 1) * n.saturating_sub(2));
            assert!(max.candidates.iter().all(|p| p.has_odd_y_parity()));
            let mut uniq = max.candidates.clone();
            uniq.sort();
            uniq.dedup();
            assert_eq!(uniq.len(), max.len());
            assert_eq!(&max.candidates[..min.len()], &min.candidates[..]);
        }
        let two = Pool::new(PoolKind::Minimal, 2).unwrap();
        let names: Vec<String> = two.candidates.iter().map(|p| p.to_string()).collect();
        assert_eq!(names, ["YI", "IY", "YZ", "ZY"]);
    }

    #[test]
    fn appending_keeps_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_ansatz(3, 3, &mut rng);
        let h = random_hamiltonian(3, &mut rng);
        let e0 = expectation(&h, &a.state()).unwrap();
        let mut b = a.clone();
        b.push(random_odd_y(3, &mut rng), 0.0).unwrap();
        assert!((expectation(&h, &b.state()).unwrap() - e0).abs() < 1e-12);
        assert!(b.push(ps("XZI"), 0.0).is_err());
    }

    #[test]
    fn exp_apply_agrees_with_ansatz_state() {
        let mut a = Ansatz::from_product("01", ReferenceBasis::Z, EncodingKind::Standard).unwrap();
        a.push(ps("YZII"), 0.4).unwrap();
        a.push(ps("IXYI"), -0.2).unwrap();
        let s = exp_apply(&ps("IXYI"), -0.2, &exp_apply(&ps("YZII"), 0.4, a.initial_state()).unwrap()).unwrap();
        assert_eq!(s, a.state());
    }

    fn bc(l: usize) -> ModelSpec {
        ModelSpec::blume_capel(l, -1.0, -0.1, -1.405)
    }

    #[test]
    fn ground_state_seed_is_stationary() {
        let spec = bc(2);
        for enc in EncodingKind::ALL {
            let problem = Problem::new(&spec, enc).unwrap();
            let seed = StateVector::from_amplitudes(problem.oracle.states[0].clone()).unwrap();
            let a = Ansatz::new(Reference::Custom { label: "ed".into() }, seed).unwrap();
            let r = run_problem(&problem, PoolKind::Maximal, a, &AvqiteConfig::default()).unwrap();
            assert_eq!(r.summary.steps, 1);
            assert!(r.ansatz.is_empty());
            assert_eq!(r.summary.n_cx_final, 0);
            assert_eq!(r.summary.halted_reason, HaltReason::GradientConverged);
            assert!(r.is_success());
        }
    }

    #[test]
    fn expansion_is_deterministic() {
        let h = build_qubit_hamiltonian(&bc(2), EncodingKind::Standard).unwrap();
        let pool = Pool::new(PoolKind::Maximal, 4).unwrap();
        let cfg = AvqiteConfig::default();
        let go = || {
            let mut a = Ansatz::from_product("00", ReferenceBasis::Z, EncodingKind::Standard).unwrap();
            expand_ansatz(&mut a, &pool, &h, &cfg).unwrap()
        };
        let (x, y) = (go(), go());
        assert!(!x.added.is_empty());
        assert_eq!(x, y);
        assert!(x.after <= x.before);
    }

    #[test]
    fn expansion_noop_below_threshold() {
        let h = PauliSum::single(1.0, ps("Z"));
        let init = StateVector::basis_state("0").unwrap();
        let mut a = Ansatz::new(Reference::Custom { label: "0".into() }, init).unwrap();
        let pool = Pool::new(PoolKind::Maximal, 1).unwrap();
        let ex = expand_ansatz(&mut a, &pool, &h, &AvqiteConfig::default()).unwrap();
        assert!(ex.added.is_empty());
    }

    #[test]
    fn bc_pair_converges_with_real_states() {
        let cfg = AvqiteConfig::default();
        let r = run(&bc(2), EncodingKind::Gray, PoolKind::Maximal, "01", ReferenceBasis::Z, &cfg).unwrap();
        assert_eq!(r.summary.halted_reason, HaltReason::GradientConverged);
        assert!(r.summary.fidelity > 0.999, "{:?}", r.summary);
        assert!(r.summary.projector > 0.999);
        for w in r.trajectory.windows(2) {
            assert!(w[1].energy <= w[0].energy + 1e-6);
            assert!(w[1].tau >= w[0].tau);
            assert!(w[1].n_params >= w[0].n_params);
        }
        let cum: usize = r.trajectory.iter().map(|s| s.n_cx).sum();
        assert_eq!(cum, r.summary.n_cx_cumulative);

        let mut a = Ansatz::from_product("01", ReferenceBasis::Z, EncodingKind::Gray).unwrap();
        for e in &r.ansatz {
            a.push(e.generator, e.theta).unwrap();
        }
        assert!(a.state().max_imag() < 1e-10);
    }

    /// Single-site toy problem: the variational energy follows normalized
    /// imaginary-time propagation `e^{−τH}|ψ⟩`.
    #[test]
    fn tracks_exact_imaginary_time() {
        let h = PauliSum::from_terms(1, vec![(0.7, ps("X")), (0.4, ps("Z"))]).unwrap();
        let init = StateVector::basis_state("0").unwrap();
        let mut a = Ansatz::new(Reference::Custom { label: "0".into() }, init.clone()).unwrap();
        a.push(ps("Y"), 0.0).unwrap();
        let cfg = AvqiteConfig {
            dtau: 1e-3,
            ..Default::default()
        };
        // exact: h = ω n·σ, e^{−τh} = cosh(ωτ) − sinh(ωτ) h/ω
        let w = (0.7f64.powi(2) + 0.4f64.powi(2)).sqrt();
        let mut tau = 0.0;
        for _ in 0..2000 {
            let (g, v, _) = metric_and_gradient(&a, &h).unwrap();
            let td = solve_eom(&g, &v, cfg.lambda).unwrap();
            let t = a.thetas()[0] + td[0] * cfg.dtau;
            a.set_thetas(&[t]).unwrap();
            tau += cfg.dtau;
        }
        let hpsi = apply_sum(&h, &init).unwrap();
        let amps: Vec<Complex64> = init
            .amplitudes()
            .iter()
            .zip(&hpsi)
            .map(|(x, y)| x * (w * tau).cosh() - y * ((w * tau).sinh() / w))
            .collect();
        let exact = StateVector::normalized(amps).unwrap();
        let e_exact = expectation(&h, &exact).unwrap();
        let e_var = expectation(&h, &a.state()).unwrap();
        assert!((e_exact - e_var).abs() < 1e-3, "{e_exact} {e_var}");
    }
}
