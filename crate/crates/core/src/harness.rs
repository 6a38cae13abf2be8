//! Experiment orchestration: reference sweeps, success and leakage
//! statistics, CNOT accounting, ranking, scaling fits and report files.
//!
//! Quantiles use linear interpolation between order statistics: for a
//! sorted sample `x_0 ≤ … ≤ x_{n−1}` the `p`-quantile is read at fractional
//! rank `h = (n − 1)p`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::avqite::{
    run_problem, Ansatz, AvqiteConfig, FinalSummary, HaltReason, PoolKind, Problem, Reference, RunResult,
    METHOD_NOTE, SUCCESS_FIDELITY,
};
use crate::encoding::{index_to_levels, parse_spins, EncodingKind, ReferenceBasis};
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::pauli::PauliString;

/// `1 − ⟨P⟩` above which a final state counts as leaked out of the spin-1
/// subspace.
pub const LEAKAGE_THRESHOLD: f64 = 1.0 - 0.999;

/// Ranking key order for the pool choice when everything else ties.
pub const POOL_RANK_ORDER: &str = "maximal before minimal";

/// Cell granularity of the top-k reference selection in scaling studies.
pub const SELECTION_GRANULARITY: &str = "per (encoding, pool, basis) cell";

/// `Σ 2(w − 1)` over generators of weight `w` (all-to-all connectivity).
pub fn cnot_count_of<'a, I>(generators: I) -> usize
where
    I: IntoIterator<Item = &'a PauliString>,
{
    generators.into_iter().map(|p| 2 * p.weight().saturating_sub(1)).sum()
}

pub fn cnot_count(ansatz: &Ansatz) -> usize {
    ansatz.cnot_count()
}

/// Every spin string in `{0,1,2}^L`, site 1 varying slowest.
pub fn spin_strings(chain_len: usize) -> Vec<String> {
    (0..3usize.pow(chain_len as u32))
        .map(|i| {
            index_to_levels(i, chain_len)
                .iter()
                .map(|&d| char::from(b'0' + d as u8))
                .collect()
        })
        .collect()
}

/// Extends a reference to `chain_len` sites by periodic repetition.
pub fn extend_reference(spins: &str, chain_len: usize) -> Result<String> {
    let levels = parse_spins(spins)?;
    if levels.is_empty() {
        return Err(Error::InvalidSpinString(spins.to_string()));
    }
    Ok(spins.chars().cycle().take(chain_len).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellKey {
    pub encoding: EncodingKind,
    pub pool: PoolKind,
    pub basis: ReferenceBasis,
}

impl std::fmt::Display for CellKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}-{}", self.encoding, self.basis, self.pool)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    VanishingInitialGradient,
    NotConverged,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub cell: CellKey,
    pub chain_len: usize,
    pub reference: String,
    pub reason: ExclusionReason,
    pub detail: Option<String>,
}

/// Why a run is kept out of the box statistics, if it is.
pub fn exclusion_reason(r: &RunResult) -> Option<ExclusionReason> {
    if r.summary.halted_reason == HaltReason::Failed {
        Some(ExclusionReason::Failed)
    } else if r.vanishing_initial_gradient() {
        Some(ExclusionReason::VanishingInitialGradient)
    } else if !r.is_success() {
        Some(ExclusionReason::NotConverged)
    } else {
        None
    }
}

pub fn cell_of(r: &RunResult) -> Option<CellKey> {
    match &r.reference {
        Reference::Product { basis, .. } => Some(CellKey {
            encoding: r.encoding,
            pool: r.pool,
            basis: *basis,
        }),
        Reference::Custom { .. } => None,
    }
}

fn reference_label(r: &RunResult) -> String {
    match &r.reference {
        Reference::Product { spins, .. } => spins.clone(),
        Reference::Custom { label } => label.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: Vec<f64>,
}

/// Linear-interpolation quantile of an ascending sample.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl BoxStats {
    /// Quartiles, whiskers at 1.5 IQR clipped to the data, and the points
    /// beyond them. `None` for an empty sample.
    pub fn from_sample(sample: &[f64]) -> Option<Self> {
        if sample.is_empty() {
            return None;
        }
        let mut s = sample.to_vec();
        s.sort_by(f64::total_cmp);
        let q1 = quantile_sorted(&s, 0.25);
        let median = quantile_sorted(&s, 0.5);
        let q3 = quantile_sorted(&s, 0.75);
        let iqr = q3 - q1;
        let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
        let inside = || s.iter().copied().filter(|&x| x >= lo_fence && x <= hi_fence);
        Some(BoxStats {
            n: s.len(),
            min: s[0],
            q1,
            median,
            q3,
            max: s[s.len() - 1],
            whisker_low: inside().fold(f64::INFINITY, f64::min),
            whisker_high: inside().fold(f64::NEG_INFINITY, f64::max),
            outliers: s.iter().copied().filter(|&x| x < lo_fence || x > hi_fence).collect(),
        })
    }
}

/// Histogram of `1 − ⟨P⟩` in decades from `1e-16` to `1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageHistogram {
    /// Decade exponents of the bin lower edges; bin `k` is
    /// `[10^edges[k], 10^(edges[k]+1))`.
    pub edges: Vec<i32>,
    pub counts: Vec<usize>,
    /// Values below `1e-16`, including exact zeros and roundoff negatives.
    pub underflow: usize,
    pub threshold: f64,
    pub above_threshold: usize,
}

impl LeakageHistogram {
    pub fn from_projectors(projectors: &[f64]) -> Self {
        let edges: Vec<i32> = (-16..0).collect();
        let mut counts = vec![0; edges.len()];
        let mut underflow = 0;
        let mut above = 0;
        for &p in projectors {
            let leak = 1.0 - p;
            if leak > LEAKAGE_THRESHOLD {
                above += 1;
            }
            if leak < 1e-16 {
                underflow += 1;
                continue;
            }
            let k = (leak.log10().floor() as i32).clamp(-16, -1);
            counts[(k + 16) as usize] += 1;
        }
        LeakageHistogram {
            edges,
            counts,
            underflow,
            threshold: LEAKAGE_THRESHOLD,
            above_threshold: above,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub cell: CellKey,
    pub chain_len: usize,
    pub total: usize,
    pub included: usize,
    pub vanishing_gradient: usize,
    pub not_converged: usize,
    pub failed: usize,
    pub successes: usize,
    /// Successes over runs with a nonzero initial gradient.
    pub success_rate: Option<f64>,
    pub n_cx_final: Option<BoxStats>,
    pub leakage: LeakageHistogram,
}

fn success_rate(successes: usize, eligible: usize) -> Option<f64> {
    (eligible > 0).then(|| successes as f64 / eligible as f64)
}

/// Summary of one cell; success is re-read from the stored fidelity.
pub fn summarize_cell(cell: CellKey, chain_len: usize, runs: &[&RunResult]) -> SweepSummary {
    let mut vanishing = 0;
    let mut not_converged = 0;
    let mut failed = 0;
    let mut ncx = Vec::new();
    for r in runs {
        match exclusion_reason(r) {
            Some(ExclusionReason::VanishingInitialGradient) => vanishing += 1,
            Some(ExclusionReason::NotConverged) => not_converged += 1,
            Some(ExclusionReason::Failed) => failed += 1,
            None => ncx.push(r.summary.n_cx_final as f64),
        }
    }
    let projectors: Vec<f64> = runs
        .iter()
        .filter(|r| r.summary.halted_reason != HaltReason::Failed)
        .map(|r| r.summary.projector)
        .collect();
    let successes = runs.iter().filter(|r| r.is_success()).count();
    SweepSummary {
        cell,
        chain_len,
        total: runs.len(),
        included: ncx.len(),
        vanishing_gradient: vanishing,
        not_converged,
        failed,
        successes,
        success_rate: success_rate(successes, runs.len() - vanishing - failed),
        n_cx_final: BoxStats::from_sample(&ncx),
        leakage: LeakageHistogram::from_projectors(&projectors),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverallSummary {
    pub total: usize,
    pub included: usize,
    pub excluded: usize,
    pub successes: usize,
    pub success_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub method: String,
    pub quantiles: String,
    pub pool_rank_order: String,
    pub selection_granularity: String,
    pub success_fidelity: f64,
    pub cells: Vec<SweepSummary>,
    pub overall: OverallSummary,
    pub exclusions: Vec<Exclusion>,
}

impl SweepReport {
    pub fn from_runs(runs: &[RunResult]) -> Self {
        let mut groups: BTreeMap<(CellKey, usize), Vec<&RunResult>> = BTreeMap::new();
        for r in runs {
            if let Some(cell) = cell_of(r) {
                groups.entry((cell, r.model.chain_len)).or_default().push(r);
            }
        }
        let cells: Vec<SweepSummary> = groups
            .iter()
            .map(|(&(cell, l), rs)| summarize_cell(cell, l, rs))
            .collect();
        let mut exclusions = Vec::new();
        for r in runs {
            if let (Some(reason), Some(cell)) = (exclusion_reason(r), cell_of(r)) {
                exclusions.push(Exclusion {
                    cell,
                    chain_len: r.model.chain_len,
                    reference: reference_label(r),
                    reason,
                    detail: r.summary.message.clone(),
                });
            }
        }
        let total = runs.len();
        let successes = runs.iter().filter(|r| r.is_success()).count();
        let eligible = runs
            .iter()
            .filter(|r| {
                !matches!(
                    exclusion_reason(r),
                    Some(ExclusionReason::VanishingInitialGradient | ExclusionReason::Failed)
                )
            })
            .count();
        SweepReport {
            method: METHOD_NOTE.to_string(),
            quantiles: "linear interpolation between order statistics, h = (n-1)p".to_string(),
            pool_rank_order: POOL_RANK_ORDER.to_string(),
            selection_granularity: SELECTION_GRANULARITY.to_string(),
            success_fidelity: SUCCESS_FIDELITY,
            overall: OverallSummary {
                total,
                included: total - exclusions.len(),
                excluded: exclusions.len(),
                successes,
                success_rate: success_rate(successes, eligible),
            },
            cells,
            exclusions,
        }
    }
}

/// Grid of runs over encodings, pools and reference bases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPlan {
    pub model: ModelSpec,
    pub encodings: Vec<EncodingKind>,
    pub pools: Vec<PoolKind>,
    pub bases: Vec<ReferenceBasis>,
    /// Explicit references; all of `{0,1,2}^L` when absent.
    pub references: Option<Vec<String>>,
    pub config: AvqiteConfig,
}

impl SweepPlan {
    pub fn full(model: ModelSpec, config: AvqiteConfig) -> Self {
        SweepPlan {
            model,
            encodings: EncodingKind::ALL.to_vec(),
            pools: PoolKind::ALL.to_vec(),
            bases: vec![ReferenceBasis::Z, ReferenceBasis::X],
            references: None,
            config,
        }
    }

    pub fn references(&self) -> Vec<String> {
        self.references
            .clone()
            .unwrap_or_else(|| spin_strings(self.model.chain_len))
    }

    pub fn n_runs(&self) -> usize {
        self.encodings.len() * self.pools.len() * self.bases.len() * self.references().len()
    }
}

fn failed_result(problem: &Problem, pool: PoolKind, reference: Reference, cfg: &AvqiteConfig, err: &Error) -> RunResult {
    RunResult {
        model: problem.spec,
        encoding: problem.encoding,
        pool,
        reference,
        config: *cfg,
        method: METHOD_NOTE.to_string(),
        trajectory: Vec::new(),
        ansatz: Vec::new(),
        summary: FinalSummary {
            energy: 0.0,
            exact_energy: problem.oracle.energy,
            fidelity: 0.0,
            projector: 0.0,
            n_cx_final: 0,
            n_cx_cumulative: 0,
            n_params: 0,
            steps: 0,
            tau: 0.0,
            success: false,
            halted_reason: HaltReason::Failed,
            initial_variance: 0.0,
            initial_max_grad: 0.0,
            message: Some(err.to_string()),
        },
    }
}

/// Runs one (encoding, pool, basis) cell over `references` on a prepared
/// problem. Individual failures are recorded, never propagated.
pub fn run_cell(problem: &Problem, pool: PoolKind, basis: ReferenceBasis, references: &[String], cfg: &AvqiteConfig) -> Vec<RunResult> {
    references
        .par_iter()
        .map(|spins| {
            let reference = Reference::Product {
                spins: spins.clone(),
                basis,
                encoding: problem.encoding,
            };
            Ansatz::from_product(spins, basis, problem.encoding)
                .and_then(|a| run_problem(problem, pool, a, cfg))
                .unwrap_or_else(|e| failed_result(problem, pool, reference, cfg, &e))
        })
        .collect()
}

/// Deterministic run order: cell, then reference.
fn sort_runs(runs: &mut [RunResult]) {
    runs.sort_by(|a, b| {
        (a.model.chain_len, cell_of(a), reference_label(a)).cmp(&(b.model.chain_len, cell_of(b), reference_label(b)))
    });
}

/// Executes a sweep plan. Only configuration errors (bad model, encoding
/// too large, invalid config) abort.
pub fn sweep(plan: &SweepPlan) -> Result<(Vec<RunResult>, SweepReport)> {
    plan.config.validate()?;
    let references = plan.references();
    for s in &references {
        if parse_spins(s)?.len() != plan.model.chain_len {
            return Err(Error::InvalidSpinString(s.clone()));
        }
    }
    let mut runs = Vec::with_capacity(plan.n_runs());
    for &enc in &plan.encodings {
        let problem = Problem::new(&plan.model, enc)?;
        for &pool in &plan.pools {
            for &basis in &plan.bases {
                runs.extend(run_cell(&problem, pool, basis, &references, &plan.config));
            }
        }
    }
    sort_runs(&mut runs);
    let report = SweepReport::from_runs(&runs);
    Ok((runs, report))
}

/// SHA-256 of the run's configuration echo, used as the final ranking key.
pub fn config_hash(r: &RunResult) -> String {
    let echo = serde_json::json!({
        "model": r.model,
        "encoding": r.encoding,
        "pool": r.pool,
        "reference": r.reference,
        "config": r.config,
    });
    let digest = Sha256::digest(echo.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Successful runs ordered by final CNOT count, cumulative CNOT count,
/// number of steps, pool (maximal first) and finally configuration hash.
pub fn rank_references(results: &[RunResult]) -> Result<Vec<&RunResult>> {
    let mut ok: Vec<(&RunResult, String)> = results
        .iter()
        .filter(|r| r.is_success())
        .map(|r| (r, config_hash(r)))
        .collect();
    if ok.is_empty() {
        return Err(Error::Invalid("no successful runs to rank".into()));
    }
    ok.sort_by(|(a, ha), (b, hb)| {
        let ka = (a.summary.n_cx_final, a.summary.n_cx_cumulative, a.summary.steps, a.pool);
        let kb = (b.summary.n_cx_final, b.summary.n_cx_cumulative, b.summary.steps, b.pool);
        ka.cmp(&kb).then_with(|| ha.cmp(hb))
    });
    Ok(ok.into_iter().map(|(r, _)| r).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub exponent: f64,
    pub prefactor: f64,
    /// RMS residual of the log-log fit.
    pub residual: f64,
    /// Least-squares `a` in `N ≈ a L³`.
    pub prefactor_cubic: f64,
    /// Least-squares `a` in `N ≈ a L⁴`.
    pub prefactor_quartic: f64,
}

/// Log-log least squares of `N_CX` against `L`, plus fixed-exponent
/// prefactors.
pub fn fit_scaling(points: &[(f64, f64)]) -> Result<ScalingFit> {
    if points.iter().any(|&(l, n)| !(l > 0.0 && n > 0.0 && l.is_finite() && n.is_finite())) {
        return Err(Error::Invalid("scaling points must be positive and finite".into()));
    }
    let mut sizes: Vec<f64> = points.iter().map(|p| p.0).collect();
    sizes.sort_by(f64::total_cmp);
    sizes.dedup();
    if sizes.len() < 3 {
        return Err(Error::Invalid("scaling fit needs at least three sizes".into()));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let exponent = sxy / sxx;
    let intercept = my - exponent * mx;
    let residual = (xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - exponent * x).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    let fixed = |k: i32| {
        let num: f64 = points.iter().map(|&(l, c)| c * l.powi(k)).sum();
        let den: f64 = points.iter().map(|&(l, _)| l.powi(2 * k)).sum();
        num / den
    };
    Ok(ScalingFit {
        exponent,
        prefactor: intercept.exp(),
        residual,
        prefactor_cubic: fixed(3),
        prefactor_quartic: fixed(4),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub chain_len: usize,
    pub runs: usize,
    pub successes: usize,
    pub mean_n_cx_final: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellScaling {
    pub cell: CellKey,
    pub references: Vec<String>,
    pub points: Vec<ScalingPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodingScaling {
    pub encoding: EncodingKind,
    pub points: Vec<ScalingPoint>,
    pub fit: Option<ScalingFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingStudy {
    pub model: ModelSpec,
    pub top_k: usize,
    pub selection_granularity: String,
    pub cells: Vec<CellScaling>,
    pub encodings: Vec<EncodingScaling>,
}

fn scaling_point(chain_len: usize, runs: &[&RunResult]) -> ScalingPoint {
    let ok: Vec<f64> = runs
        .iter()
        .filter(|r| r.is_success())
        .map(|r| r.summary.n_cx_final as f64)
        .collect();
    ScalingPoint {
        chain_len,
        runs: runs.len(),
        successes: ok.len(),
        mean_n_cx_final: (!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64),
    }
}

/// Ranks references at the smallest size, carries the best `top_k` of each
/// cell to the larger sizes by periodic repetition, and fits the mean final
/// CNOT count per encoding. The unary encoding is skipped.
pub fn scaling_study(plan: &SweepPlan, sizes: &[usize], top_k: usize) -> Result<ScalingStudy> {
    let mut sizes = sizes.to_vec();
    sizes.sort_unstable();
    sizes.dedup();
    let (&l0, rest) = sizes
        .split_first()
        .ok_or_else(|| Error::Invalid("scaling study needs sizes".into()))?;
    let encodings: Vec<EncodingKind> = plan
        .encodings
        .iter()
        .copied()
        .filter(|&e| e != EncodingKind::Unary)
        .collect();
    let base_plan = SweepPlan {
        model: plan.model.with_len(l0),
        encodings: encodings.clone(),
        references: None,
        ..plan.clone()
    };
    let (base_runs, _) = sweep(&base_plan)?;

    let mut cells = Vec::new();
    let mut all_runs: Vec<RunResult> = Vec::new();
    for &enc in &encodings {
        for &pool in &plan.pools {
            for &basis in &plan.bases {
                let cell = CellKey {
                    encoding: enc,
                    pool,
                    basis,
                };
                let in_cell: Vec<RunResult> = base_runs.iter().filter(|r| cell_of(r) == Some(cell)).cloned().collect();
                let refs: Vec<String> = match rank_references(&in_cell) {
                    Ok(ranked) => ranked.iter().take(top_k).map(|r| reference_label(r)).collect(),
                    Err(_) => Vec::new(),
                };
                let chosen: Vec<&RunResult> = in_cell
                    .iter()
                    .filter(|r| refs.contains(&reference_label(r)))
                    .collect();
                let mut points = vec![scaling_point(l0, &chosen)];
                all_runs.extend(chosen.into_iter().cloned());
                for &l in rest {
                    if refs.is_empty() {
                        break;
                    }
                    let spec = plan.model.with_len(l);
                    let problem = Problem::new(&spec, enc)?;
                    let extended = refs
                        .iter()
                        .map(|s| extend_reference(s, l))
                        .collect::<Result<Vec<_>>>()?;
                    let runs = run_cell(&problem, pool, basis, &extended, &plan.config);
                    points.push(scaling_point(l, &runs.iter().collect::<Vec<_>>()));
                    all_runs.extend(runs);
                }
                cells.push(CellScaling {
                    cell,
                    references: refs,
                    points,
                });
            }
        }
    }

    let per_encoding = encodings
        .iter()
        .map(|&enc| {
            let points: Vec<ScalingPoint> = sizes
                .iter()
                .map(|&l| {
                    let runs: Vec<&RunResult> = all_runs
                        .iter()
                        .filter(|r| r.encoding == enc && r.model.chain_len == l)
                        .collect();
                    scaling_point(l, &runs)
                })
                .collect();
            let xy: Vec<(f64, f64)> = points
                .iter()
                .filter_map(|p| p.mean_n_cx_final.map(|m| (p.chain_len as f64, m)))
                .collect();
            EncodingScaling {
                encoding: enc,
                fit: fit_scaling(&xy).ok(),
                points,
            }
        })
        .collect();
    Ok(ScalingStudy {
        model: plan.model,
        top_k,
        selection_granularity: SELECTION_GRANULARITY.to_string(),
        cells,
        encodings: per_encoding,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub chain_len: usize,
    pub encoding: EncodingKind,
    pub pool: PoolKind,
    pub basis: String,
    pub reference: String,
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
    pub config_hash: String,
}

impl RunRow {
    pub fn from_result(r: &RunResult) -> Self {
        let basis = match &r.reference {
            Reference::Product { basis, .. } => basis.to_string(),
            Reference::Custom { .. } => "custom".to_string(),
        };
        RunRow {
            chain_len: r.model.chain_len,
            encoding: r.encoding,
            pool: r.pool,
            basis,
            reference: reference_label(r),
            energy: r.summary.energy,
            exact_energy: r.summary.exact_energy,
            fidelity: r.summary.fidelity,
            projector: r.summary.projector,
            n_cx_final: r.summary.n_cx_final,
            n_cx_cumulative: r.summary.n_cx_cumulative,
            n_params: r.summary.n_params,
            steps: r.summary.steps,
            tau: r.summary.tau,
            success: r.is_success(),
            halted_reason: r.summary.halted_reason,
            initial_variance: r.summary.initial_variance,
            initial_max_grad: r.summary.initial_max_grad,
            config_hash: config_hash(r),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TrajectoryRow<'a> {
    encoding: EncodingKind,
    pool: PoolKind,
    basis: &'a str,
    reference: &'a str,
    step: usize,
    tau: f64,
    energy: f64,
    mclachlan: f64,
    n_params: usize,
    n_cx: usize,
    projector: f64,
    max_grad: f64,
    added: usize,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io(format!("{}: {e}", path.display()))
}

/// Writes a trajectory CSV for one run.
pub fn write_trajectory_csv(path: &Path, runs: &[RunResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    for r in runs {
        let row = RunRow::from_result(r);
        for s in &r.trajectory {
            w.serialize(TrajectoryRow {
                encoding: r.encoding,
                pool: r.pool,
                basis: &row.basis,
                reference: &row.reference,
                step: s.step,
                tau: s.tau,
                energy: s.energy,
                mclachlan: s.mclachlan,
                n_params: s.n_params,
                n_cx: s.n_cx,
                projector: s.projector,
                max_grad: s.max_grad,
                added: s.added,
            })
            .map_err(|e| io_err(path, e))?;
        }
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn write_runs_csv(path: &Path, runs: &[RunResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    if runs.is_empty() {
        w.write_record(RUN_COLUMNS).map_err(|e| io_err(path, e))?;
    }
    for r in runs {
        w.serialize(RunRow::from_result(r)).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

const RUN_COLUMNS: [&str; 19] = [
    "chain_len",
    "encoding",
    "pool",
    "basis",
    "reference",
    "energy",
    "exact_energy",
    "fidelity",
    "projector",
    "n_cx_final",
    "n_cx_cumulative",
    "n_params",
    "steps",
    "tau",
    "success",
    "halted_reason",
    "initial_variance",
    "initial_max_grad",
    "config_hash",
];

pub fn read_runs_csv(path: &Path) -> Result<Vec<RunRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| io_err(path, e))).collect()
}

fn fmt_opt(x: Option<f64>, prec: usize) -> String {
    x.map(|v| format!("{v:.prec$}")).unwrap_or_else(|| "-".into())
}

/// Plain-text per-cell table.
pub fn text_table(report: &SweepReport) -> String {
    let mut s = format!(
        "{:<4} {:<10} {:<8} {:<5} {:>5} {:>5} {:>5} {:>7} {:>8} {:>8} {:>8} {:>6}\n",
        "L", "encoding", "pool", "basis", "runs", "incl", "vanish", "rate", "q1", "median", "q3", "leak"
    );
    for c in &report.cells {
        let b = c.n_cx_final.as_ref();
        s.push_str(&format!(
            "{:<4} {:<10} {:<8} {:<5} {:>5} {:>5} {:>5} {:>7} {:>8} {:>8} {:>8} {:>6}\n",
            c.chain_len,
            c.cell.encoding.name(),
            c.cell.pool.name(),
            c.cell.basis.to_string(),
            c.total,
            c.included,
            c.vanishing_gradient,
            fmt_opt(c.success_rate, 3),
            fmt_opt(b.map(|b| b.q1), 1),
            fmt_opt(b.map(|b| b.median), 1),
            fmt_opt(b.map(|b| b.q3), 1),
            c.leakage.above_threshold,
        ));
    }
    s.push_str(&format!(
        "overall: {} runs, {} included, {} excluded, success rate {}\n",
        report.overall.total,
        report.overall.included,
        report.overall.excluded,
        fmt_opt(report.overall.success_rate, 3)
    ));
    s
}

/// Paths written by [`write_report`].
#[derive(Debug, Clone)]
pub struct ReportFiles {
    pub runs_csv: PathBuf,
    pub trajectories_csv: Option<PathBuf>,
    pub summary_json: PathBuf,
    pub table_txt: PathBuf,
}

/// Writes `runs.csv`, optionally `trajectories.csv`, `summary.json` and
/// `summary.txt` into `dir`.
pub fn write_report(dir: &Path, runs: &[RunResult], trajectories: bool) -> Result<(SweepReport, ReportFiles)> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let report = SweepReport::from_runs(runs);
    let files = ReportFiles {
        runs_csv: dir.join("runs.csv"),
        trajectories_csv: trajectories.then(|| dir.join("trajectories.csv")),
        summary_json: dir.join("summary.json"),
        table_txt: dir.join("summary.txt"),
    };
    write_runs_csv(&files.runs_csv, runs)?;
    if let Some(p) = &files.trajectories_csv {
        write_trajectory_csv(p, runs)?;
    }
    fs::write(&files.summary_json, serde_json::to_string_pretty(&report)?).map_err(|e| io_err(&files.summary_json, e))?;
    fs::write(&files.table_txt, text_table(&report)).map_err(|e| io_err(&files.table_txt, e))?;
    Ok((report, files))
}

pub fn read_report(path: &Path) -> Result<SweepReport> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelSpec;

    fn ps(s: &str) -> PauliString {
        s.parse().unwrap()
    }

    #[test]
    fn cnot_examples() {
        assert_eq!(cnot_count_of([&ps("YXZI")]), 4);
        assert_eq!(cnot_count_of([&ps("IYII")]), 0);
        assert_eq!(cnot_count_of([&ps("YIII"), &ps("YZII"), &ps("IIXY")]), 4);
        let mut a = Ansatz::from_product("00", ReferenceBasis::Z, EncodingKind::Standard).unwrap();
        for (g, t) in [("YZII", 0.1), ("YXZI", 0.0)] {
            a.push(ps(g), t).unwrap();
        }
        assert_eq!(cnot_count(&a), 6);
        // angle-independent
        a.set_thetas(&[2.0, -1.0]).unwrap();
        assert_eq!(cnot_count(&a), 6);
    }

    /// Nearest-rank-free oracle: quantiles via the interpolated empirical
    /// CDF written out case by case.
    fn quantile_oracle(sample: &[f64], p: f64) -> f64 {
        let mut s = sample.to_vec();
        s.sort_by(f64::total_cmp);
        let n = s.len();
        if n == 1 {
            return s[0];
        }
        // positions k/(n-1) for k = 0..n-1 with value s[k]
        for k in 0..n - 1 {
            let a = k as f64 / (n - 1) as f64;
            let b = (k + 1) as f64 / (n - 1) as f64;
            if p >= a && p <= b {
                return s[k] + (p - a) / (b - a) * (s[k + 1] - s[k]);
            }
        }
        s[n - 1]
    }

    #[test]
    fn box_statistics() {
        let one = BoxStats::from_sample(&[7.0]).unwrap();
        assert_eq!((one.q1, one.median, one.q3), (7.0, 7.0, 7.0));
        assert!(BoxStats::from_sample(&[]).is_none());

        let s = [1.0, 2.0, 3.0, 4.0, 100.0];
        let b = BoxStats::from_sample(&s).unwrap();
        assert_eq!((b.q1, b.median, b.q3), (2.0, 3.0, 4.0));
        assert_eq!(b.outliers, vec![100.0]);
        assert_eq!((b.whisker_low, b.whisker_high), (1.0, 4.0));

        let sample = [3.5, 9.0, 1.25, 4.0, 4.0, 12.0, 0.5, 6.0];
        let b = BoxStats::from_sample(&sample).unwrap();
        for (p, q) in [(0.25, b.q1), (0.5, b.median), (0.75, b.q3)] {
            assert!((q - quantile_oracle(&sample, p)).abs() < 1e-12);
        }
        assert!(b.whisker_low >= b.min && b.whisker_high <= b.max);
    }

    #[test]
    fn leakage_bins() {
        let h = LeakageHistogram::from_projectors(&[1.0, 1.0 - 5e-4, 1.0 - 2e-3, 1.0 + 1e-15]);
        assert_eq!(h.underflow, 2);
        assert_eq!(h.above_threshold, 1);
        assert_eq!(h.counts[(-4 + 16) as usize], 1);
        assert_eq!(h.counts[(-3 + 16) as usize], 1);
    }

    #[test]
    fn spin_strings_and_extension() {
        let s = spin_strings(2);
        assert_eq!(s.len(), 9);
        assert_eq!(s[0], "00");
        assert_eq!(s[5], "12");
        assert_eq!(extend_reference("01", 5).unwrap(), "01010");
        assert_eq!(extend_reference("2", 3).unwrap(), "222");
        assert!(extend_reference("", 3).is_err());
    }

    fn fake(ncx: usize, total: usize, steps: usize, pool: PoolKind, spins: &str) -> RunResult {
        let spec = ModelSpec::blume_capel(2, -1.0, -0.1, -1.405);
        RunResult {
            model: spec,
            encoding: EncodingKind::Gray,
            pool,
            reference: Reference::Product {
                spins: spins.into(),
                basis: ReferenceBasis::Z,
                encoding: EncodingKind::Gray,
            },
            config: AvqiteConfig::default(),
            method: METHOD_NOTE.into(),
            trajectory: Vec::new(),
            ansatz: Vec::new(),
            summary: FinalSummary {
                energy: -1.0,
                exact_energy: -1.0,
                fidelity: 0.9995,
                projector: 1.0,
                n_cx_final: ncx,
                n_cx_cumulative: total,
                n_params: 1,
                steps,
                tau: 0.1,
                success: true,
                halted_reason: HaltReason::GradientConverged,
                initial_variance: 1.0,
                initial_max_grad: 1.0,
                message: None,
            },
        }
    }

    #[test]
    fn ranking_keys() {
        let rs = vec![fake(10, 5, 5, PoolKind::Maximal, "00"), fake(8, 50, 50, PoolKind::Minimal, "01")];
        let r = rank_references(&rs).unwrap();
        assert_eq!(r[0].summary.n_cx_final, 8);

        let rs = vec![fake(8, 5, 5, PoolKind::Minimal, "00"), fake(8, 5, 5, PoolKind::Maximal, "00")];
        assert_eq!(rank_references(&rs).unwrap()[0].pool, PoolKind::Maximal);

        // full ties resolved by hash, independent of input order
        let a = fake(8, 5, 5, PoolKind::Maximal, "00");
        let b = fake(8, 5, 5, PoolKind::Maximal, "11");
        let x = rank_references(&[a.clone(), b.clone()]).unwrap()[0].clone();
        let y = rank_references(&[b, a]).unwrap()[0].clone();
        assert_eq!(x, y);

        let mut bad = fake(1, 1, 1, PoolKind::Maximal, "00");
        bad.summary.fidelity = 0.5;
        assert!(rank_references(&[bad]).is_err());
    }

    #[test]
    fn stored_success_flag_is_not_trusted() {
        let mut r = fake(1, 1, 1, PoolKind::Maximal, "00");
        r.summary.fidelity = 0.99;
        assert!(r.summary.success);
        let rep = SweepReport::from_runs(&[r]);
        assert_eq!(rep.overall.successes, 0);
        assert_eq!(rep.exclusions[0].reason, ExclusionReason::NotConverged);
    }

    #[test]
    fn fits() {
        let pts: Vec<(f64, f64)> = (2..7).map(|l| (l as f64, 5.0 * (l as f64).powi(3))).collect();
        let f = fit_scaling(&pts).unwrap();
        assert!((f.exponent - 3.0).abs() < 1e-6);
        assert!((f.prefactor - 5.0).abs() < 1e-6);
        assert!((f.prefactor_cubic - 5.0).abs() < 1e-12);
        let pts: Vec<(f64, f64)> = (2..6).map(|l| (l as f64, 2.0 * (l as f64).powi(4))).collect();
        let f = fit_scaling(&pts).unwrap();
        assert!((f.exponent - 4.0).abs() < 1e-6);
        assert!((f.prefactor_quartic - 2.0).abs() < 1e-12);
        assert!(fit_scaling(&[(2.0, 1.0), (3.0, 0.0), (4.0, 2.0)]).is_err());
        assert!(fit_scaling(&[(2.0, 1.0), (3.0, 2.0)]).is_err());
    }

    #[test]
    fn sweep_counts_and_report_round_trip() {
        let spec = ModelSpec::blume_capel(2, -1.0, -0.1, -1.405);
        let plan = SweepPlan {
            encodings: vec![EncodingKind::Multiplet],
            pools: vec![PoolKind::Maximal],
            bases: vec![ReferenceBasis::Z],
            ..SweepPlan::full(spec, AvqiteConfig::default())
        };
        assert_eq!(plan.n_runs(), 9);
        let full = SweepPlan::full(spec, AvqiteConfig::default());
        let total: usize = [2, 3, 4].iter().map(|&l| SweepPlan::full(spec.with_len(l), full.config).n_runs()).sum();
        assert_eq!(total, 1872);

        let (runs, report) = sweep(&plan).unwrap();
        assert_eq!(runs.len(), 9);
        assert_eq!(report.overall.total, report.overall.included + report.overall.excluded);
        assert_eq!(report.cells.len(), 1);

        let dir = tempfile::tempdir().unwrap();
        let (written, files) = write_report(dir.path(), &runs, true).unwrap();
        assert_eq!(read_report(&files.summary_json).unwrap(), written);
        assert_eq!(read_runs_csv(&files.runs_csv).unwrap().len(), 9);
        assert!(files.trajectories_csv.unwrap().exists());

        let (empty, files) = write_report(&dir.path().join("empty"), &[], false).unwrap();
        assert_eq!(empty.overall.total, 0);
        assert!(read_runs_csv(&files.runs_csv).unwrap().is_empty());
        assert_eq!(read_report(&files.summary_json).unwrap(), empty);
    }

    #[test]
    fn failed_runs_are_recorded() {
        let spec = ModelSpec::blume_capel(2, -1.0, -0.1, -1.405);
        let problem = Problem::new(&spec, EncodingKind::Gray).unwrap();
        let runs = run_cell(
            &problem,
            PoolKind::Minimal,
            ReferenceBasis::Z,
            &["0".to_string(), "01".to_string()],
            &AvqiteConfig::default(),
        );
        assert_eq!(runs[0].summary.halted_reason, HaltReason::Failed);
        let rep = SweepReport::from_runs(&runs);
        assert_eq!(rep.cells[0].failed, 1);
        assert_eq!(rep.overall.excluded + rep.overall.included, 2);
    }
}
