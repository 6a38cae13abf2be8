//! `avqite` command-line driver.
//!
//! Every subcommand except `report` and `fit` reads a TOML config and writes
//! CSV/JSON files into the configured output directory. The exit code is
//! nonzero only for configuration and I/O errors; runs that fail to converge
//! are reported in the output, not signalled.

mod config;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use avqite_core::avqite::{run_problem, Ansatz, Problem, RunResult};
use avqite_core::exactdiag::{binder_crossing, ground_state, sector_crossing, CrossingScan};
use avqite_core::harness::{fit_scaling, scaling_study, sweep, text_table, write_report, write_trajectory_csv, SweepPlan};
use clap::{Parser, Subcommand};
use serde::Serialize;

use config::{load, BinderConfig, EdConfig, RunConfig, SectorConfig, SweepConfig};

#[derive(Parser)]
#[command(name = "avqite", version, about = "Spin-1 AVQITE experiments and exact-diagonalization scans")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Single AVQITE run from one reference state.
    Run { config: PathBuf },
    /// Grid of runs over references, encodings, pools and bases.
    Sweep { config: PathBuf },
    /// Lowest levels of the spin-1 chain.
    Ed { config: PathBuf },
    /// Binder-cumulant crossing in the transverse field.
    Binder { config: PathBuf },
    /// Twisted-boundary symmetry-sector level crossing in the anisotropy.
    SectorCross { config: PathBuf },
    /// Rebuilds report files from a sweep's `results.json`.
    Report {
        results: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        trajectories: bool,
    },
    /// Power-law fit of a CSV with columns `L,n_cx`.
    Fit {
        points: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { config } => cmd_run(&load(&config)?),
        Command::Sweep { config } => cmd_sweep(&load(&config)?),
        Command::Ed { config } => cmd_ed(&load(&config)?),
        Command::Binder { config } => cmd_binder(&load(&config)?),
        Command::SectorCross { config } => cmd_sector(&load(&config)?),
        Command::Report {
            results,
            out,
            trajectories,
        } => cmd_report(&results, &out, trajectories),
        Command::Fit { points, out } => cmd_fit(&points, out.as_deref()),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn cmd_run(cfg: &RunConfig) -> Result<()> {
    create_dir(&cfg.output)?;
    let problem = Problem::new(&cfg.model, cfg.encoding)?;
    let ansatz = Ansatz::from_product(&cfg.reference.spins, cfg.reference.basis, cfg.encoding)?;
    let r = run_problem(&problem, cfg.pool, ansatz, &cfg.avqite)?;
    write_trajectory_csv(&cfg.output.join("trajectory.csv"), std::slice::from_ref(&r))?;
    write_json(&cfg.output.join("result.json"), &r)?;
    let s = &r.summary;
    println!(
        "E = {:.10} (exact {:.10})  F = {:.6}  <P> = {:.6}  N_CX = {}  steps = {}  {:?}",
        s.energy, s.exact_energy, s.fidelity, s.projector, s.n_cx_final, s.steps, s.halted_reason
    );
    Ok(())
}

fn cmd_sweep(cfg: &SweepConfig) -> Result<()> {
    create_dir(&cfg.output)?;
    let plan = SweepPlan {
        model: cfg.model,
        encodings: cfg.encodings.clone(),
        pools: cfg.pools.clone(),
        bases: cfg.bases.clone(),
        references: cfg.references.clone(),
        config: cfg.avqite,
    };
    if let Some(sc) = &cfg.scaling {
        let study = scaling_study(&plan, &sc.sizes, sc.top_k)?;
        write_json(&cfg.output.join("scaling.json"), &study)?;
        for e in &study.encodings {
            match &e.fit {
                Some(f) => println!(
                    "{}: exponent {:.3}, a3 = {:.4}, a4 = {:.4}",
                    e.encoding, f.exponent, f.prefactor_cubic, f.prefactor_quartic
                ),
                None => println!("{}: not enough converged sizes to fit", e.encoding),
            }
        }
        return Ok(());
    }
    let sizes = cfg.sizes.clone().unwrap_or_else(|| vec![cfg.model.chain_len]);
    let mut runs = Vec::new();
    for l in sizes {
        if cfg.references.is_some() && l != cfg.model.chain_len {
            bail!("explicit references require a single size equal to model.L");
        }
        let (r, _) = sweep(&SweepPlan {
            model: cfg.model.with_len(l),
            ..plan.clone()
        })?;
        runs.extend(r);
    }
    write_json(&cfg.output.join("results.json"), &runs)?;
    let (report, _) = write_report(&cfg.output, &runs, cfg.trajectories)?;
    print!("{}", text_table(&report));
    Ok(())
}

#[derive(Serialize)]
struct EdSummary {
    model: avqite_core::model::ModelSpec,
    energies: Vec<f64>,
    residuals: Vec<f64>,
    ground_degeneracy: usize,
}

fn cmd_ed(cfg: &EdConfig) -> Result<()> {
    create_dir(&cfg.output)?;
    cfg.model.validate()?;
    let ed = ground_state(&cfg.model, cfg.levels)?;
    let path = cfg.output.join("spectrum.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["level", "energy", "residual"])?;
    for (k, (e, r)) in ed.energies.iter().zip(&ed.residuals).enumerate() {
        w.write_record([k.to_string(), e.to_string(), r.to_string()])?;
    }
    w.flush()?;
    write_json(
        &cfg.output.join("ed.json"),
        &EdSummary {
            model: cfg.model,
            energies: ed.energies.clone(),
            residuals: ed.residuals.clone(),
            ground_degeneracy: ed.ground_degeneracy(),
        },
    )?;
    for (k, e) in ed.energies.iter().enumerate() {
        println!("{k:>3} {e:.12}");
    }
    Ok(())
}

fn write_scan(dir: &Path, name: &str, scan: &CrossingScan) -> Result<()> {
    create_dir(dir)?;
    let path = dir.join(format!("{name}.csv"));
    let mut w = csv::Writer::from_path(&path)?;
    let mut header = vec![scan.parameter.clone()];
    header.extend(scan.series.iter().map(|s| s.label.clone()));
    w.write_record(&header)?;
    for (k, x) in scan.grid.iter().enumerate() {
        let mut row = vec![x.to_string()];
        row.extend(scan.series.iter().map(|s| s.values[k].to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    write_json(&dir.join("crossing.json"), scan)?;
    println!(
        "{} crossing at {:.6} ({} boundary; pairs {:?})",
        scan.parameter, scan.crossing, scan.boundary, scan.pair_crossings
    );
    Ok(())
}

fn cmd_binder(cfg: &BinderConfig) -> Result<()> {
    let scan = binder_crossing(&cfg.model, &cfg.sizes, &cfg.hx.values()?)?;
    write_scan(&cfg.output, "binder", &scan)
}

fn cmd_sector(cfg: &SectorConfig) -> Result<()> {
    let scan = sector_crossing(&cfg.model, &cfg.d.values()?, cfg.model.chain_len)?;
    write_scan(&cfg.output, "sector", &scan)
}

fn cmd_report(results: &Path, out: &Path, trajectories: bool) -> Result<()> {
    let text = fs::read_to_string(results).with_context(|| format!("reading {}", results.display()))?;
    let runs: Vec<RunResult> = serde_json::from_str(&text).with_context(|| format!("parsing {}", results.display()))?;
    let (report, _) = write_report(out, &runs, trajectories)?;
    print!("{}", text_table(&report));
    Ok(())
}

#[derive(serde::Deserialize)]
struct Point {
    #[serde(rename = "L")]
    l: f64,
    n_cx: f64,
}

fn cmd_fit(points: &Path, out: Option<&Path>) -> Result<()> {
    let mut r = csv::Reader::from_path(points).with_context(|| format!("reading {}", points.display()))?;
    let pts = r
        .deserialize::<Point>()
        .map(|p| p.map(|p| (p.l, p.n_cx)))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let fit = fit_scaling(&pts)?;
    let json = serde_json::to_string_pretty(&fit)?;
    match out {
        Some(p) => fs::write(p, &json).with_context(|| format!("writing {}", p.display()))?,
        None => println!("{json}"),
    }
    Ok(())
}
