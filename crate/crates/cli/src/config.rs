//! TOML run configurations.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use avqite_core::avqite::{AvqiteConfig, PoolKind};
use avqite_core::encoding::{EncodingKind, ReferenceBasis};
use avqite_core::model::ModelSpec;
use serde::de::DeserializeOwned;
use serde::Deserialize;

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Either an explicit list or an inclusive `start..=stop` range.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Grid {
    List(Vec<f64>),
    Range { start: f64, stop: f64, step: f64 },
}

impl Grid {
    pub fn values(&self) -> Result<Vec<f64>> {
        match *self {
            Grid::List(ref v) => Ok(v.clone()),
            Grid::Range { start, stop, step } => {
                if !(step > 0.0) || stop < start {
                    bail!("grid range needs step > 0 and stop >= start");
                }
                let n = ((stop - start) / step + 1e-9).floor() as usize;
                Ok((0..=n).map(|k| start + k as f64 * step).collect())
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceConfig {
    pub spins: String,
    #[serde(default = "default_basis")]
    pub basis: ReferenceBasis,
}

fn default_basis() -> ReferenceBasis {
    ReferenceBasis::Z
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub encoding: EncodingKind,
    pub pool: PoolKind,
    pub reference: ReferenceConfig,
    #[serde(default)]
    pub avqite: AvqiteConfig,
    pub output: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingConfig {
    pub sizes: Vec<usize>,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
}

fn default_top_k() -> usize {
    16
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub model: ModelSpec,
    /// Chain lengths to sweep; defaults to `model.L`.
    pub sizes: Option<Vec<usize>>,
    #[serde(default = "all_encodings")]
    pub encodings: Vec<EncodingKind>,
    #[serde(default = "all_pools")]
    pub pools: Vec<PoolKind>,
    #[serde(default = "all_bases")]
    pub bases: Vec<ReferenceBasis>,
    pub references: Option<Vec<String>>,
    #[serde(default)]
    pub avqite: AvqiteConfig,
    #[serde(default)]
    pub trajectories: bool,
    pub scaling: Option<ScalingConfig>,
    pub output: PathBuf,
}

fn all_encodings() -> Vec<EncodingKind> {
    EncodingKind::ALL.to_vec()
}

fn all_pools() -> Vec<PoolKind> {
    PoolKind::ALL.to_vec()
}

fn all_bases() -> Vec<ReferenceBasis> {
    vec![ReferenceBasis::Z, ReferenceBasis::X]
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdConfig {
    pub model: ModelSpec,
    #[serde(default = "default_levels")]
    pub levels: usize,
    pub output: PathBuf,
}

fn default_levels() -> usize {
    4
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinderConfig {
    pub model: ModelSpec,
    pub sizes: Vec<usize>,
    pub hx: Grid,
    pub output: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SectorConfig {
    pub model: ModelSpec,
    #[serde(rename = "Dz")]
    pub d: Grid,
    pub output: PathBuf,
}
