//! Engine settings from an optional TOML file, overridden by command-line
//! flags.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use covergraph_core::scoring::AlignmentParams;
use covergraph_core::{CollapseMode, EngineConfig, Linkage, SyntheticSpec};
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub workspace: Option<PathBuf>,
    pub seed: Option<u64>,
    pub linkage: Option<Linkage>,
    pub logistic: LogisticSection,
    pub collapse: CollapseSection,
    pub synthetic: Option<SyntheticSpec>,
    pub alignment: Option<AlignmentParams>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogisticSection {
    pub midpoint: Option<f64>,
    pub scale: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollapseSection {
    pub eta: Option<f64>,
    pub update_tolerance: Option<f64>,
    pub max_sweeps: Option<usize>,
    pub mode: Option<CollapseMode>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Values given on the command line; each one wins over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub workspace: Option<PathBuf>,
    pub logistic_midpoint: Option<f64>,
    pub logistic_scale: Option<f64>,
    pub eta: Option<f64>,
    pub linkage: Option<Linkage>,
    pub collapse_mode: Option<CollapseMode>,
    pub max_sweeps: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct Settings {
    pub workspace: PathBuf,
    pub engine: EngineConfig,
    pub seed: u64,
    pub synthetic: SyntheticSpec,
    pub alignment: AlignmentParams,
}

pub const DEFAULT_WORKSPACE: &str = "workspace";

impl Settings {
    pub fn resolve(file: ConfigFile, cli: &Overrides) -> Result<Self> {
        let mut engine = EngineConfig::default();
        let pick = |cli: Option<f64>, file: Option<f64>, default: f64| cli.or(file).unwrap_or(default);
        engine.logistic.midpoint = pick(cli.logistic_midpoint, file.logistic.midpoint, engine.logistic.midpoint);
        engine.logistic.scale = pick(cli.logistic_scale, file.logistic.scale, engine.logistic.scale);
        engine.collapse.eta = pick(cli.eta, file.collapse.eta, engine.collapse.eta);
        engine.collapse.update_tolerance = file
            .collapse
            .update_tolerance
            .unwrap_or(engine.collapse.update_tolerance);
        engine.collapse.max_sweeps = cli
            .max_sweeps
            .or(file.collapse.max_sweeps)
            .unwrap_or(engine.collapse.max_sweeps);
        engine.collapse.mode = cli.collapse_mode.or(file.collapse.mode).unwrap_or(engine.collapse.mode);
        engine.linkage = cli.linkage.or(file.linkage).unwrap_or_default();
        engine.validate()?;

        let seed = cli.seed.or(file.seed).unwrap_or(0);
        let mut synthetic = file.synthetic.unwrap_or_default();
        if cli.seed.is_some() || file.seed.is_some() {
            synthetic.rng_seed = seed;
        }
        synthetic.validate()?;
        let alignment = file.alignment.unwrap_or_default();
        alignment.validate()?;

        Ok(Settings {
            workspace: cli
                .workspace
                .clone()
                .or(file.workspace)
                .unwrap_or_else(|| PathBuf::from(DEFAULT_WORKSPACE)),
            engine,
            seed,
            synthetic,
            alignment,
        })
    }
}
