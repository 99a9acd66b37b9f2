//! Run configuration: one TOML file plus command-line overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use legible_core::experiment::{Condition, Environment, ExperimentConfig};
use serde::{Deserialize, Serialize};

/// File form of a run. Missing keys take the environment's defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub environment: Option<String>,
    pub grid_sizes: Option<Vec<u8>>,
    pub episodes: Option<usize>,
    pub master_seed: Option<u64>,
    pub beta: Option<f64>,
    pub beta_infer: Option<f64>,
    pub gamma: Option<f64>,
    pub step_limit: Option<u32>,
    pub conditions: Option<Vec<String>>,
    pub tol: Option<f64>,
    pub max_iters: Option<usize>,
    pub allow_large: Option<bool>,
    pub out_dir: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    /// Solve missing policies during `run` instead of failing.
    pub auto_solve: Option<bool>,
}

/// Command-line values that win over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub environment: Option<String>,
    pub grid_sizes: Option<Vec<u8>>,
    pub episodes: Option<usize>,
    pub master_seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub conditions: Option<Vec<String>>,
    pub beta: Option<f64>,
    pub allow_large: bool,
}

/// Fully resolved run settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub experiment: ExperimentConfig,
    pub out_dir: PathBuf,
    pub cache_dir: PathBuf,
    pub auto_solve: bool,
}

/// Echo of a [`RunConfig`] for manifests, in the file's key set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub environment: String,
    pub grid_sizes: Vec<u8>,
    pub episodes: usize,
    pub master_seed: u64,
    pub beta: f64,
    pub beta_infer: f64,
    pub gamma: f64,
    pub step_limit: u32,
    pub conditions: Vec<String>,
    pub tol: f64,
    pub max_iters: usize,
    pub allow_large: bool,
    pub out_dir: PathBuf,
    pub cache_dir: PathBuf,
    pub auto_solve: bool,
}

fn parse_env(s: &str) -> Result<Environment> {
    match Environment::parse(s) {
        Some(e) => Ok(e),
        None => bail!("unknown environment {s:?} (expected foraging or pursuit)"),
    }
}

fn parse_conditions(names: &[String]) -> Result<Vec<Condition>> {
    names
        .iter()
        .map(|s| Condition::parse(s).with_context(|| format!("unknown condition {s:?} (expected optimal or legible)")))
        .collect()
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn resolve(self, ov: &Overrides) -> Result<RunConfig> {
        let env_name = ov.environment.clone().or(self.environment).unwrap_or_else(|| String::from("foraging"));
        let base = ExperimentConfig::default_for(parse_env(&env_name)?);
        let conditions = match ov.conditions.as_ref().or(self.conditions.as_ref()) {
            Some(names) => parse_conditions(names)?,
            None => base.conditions.clone(),
        };
        let experiment = ExperimentConfig {
            grid_sizes: ov.grid_sizes.clone().or(self.grid_sizes).unwrap_or(base.grid_sizes.clone()),
            conditions,
            episodes: ov.episodes.or(self.episodes).unwrap_or(base.episodes),
            master_seed: ov.master_seed.or(self.master_seed).unwrap_or(base.master_seed),
            step_limit: self.step_limit.unwrap_or(base.step_limit),
            beta: ov.beta.or(self.beta).unwrap_or(base.beta),
            beta_infer: self.beta_infer.or(ov.beta).or(self.beta).unwrap_or(base.beta_infer),
            gamma: self.gamma.unwrap_or(base.gamma),
            tol: self.tol.unwrap_or(base.tol),
            max_iters: self.max_iters.unwrap_or(base.max_iters),
            allow_large: ov.allow_large || self.allow_large.unwrap_or(false),
            ..base
        };
        experiment.validate().map_err(|e| match e {
            legible_core::experiment::ExperimentError::Pursuit(p) => anyhow::anyhow!("{p} (pass --allow-large or set allow_large = true)"),
            e => anyhow::anyhow!("{e}"),
        })?;
        Ok(RunConfig {
            experiment,
            out_dir: ov.out_dir.clone().or(self.out_dir).unwrap_or_else(|| PathBuf::from("out")),
            cache_dir: self.cache_dir.unwrap_or_else(|| PathBuf::from("cache")),
            auto_solve: self.auto_solve.unwrap_or(true),
        })
    }
}

impl RunConfig {
    pub fn resolved(&self) -> ResolvedConfig {
        let e = &self.experiment;
        ResolvedConfig {
            environment: e.environment.name().into(),
            grid_sizes: e.grid_sizes.clone(),
            episodes: e.episodes,
            master_seed: e.master_seed,
            beta: e.beta,
            beta_infer: e.beta_infer,
            gamma: e.gamma,
            step_limit: e.step_limit,
            conditions: e.conditions.iter().map(|c| c.name().into()).collect(),
            tol: e.tol,
            max_iters: e.max_iters,
            allow_large: e.allow_large,
            out_dir: self.out_dir.clone(),
            cache_dir: self.cache_dir.clone(),
            auto_solve: self.auto_solve,
        }
    }
}
