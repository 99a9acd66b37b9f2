//! File formats, policy caching and the `solve` / `run` / `report` commands
//! around [`legible_core`].

pub mod cache;
pub mod config;
pub mod dataset;
pub mod report;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use legible_core::experiment::{presample_scenarios, run_grid, Dataset, ExperimentConfig, Planner, Scenario};
use legible_core::stats::{summarize, LillieforsCache, Metric, StatReport};
use serde::{Deserialize, Serialize};

use crate::config::{ResolvedConfig, RunConfig};
use crate::report::{summary_doc, table, ExclusionDoc};

pub const EPISODES_FILE: &str = "episodes.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheStatus {
    Hit,
    /// Loaded, then extended with models the scenarios needed.
    Extended,
    Solved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub name: String,
    pub grid: u8,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCache {
    pub grid: u8,
    pub path: PathBuf,
    pub status: CacheStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: ResolvedConfig,
    pub master_seed: u64,
    pub caches: Vec<GridCache>,
    pub stages: Vec<Stage>,
    pub exclusions: Vec<ExclusionDoc>,
}

/// Planner for one grid with every model its scenarios reach, loading and
/// refreshing the cache as needed.
fn planner_for(rc: &RunConfig, side: u8, scenarios: &[Scenario], may_solve: bool) -> Result<(Planner, GridCache)> {
    let cfg = &rc.experiment;
    let path = cache::cache_path(&rc.cache_dir, cfg, side);
    let loaded = cache::load(&rc.cache_dir, cfg, side)?;
    let (mut planner, before) = match loaded {
        Some(values) => (Planner::with_values(cfg, side, values.clone())?, Some(values)),
        None if may_solve => (Planner::new(cfg, side)?, None),
        None => anyhow::bail!("no policy cache for grid {side} at {}; run `solve` first", path.display()),
    };
    if before.is_some() && !may_solve {
        // Without solving, anything missing is left to lazy solves during the run.
        return Ok((planner, GridCache { grid: side, path, status: CacheStatus::Hit }));
    }
    planner.prepare(scenarios, &cfg.conditions)?;
    let after = planner.values();
    let status = match before {
        Some(b) if b == after => CacheStatus::Hit,
        Some(_) => CacheStatus::Extended,
        None => CacheStatus::Solved,
    };
    if status != CacheStatus::Hit {
        cache::store(&rc.cache_dir, cfg, side, &after)?;
    }
    Ok((planner, GridCache { grid: side, path, status }))
}

/// Solves and stores the policy tables of every configured grid.
pub fn cmd_solve(rc: &RunConfig) -> Result<Vec<GridCache>> {
    let cfg = &rc.experiment;
    cfg.validate()?;
    let mut out = Vec::new();
    for &side in &cfg.grid_sizes {
        let scenarios = presample_scenarios(cfg, side)?;
        out.push(planner_for(rc, side, &scenarios, true)?.1);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub dataset: Dataset,
    pub report: StatReport,
    pub manifest: RunManifest,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("documents serialize");
    v.push(b'\n');
    v
}

/// Runs the experiment and writes the CSV, summary and manifest into the
/// output directory.
pub fn cmd_run(rc: &RunConfig) -> Result<RunOutput> {
    let cfg = &rc.experiment;
    cfg.validate()?;
    fs::create_dir_all(&rc.out_dir).with_context(|| format!("creating {}", rc.out_dir.display()))?;
    let mut caches = Vec::new();
    let mut stages = Vec::new();
    let mut data = Dataset {
        environment: cfg.environment,
        records: Vec::new(),
        exclusions: Vec::new(),
    };
    for &side in &cfg.grid_sizes {
        let scenarios = presample_scenarios(cfg, side)?;
        let t0 = Instant::now();
        let (mut planner, cached) = planner_for(rc, side, &scenarios, rc.auto_solve)?;
        stages.push(Stage {
            name: "solve".into(),
            grid: side,
            seconds: t0.elapsed().as_secs_f64(),
        });
        caches.push(cached);
        let t0 = Instant::now();
        let (records, exclusions) = run_grid(cfg, &scenarios, &mut planner);
        stages.push(Stage {
            name: "episodes".into(),
            grid: side,
            seconds: t0.elapsed().as_secs_f64(),
        });
        data.records.extend(records);
        data.exclusions.extend(exclusions);
    }
    let t0 = Instant::now();
    let report = analyse(&data);
    stages.push(Stage {
        name: "statistics".into(),
        grid: 0,
        seconds: t0.elapsed().as_secs_f64(),
    });
    let mut csv = Vec::new();
    dataset::write_records(&mut csv, &data.records)?;
    write_file(&rc.out_dir.join(EPISODES_FILE), &csv)?;
    write_file(&rc.out_dir.join(SUMMARY_FILE), &json(&summary_doc(&data, &report)))?;
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        config: rc.resolved(),
        master_seed: cfg.master_seed,
        caches,
        stages,
        exclusions: data.exclusions.iter().map(ExclusionDoc::from).collect(),
    };
    write_file(&rc.out_dir.join(MANIFEST_FILE), &json(&manifest))?;
    Ok(RunOutput { dataset: data, report, manifest })
}

pub fn analyse(data: &Dataset) -> StatReport {
    let report = summarize(data, &Metric::ALL, &mut LillieforsCache::new());
    for s in &report.skipped {
        eprintln!(
            "warning: grid {} has no {} values for the {} condition; row omitted",
            s.grid,
            s.metric.name(),
            s.condition.name()
        );
    }
    report
}

/// Plot-ready tables rebuilt from a dataset CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportOutput {
    pub environment: Option<String>,
    pub report: StatReport,
    /// `(metric, table text)`.
    pub tables: Vec<(Metric, String)>,
}

/// Reads the CSV at `path` (and its manifest, when one sits beside it) and
/// builds one table per metric. Tables go to `out_dir` when given.
pub fn cmd_report(path: &Path, out_dir: Option<&Path>) -> Result<ReportOutput> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let records = dataset::read_records(file).with_context(|| format!("parsing {}", path.display()))?;
    let manifest_path = path.with_file_name(MANIFEST_FILE);
    let manifest: Option<RunManifest> = match fs::read(&manifest_path) {
        Ok(bytes) => Some(serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", manifest_path.display()))?),
        Err(_) => None,
    };
    let environment = manifest.as_ref().map(|m| m.config.environment.clone());
    let env = environment
        .as_deref()
        .and_then(legible_core::experiment::Environment::parse)
        .unwrap_or(legible_core::experiment::Environment::Foraging);
    let exclusions = manifest
        .map(|m| {
            m.exclusions
                .into_iter()
                .filter_map(|e| {
                    Some(legible_core::experiment::Exclusion {
                        grid: e.grid,
                        scenario_id: e.scenario_id,
                        condition: legible_core::experiment::Condition::parse(&e.condition)?,
                        reason: e.reason,
                    })
                })
                .collect()
        })
        .unwrap_or_default();
    let data = Dataset {
        environment: env,
        records,
        exclusions,
    };
    let report = analyse(&data);
    let tables: Vec<(Metric, String)> = Metric::ALL.iter().map(|&m| (m, table(&report, m))).collect();
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let prefix = environment.as_deref().unwrap_or("dataset");
        for (m, t) in &tables {
            write_file(&dir.join(format!("{prefix}_{}.csv", m.name())), t.as_bytes())?;
        }
    }
    Ok(ReportOutput {
        environment,
        report,
        tables,
    })
}

/// Convenience for tests and scripts: a [`RunConfig`] around `experiment`.
pub fn run_config(experiment: ExperimentConfig, out_dir: PathBuf, cache_dir: PathBuf) -> RunConfig {
    RunConfig {
        experiment,
        out_dir,
        cache_dir,
        auto_solve: true,
    }
}
