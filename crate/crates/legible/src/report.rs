//! Summary documents and plot-ready tables.

use std::fmt::Write as _;

use legible_core::experiment::{Dataset, Exclusion};
use legible_core::stats::{CellSummary, Metric, StatReport, StatRow};
use serde::{Deserialize, Serialize};

/// Significance threshold marked in the tables.
pub const ALPHA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellDoc {
    pub n: usize,
    pub mean: f64,
    pub se: f64,
    pub ks_d: Option<f64>,
    pub ks_p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowDoc {
    pub grid: u8,
    pub metric: String,
    pub legible: CellDoc,
    pub optimal: CellDoc,
    /// U for the legible sample.
    pub u: f64,
    /// Two-sided p.
    pub p: f64,
    /// One-sided p for legible below optimal.
    pub p_less: f64,
    pub exact: bool,
    pub exclusions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExclusionDoc {
    pub grid: u8,
    pub scenario_id: u32,
    pub condition: String,
    pub reason: String,
}

impl From<&Exclusion> for ExclusionDoc {
    fn from(e: &Exclusion) -> Self {
        ExclusionDoc {
            grid: e.grid,
            scenario_id: e.scenario_id,
            condition: e.condition.name().into(),
            reason: e.reason.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessDoc {
    pub grid: u8,
    pub condition: String,
    pub episodes: usize,
    pub successes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryDoc {
    pub environment: String,
    pub success: Vec<SuccessDoc>,
    pub rows: Vec<RowDoc>,
    pub exclusions: Vec<ExclusionDoc>,
}

fn cell_doc(c: &CellSummary) -> CellDoc {
    CellDoc {
        n: c.n,
        mean: c.mean,
        se: c.se,
        ks_d: c.normality.map(|k| k.d),
        ks_p: c.normality.map(|k| k.p),
    }
}

fn row_doc(r: &StatRow) -> RowDoc {
    RowDoc {
        grid: r.grid,
        metric: r.metric.name().into(),
        legible: cell_doc(&r.legible),
        optimal: cell_doc(&r.optimal),
        u: r.test.u,
        p: r.test.p,
        p_less: r.p_less,
        exact: r.test.exact,
        exclusions: r.exclusions,
    }
}

pub fn summary_doc(data: &Dataset, report: &StatReport) -> SummaryDoc {
    let mut success = Vec::new();
    let mut cells: Vec<_> = data.records.iter().map(|r| (r.grid, r.condition)).collect();
    cells.sort();
    cells.dedup();
    for (grid, condition) in cells {
        let rs: Vec<_> = data.records.iter().filter(|r| r.grid == grid && r.condition == condition).collect();
        success.push(SuccessDoc {
            grid,
            condition: condition.name().into(),
            episodes: rs.len(),
            successes: rs.iter().filter(|r| r.episode.success).count(),
        });
    }
    SummaryDoc {
        environment: data.environment.name().into(),
        success,
        rows: report.rows.iter().map(row_doc).collect(),
        exclusions: data.exclusions.iter().map(ExclusionDoc::from).collect(),
    }
}

/// One table per metric with columns `grid,condition,mean,se,U,p,sig`.
/// Both condition rows of a grid share the test; U is each sample's own.
pub fn table(report: &StatReport, metric: Metric) -> String {
    let mut out = String::from("grid,condition,mean,se,U,p,sig\n");
    for r in report.rows.iter().filter(|r| r.metric == metric) {
        let sig = if r.test.p < ALPHA { "*" } else { "" };
        let n_ab = (r.legible.n * r.optimal.n) as f64;
        for (name, c, u) in [("optimal", &r.optimal, n_ab - r.test.u), ("legible", &r.legible, r.test.u)] {
            writeln!(out, "{},{name},{:.4},{:.4},{u},{:.6},{sig}", r.grid, c.mean, c.se, r.test.p).expect("string write");
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use legible_core::experiment::{Condition, Environment, Episode, EpisodeRecord};
    use legible_core::stats::{summarize, LillieforsCache};

    fn rec(id: u32, cond: Condition, steps: u32) -> EpisodeRecord {
        EpisodeRecord {
            scenario_id: id,
            grid: 6,
            condition: cond,
            episode: Episode {
                success: true,
                total_steps: steps,
                inference_steps: vec![steps / 2],
                never_inferred: vec![false],
                ..Episode::default()
            },
        }
    }

    #[test]
    fn hand_built_table() {
        let data = Dataset {
            environment: Environment::Foraging,
            records: vec![
                rec(0, Condition::Optimal, 10),
                rec(1, Condition::Optimal, 20),
                rec(0, Condition::Legible, 2),
                rec(1, Condition::Legible, 4),
            ],
            exclusions: Vec::new(),
        };
        let report = summarize(&data, &Metric::ALL, &mut LillieforsCache::new());
        let t = table(&report, Metric::TotalSteps);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[0], "grid,condition,mean,se,U,p,sig");
        assert_eq!(lines[1], "6,optimal,15.0000,5.0000,4,0.333333,");
        assert_eq!(lines[2], "6,legible,3.0000,1.0000,0,0.333333,");
        let doc = summary_doc(&data, &report);
        assert_eq!(doc.success.len(), 2);
        assert_eq!(doc.rows.len(), 2);
    }
}
