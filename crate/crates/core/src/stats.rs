//! Rank tests, normality checks and per-cell summaries of a dataset.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::experiment::{Condition, Dataset, EpisodeRecord};
use crate::seeds;

/// Largest pooled size for which the exact null distribution is used.
pub const EXACT_MAX_TOTAL: usize = 12;
/// Monte Carlo replicates behind the Lilliefors p-value.
pub const LILLIEFORS_REPLICATES: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StatsError {
    #[error("sample is empty")]
    Empty,
    #[error("sample has {0} values, at least 4 are needed")]
    TooSmall(usize),
    #[error("sample contains a non-finite value")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Alternative {
    TwoSided,
    /// `a` tends to be smaller than `b`.
    Less,
    /// `a` tends to be larger than `b`.
    Greater,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MannWhitney {
    /// U for the first sample.
    pub u: f64,
    pub p: f64,
    pub exact: bool,
    /// Every pooled value is equal.
    pub degenerate: bool,
}

fn check(xs: &[f64]) -> Result<(), StatsError> {
    if xs.is_empty() {
        return Err(StatsError::Empty);
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    Ok(())
}

/// Midranks (1-based) of `xs` and the tie-group sizes.
pub fn midranks(xs: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&i, &j| xs[i].total_cmp(&xs[j]));
    let mut ranks = vec![0.0; xs.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && xs[order[j]] == xs[order[i]] {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        if j - i > 1 {
            ties.push(j - i);
        }
        i = j;
    }
    (ranks, ties)
}

/// Two-sided Mann-Whitney U test.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MannWhitney, StatsError> {
    mann_whitney_u_with(a, b, Alternative::TwoSided)
}

pub fn mann_whitney_u_with(a: &[f64], b: &[f64], alt: Alternative) -> Result<MannWhitney, StatsError> {
    check(a)?;
    check(b)?;
    let (na, nb) = (a.len(), b.len());
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let rank_sum: f64 = ranks[..na].iter().sum();
    let u = rank_sum - (na * (na + 1)) as f64 / 2.0;
    let n = na + nb;
    if ties.len() == 1 && ties[0] == n {
        return Ok(MannWhitney {
            u,
            p: 1.0,
            exact: false,
            degenerate: true,
        });
    }
    if ties.is_empty() && n <= EXACT_MAX_TOTAL {
        let dist = exact_u_counts(na, nb);
        let total: f64 = dist.iter().sum();
        let k = u as usize;
        let lower = dist[..=k].iter().sum::<f64>() / total;
        let upper = dist[k..].iter().sum::<f64>() / total;
        let p = match alt {
            Alternative::TwoSided => (2.0 * lower.min(upper)).min(1.0),
            Alternative::Less => lower,
            Alternative::Greater => upper,
        };
        return Ok(MannWhitney {
            u,
            p,
            exact: true,
            degenerate: false,
        });
    }
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (n * (n - 1)) as f64;
    Ok(MannWhitney {
        u,
        p: normal_p(u, na, nb, tie_term, alt),
        exact: false,
        degenerate: false,
    })
}

/// Normal approximation with continuity correction. `tie_term` is
/// `Σ(t³ − t) / (n(n − 1))` over tie groups.
fn normal_p(u: f64, na: usize, nb: usize, tie_term: f64, alt: Alternative) -> f64 {
    let n = na + nb;
    let mean = (na * nb) as f64 / 2.0;
    let var = (na * nb) as f64 / 12.0 * ((n + 1) as f64 - tie_term);
    let sd = libm::sqrt(var);
    let p = match alt {
        Alternative::TwoSided => {
            let z = ((u - mean).abs() - 0.5).max(0.0) / sd;
            libm::erfc(z / core::f64::consts::SQRT_2)
        }
        Alternative::Less => normal_cdf((u - mean + 0.5) / sd),
        Alternative::Greater => 1.0 - normal_cdf((u - mean - 0.5) / sd),
    };
    p.clamp(0.0, 1.0)
}

/// Number of rank arrangements giving each U = 0..=na·nb, for tie-free data.
pub fn exact_u_counts(na: usize, nb: usize) -> Vec<f64> {
    // table[i][j][u]: ways to arrange i values of a and j of b with U = u.
    let mut prev: Vec<Vec<f64>> = vec![vec![1.0]; nb + 1];
    for i in 1..=na {
        let mut cur: Vec<Vec<f64>> = Vec::with_capacity(nb + 1);
        cur.push(vec![1.0]);
        for j in 1..=nb {
            let mut row = vec![0.0; i * j + 1];
            // Largest value belongs to a: it beats all j values of b.
            for (u, &c) in prev[j].iter().enumerate() {
                row[u + j] += c;
            }
            for (u, &c) in cur[j - 1].iter().enumerate() {
                row[u] += c;
            }
            cur.push(row);
        }
        prev = cur;
    }
    prev.swap_remove(nb)
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / core::f64::consts::SQRT_2)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normality {
    /// Kolmogorov-Smirnov distance to the fitted normal.
    pub d: f64,
    pub p: f64,
    /// Zero variance; normality is rejected outright.
    pub degenerate: bool,
}

/// KS distance between the sample and a normal fitted by mean and sample
/// standard deviation. `None` for zero variance.
pub fn ks_statistic(xs: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    if var <= 0.0 {
        return None;
    }
    let sd = libm::sqrt(var);
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some(ks_sorted(&sorted, mean, sd))
}

fn ks_sorted(sorted: &[f64], mean: f64, sd: f64) -> f64 {
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = normal_cdf((x - mean) / sd);
        d = d.max((i + 1) as f64 / n - f).max(f - i as f64 / n);
    }
    d
}

/// Null distribution of the estimated-parameter KS distance at one size.
#[derive(Debug, Clone, PartialEq)]
pub struct LillieforsCalibration {
    n: usize,
    sorted: Vec<f64>,
}

impl LillieforsCalibration {
    /// Standard seed for size `n`: `derive(LILLIEFORS, n)`.
    pub fn seed_for(n: usize) -> u64 {
        seeds::derive(seeds::tags::LILLIEFORS, n as u64)
    }

    pub fn new(n: usize) -> Self {
        Self::with_replicates(n, LILLIEFORS_REPLICATES, Self::seed_for(n))
    }

    pub fn with_replicates(n: usize, replicates: usize, seed: u64) -> Self {
        assert!(n >= 4, "calibration needs at least 4 points");
        let mut rng = seeds::rng(seed);
        let mut draw = vec![0.0; n];
        let mut sorted: Vec<f64> = (0..replicates)
            .map(|_| {
                for x in draw.iter_mut() {
                    *x = StandardNormal.sample(&mut rng);
                }
                ks_statistic(&draw).unwrap_or(1.0)
            })
            .collect();
        sorted.sort_by(f64::total_cmp);
        LillieforsCalibration { n, sorted }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `(1 + #{replicates ≥ d}) / (1 + replicates)`.
    pub fn p_value(&self, d: f64) -> f64 {
        let below = self.sorted.partition_point(|&x| x < d);
        (1 + self.sorted.len() - below) as f64 / (1 + self.sorted.len()) as f64
    }
}

/// Lilliefors test against normality, calibrated afresh for this size.
pub fn ks_normality(xs: &[f64]) -> Result<Normality, StatsError> {
    check(xs)?;
    if xs.len() < 4 {
        return Err(StatsError::TooSmall(xs.len()));
    }
    ks_normality_with(xs, &LillieforsCalibration::new(xs.len()))
}

/// Lilliefors test using a calibration for `xs.len()`.
pub fn ks_normality_with(xs: &[f64], cal: &LillieforsCalibration) -> Result<Normality, StatsError> {
    check(xs)?;
    if xs.len() < 4 {
        return Err(StatsError::TooSmall(xs.len()));
    }
    assert_eq!(cal.n(), xs.len(), "calibration size mismatch");
    Ok(match ks_statistic(xs) {
        Some(d) => Normality {
            d,
            p: cal.p_value(d),
            degenerate: false,
        },
        None => Normality {
            d: 1.0,
            p: 0.0,
            degenerate: true,
        },
    })
}

/// Calibrations keyed by sample size.
#[derive(Debug, Clone, Default)]
pub struct LillieforsCache {
    by_size: BTreeMap<usize, LillieforsCalibration>,
}

impl LillieforsCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&mut self, n: usize) -> &LillieforsCalibration {
        self.by_size.entry(n).or_insert_with(|| LillieforsCalibration::new(n))
    }

    pub fn test(&mut self, xs: &[f64]) -> Result<Normality, StatsError> {
        if xs.len() < 4 {
            check(xs)?;
            return Err(StatsError::TooSmall(xs.len()));
        }
        let cal = self.get(xs.len());
        ks_normality_with(xs, cal)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    TotalSteps,
    /// Per-episode mean of steps to stable inference.
    InferenceSteps,
}

impl Metric {
    pub const ALL: [Metric; 2] = [Metric::TotalSteps, Metric::InferenceSteps];

    pub fn name(self) -> &'static str {
        match self {
            Metric::TotalSteps => "total_steps",
            Metric::InferenceSteps => "inference_steps",
        }
    }

    /// `None` when the episode finished no objective.
    pub fn value(self, r: &EpisodeRecord) -> Option<f64> {
        match self {
            Metric::TotalSteps => Some(r.episode.total_steps as f64),
            Metric::InferenceSteps => r.mean_inference(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellSummary {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation over √n; 0 for a single value.
    pub se: f64,
    pub normality: Option<Normality>,
}

pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, libm::sqrt(var / n))
}

/// Legible (sample a) against optimal (sample b) for one grid and metric.
#[derive(Debug, Clone, PartialEq)]
pub struct StatRow {
    pub grid: u8,
    pub metric: Metric,
    pub legible: CellSummary,
    pub optimal: CellSummary,
    pub test: MannWhitney,
    /// One-sided p for legible below optimal.
    pub p_less: f64,
    /// Scenario ids dropped from this grid.
    pub exclusions: usize,
}

/// Why a (grid, metric) cell produced no row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedCell {
    pub grid: u8,
    pub metric: Metric,
    pub condition: Condition,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StatReport {
    pub rows: Vec<StatRow>,
    pub skipped: Vec<SkippedCell>,
}

pub fn summarize(data: &Dataset, metrics: &[Metric], cache: &mut LillieforsCache) -> StatReport {
    let mut grids: Vec<u8> = data.records.iter().map(|r| r.grid).collect();
    grids.dedup();
    grids.sort_unstable();
    grids.dedup();
    let mut report = StatReport::default();
    for &grid in &grids {
        let mut excluded: Vec<u32> = data.exclusions.iter().filter(|e| e.grid == grid).map(|e| e.scenario_id).collect();
        excluded.sort_unstable();
        excluded.dedup();
        for &metric in metrics {
            let sample = |c: Condition| -> Vec<f64> {
                data.records
                    .iter()
                    .filter(|r| r.grid == grid && r.condition == c)
                    .filter_map(|r| metric.value(r))
                    .collect()
            };
            let (leg, opt) = (sample(Condition::Legible), sample(Condition::Optimal));
            let mut missing = false;
            for (c, xs) in [(Condition::Legible, &leg), (Condition::Optimal, &opt)] {
                if xs.is_empty() {
                    report.skipped.push(SkippedCell { grid, metric, condition: c });
                    missing = true;
                }
            }
            if missing {
                continue;
            }
            let mut cell = |xs: &[f64]| {
                let (mean, se) = mean_se(xs);
                CellSummary {
                    n: xs.len(),
                    mean,
                    se,
                    normality: cache.test(xs).ok(),
                }
            };
            let (legible, optimal) = (cell(&leg), cell(&opt));
            let test = mann_whitney_u(&leg, &opt).expect("samples are non-empty and finite");
            let p_less = mann_whitney_u_with(&leg, &opt, Alternative::Less).expect("checked above").p;
            report.rows.push(StatRow {
                grid,
                metric,
                legible,
                optimal,
                test,
                p_less,
                exclusions: excluded.len(),
            });
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn hand_examples() {
        let r = mann_whitney_u(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert_eq!(r.u, 0.0);
        assert!(r.exact);
        assert_abs_diff_eq!(r.p, 0.1, epsilon = 1e-15);
        let r = mann_whitney_u(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(r.u, 4.5);
        assert_eq!(r.p, 1.0);
        let r = mann_whitney_u(&[5.0], &[5.0]).unwrap();
        assert_eq!(r.u, 0.5);
        assert_eq!(r.p, 1.0);
        assert!(r.degenerate);
        assert_eq!(mann_whitney_u(&[], &[1.0]), Err(StatsError::Empty));
    }

    #[test]
    fn one_sided_halves() {
        let r = mann_whitney_u_with(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0], Alternative::Less).unwrap();
        assert_abs_diff_eq!(r.p, 0.05, epsilon = 1e-15);
        let r = mann_whitney_u_with(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0], Alternative::Greater).unwrap();
        assert_abs_diff_eq!(r.p, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn exact_counts_sum_to_binomial() {
        let c = exact_u_counts(3, 3);
        assert_eq!(c.iter().sum::<f64>(), 20.0);
        assert_eq!(c, vec![1.0, 1.0, 2.0, 3.0, 3.0, 3.0, 3.0, 2.0, 1.0, 1.0]);
        assert_eq!(exact_u_counts(6, 6).iter().sum::<f64>(), 924.0);
    }

    #[test]
    fn normal_approximation_tracks_exact() {
        let mut rng = seeds::rng(3);
        for _ in 0..200 {
            let mut pool: Vec<f64> = (0..12).map(|i| i as f64).collect();
            rand::seq::SliceRandom::shuffle(pool.as_mut_slice(), &mut rng);
            let (a, b) = pool.split_at(6);
            let exact = mann_whitney_u(a, b).unwrap();
            let approx = normal_p(exact.u, 6, 6, 0.0, Alternative::TwoSided);
            assert!((exact.p - approx).abs() < 0.03, "{} vs {approx}", exact.p);
        }
    }

    #[test]
    fn cell_mean_and_se() {
        assert_eq!(mean_se(&[2.0, 4.0]), (3.0, 1.0));
    }

    #[test]
    fn constant_sample_rejects_normality() {
        let r = ks_normality(&[3.0; 8]).unwrap();
        assert_eq!(r.p, 0.0);
        assert!(r.degenerate);
        assert_eq!(ks_normality(&[1.0, 2.0]), Err(StatsError::TooSmall(2)));
    }

    #[test]
    fn lilliefors_small_sample_quantile() {
        // Tabulated 5% critical value at n = 20 is about 0.190.
        let cal = LillieforsCalibration::new(20);
        let p = cal.p_value(0.190);
        assert!((p - 0.05).abs() < 0.01, "{p}");
    }
}
