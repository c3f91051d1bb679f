//! Problem-and-seed bootstrap significance and three-seed t intervals.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::Rng;
use rand_distr::{Beta, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, stage, StreamRng};

pub const DEFAULT_RESAMPLES: usize = 1000;
pub const DEFAULT_ALPHA: f64 = 0.05;
/// Two-sided 95% Student-t critical value with two degrees of freedom.
pub const T_CRIT_DF2: f64 = 4.3027;

/// Per-seed, per-problem scores of one trained method. Scores are usually
/// pass bits but per-problem pass rates work too.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResults {
    pub method: String,
    pub problems: Vec<u64>,
    pub seeds: Vec<u64>,
    /// `scores[seed][problem]`, aligned with `seeds` and `problems`.
    pub scores: Vec<Vec<f64>>,
}

impl MethodResults {
    pub fn new(method: impl Into<String>, problems: Vec<u64>, seeds: Vec<u64>, scores: Vec<Vec<f64>>) -> Result<Self> {
        let r = Self { method: method.into(), problems, seeds, scores };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Input(format!("method {} has no seeds", self.method)));
        }
        if self.scores.len() != self.seeds.len() {
            return Err(Error::Shape(format!("method {}: score rows do not match seeds", self.method)));
        }
        if self.scores.iter().any(|row| row.len() != self.problems.len()) {
            return Err(Error::Shape(format!(
                "method {}: every seed must cover the same problems",
                self.method
            )));
        }
        Ok(())
    }

    /// Mean score of each seed.
    pub fn seed_means(&self) -> Vec<f64> {
        self.scores
            .iter()
            .map(|row| row.iter().sum::<f64>() / row.len().max(1) as f64)
            .collect()
    }

    pub fn mean(&self) -> f64 {
        let m = self.seed_means();
        m.iter().sum::<f64>() / m.len() as f64
    }

    /// Sample standard deviation of the per-seed means.
    pub fn seed_std(&self) -> f64 {
        sample_std(&self.seed_means())
    }

    /// Scores reordered to follow `order`; errors when the problem sets differ.
    fn aligned_to(&self, order: &[u64]) -> Result<Vec<Vec<f64>>> {
        if order.len() != self.problems.len() {
            return Err(Error::Input(format!(
                "method {} covers {} problems, expected {}",
                self.method,
                self.problems.len(),
                order.len()
            )));
        }
        let index: HashMap<u64, usize> = self.problems.iter().enumerate().map(|(i, &p)| (p, i)).collect();
        let cols = order
            .iter()
            .map(|p| {
                index
                    .get(p)
                    .copied()
                    .ok_or_else(|| Error::Input(format!("method {} lacks problem {p}", self.method)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self
            .scores
            .iter()
            .map(|row| cols.iter().map(|&c| row[c]).collect())
            .collect())
    }
}

pub fn sample_std(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOutcome {
    /// Fraction of resamples whose statistic is `<= 0`.
    pub p_value: f64,
    pub resamples: usize,
    pub seed: u64,
    pub differences: Vec<f64>,
}

impl BootstrapOutcome {
    /// The p-value with the `1 / resamples` resolution floor applied.
    pub fn reported_p(&self) -> f64 {
        self.p_value.max(1.0 / self.resamples as f64)
    }

    pub fn significant(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

/// One-sided test that `a` beats `b`. Each resample draws the problem set
/// with replacement and one seed per method; the statistic is the difference
/// of means. Ties count as non-positive.
pub fn hierarchical_bootstrap(a: &MethodResults, b: &MethodResults, resamples: usize, seed: u64) -> Result<BootstrapOutcome> {
    a.validate()?;
    b.validate()?;
    if resamples == 0 {
        return Err(Error::Input("resamples must be at least 1".into()));
    }
    let sa = a.aligned_to(&a.problems)?;
    let sb = b.aligned_to(&a.problems)?;
    let n = a.problems.len();
    if n == 0 {
        return Err(Error::Input("no problems to resample".into()));
    }
    let differences: Vec<f64> = (0..resamples)
        .into_par_iter()
        .map(|r| {
            let mut rng: StreamRng = rng::stream(&[seed, stage::BOOTSTRAP, r as u64]);
            let ra = &sa[rng.random_range(0..sa.len())];
            let rb = &sb[rng.random_range(0..sb.len())];
            let mut total = 0.0;
            for _ in 0..n {
                let i = rng.random_range(0..n);
                total += ra[i] - rb[i];
            }
            total / n as f64
        })
        .collect();
    let non_positive = differences.iter().filter(|&&d| d <= 0.0).count();
    Ok(BootstrapOutcome {
        p_value: non_positive as f64 / resamples as f64,
        resamples,
        seed,
        differences,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedCi {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

impl SeedCi {
    pub fn excludes_zero(&self) -> bool {
        self.lo > 0.0 || self.hi < 0.0
    }
}

/// Mean and 95% t interval of three per-seed differences.
pub fn seed_ci(deltas: &[f64]) -> Result<SeedCi> {
    if deltas.len() != 3 {
        return Err(Error::Input(format!("seed_ci takes exactly 3 deltas, got {}", deltas.len())));
    }
    let mean = deltas.iter().sum::<f64>() / 3.0;
    let half = T_CRIT_DF2 * sample_std(deltas) / 3f64.sqrt();
    Ok(SeedCi { mean, lo: mean - half, hi: mean + half })
}

/// One row of a significance table: a method on a suite, compared with the
/// strongest other method on that suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceCell {
    pub suite: String,
    pub method: String,
    pub mean: f64,
    pub std: f64,
    pub baseline: Option<String>,
    pub p_value: Option<f64>,
    pub marked: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceTable {
    pub resamples: usize,
    pub seed: u64,
    pub alpha: f64,
    pub cells: Vec<SignificanceCell>,
}

/// Tests `candidate` against the best other method on every suite and marks
/// the cells where the bootstrap rejects at `alpha`.
pub fn significance_table(
    suites: &BTreeMap<String, Vec<MethodResults>>,
    candidate: &str,
    resamples: usize,
    alpha: f64,
    seed: u64,
) -> Result<SignificanceTable> {
    let mut cells = Vec::new();
    for (si, (suite, methods)) in suites.iter().enumerate() {
        let best_baseline = methods
            .iter()
            .filter(|m| m.method != candidate)
            .max_by(|x, y| x.mean().total_cmp(&y.mean()));
        for m in methods {
            let (baseline, p_value, marked) = match (m.method == candidate, best_baseline) {
                (true, Some(base)) => {
                    let out = hierarchical_bootstrap(m, base, resamples, rng::derive_seed(&[seed, si as u64]))?;
                    (Some(base.method.clone()), Some(out.p_value), out.significant(alpha))
                }
                _ => (None, None, false),
            };
            cells.push(SignificanceCell {
                suite: suite.clone(),
                method: m.method.clone(),
                mean: m.mean(),
                std: m.seed_std(),
                baseline,
                p_value,
                marked,
            });
        }
    }
    Ok(SignificanceTable { resamples, seed, alpha, cells })
}

/// Reads `method,seed,problem,bit` rows into one result set per method.
pub fn read_results_csv(path: &Path) -> Result<Vec<MethodResults>> {
    #[derive(Deserialize)]
    struct Row {
        method: String,
        seed: u64,
        problem: u64,
        bit: f64,
    }
    let mut reader = csv::Reader::from_path(path)?;
    let mut table: BTreeMap<String, BTreeMap<u64, BTreeMap<u64, f64>>> = BTreeMap::new();
    for row in reader.deserialize() {
        let row: Row = row?;
        table.entry(row.method).or_default().entry(row.seed).or_default().insert(row.problem, row.bit);
    }
    table
        .into_iter()
        .map(|(method, by_seed)| {
            let problems: Vec<u64> = by_seed.values().next().map(|m| m.keys().copied().collect()).unwrap_or_default();
            let seeds: Vec<u64> = by_seed.keys().copied().collect();
            let mut scores = Vec::new();
            for (seed, row) in &by_seed {
                if row.keys().copied().collect::<Vec<_>>() != problems {
                    return Err(Error::Input(format!("method {method} seed {seed} covers a different problem set")));
                }
                scores.push(row.values().copied().collect());
            }
            MethodResults::new(method, problems, seeds, scores)
        })
        .collect()
}

pub fn write_results_csv(path: &Path, results: &[MethodResults]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["method", "seed", "problem", "bit"])?;
    for r in results {
        for (seed, row) in r.seeds.iter().zip(&r.scores) {
            for (p, v) in r.problems.iter().zip(row) {
                w.write_record([r.method.clone(), seed.to_string(), p.to_string(), v.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Draws one method from a shared generator: per-problem pass propensities
/// come from `Beta(alpha, beta)`, and each seed's bits are Bernoulli draws
/// from them. A nonzero `gap` moves every propensity toward 1 (or 0) in
/// proportion to its headroom, which shifts the expected mean by exactly `gap`.
pub fn simulate_method(
    name: &str,
    problems: usize,
    seeds: usize,
    shape: (f64, f64),
    gap: f64,
    rng: &mut StreamRng,
) -> Result<MethodResults> {
    let beta = Beta::new(shape.0, shape.1).map_err(|e| Error::Config(format!("beta shape: {e}")))?;
    let mean = shape.0 / (shape.0 + shape.1);
    if gap > 1.0 - mean || -gap > mean {
        return Err(Error::Config(format!("gap {gap} exceeds the headroom of a mean-{mean:.3} generator")));
    }
    let propensity: Vec<f64> = (0..problems)
        .map(|_| {
            let p = beta.sample(rng);
            if gap >= 0.0 {
                p + gap * (1.0 - p) / (1.0 - mean)
            } else {
                p + gap * p / mean
            }
        })
        .collect();
    let scores = (0..seeds)
        .map(|_| {
            propensity
                .iter()
                .map(|&p| if rng.random::<f64>() < p { 1.0 } else { 0.0 })
                .collect()
        })
        .collect();
    MethodResults::new(name, (0..problems as u64).collect(), (0..seeds as u64).collect(), scores)
}
