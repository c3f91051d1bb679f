//! Pass@K under a fixed attempt budget, majority vote, decoded-token
//! accounting, and tuple diversity metrics.
//!
//! A budget `K_solve` is served by a planner trained for `K_tuple`-sized
//! tuples: below `K_tuple` the first `K_solve` branches of one tuple are used,
//! above it `ceil(K_solve / K_tuple)` independent tuples are pooled.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{rollout, PlanMode, PolicyParams, Trajectory};
use crate::rng::{self, stage};
use crate::synthenv::{self, Answer, ProblemSpec, Strategy};

/// Number of `k_tuple`-sized tuples pooled for a budget of `k_solve`.
pub fn tuples_needed(k_solve: usize, k_tuple: usize) -> usize {
    k_solve.div_ceil(k_tuple)
}

/// Branch outcomes used for a budget of `k_solve`, in sample order.
pub fn budget_branches(trajectories: &[Trajectory], k_solve: usize) -> Result<Vec<(Strategy, Answer, bool)>> {
    if k_solve == 0 {
        return Err(Error::Input("K_solve must be at least 1".into()));
    }
    let branches: Vec<_> = trajectories
        .iter()
        .flat_map(|t| {
            t.tuple
                .iter()
                .zip(&t.answers)
                .zip(&t.outcomes)
                .map(|((&s, &y), &r)| (s, y, r))
        })
        .take(k_solve)
        .collect();
    if branches.len() < k_solve {
        return Err(Error::Input(format!(
            "budget {k_solve} needs more branches than the {} supplied",
            branches.len()
        )));
    }
    Ok(branches)
}

/// Pass@K indicator over the truncated or pooled branch set.
pub fn pass_at_k(trajectories: &[Trajectory], k_solve: usize) -> Result<bool> {
    Ok(budget_branches(trajectories, k_solve)?.iter().any(|b| b.2))
}

/// `1 - (1 - p)^K`: pass@K of `K` independent attempts with success rate `p`.
pub fn expected_pass_at_k_iid(p: f64, k: u32) -> f64 {
    1.0 - (1.0 - p).powi(k as i32)
}

/// `(1 - eps)^K`: probability that `K` iid samples all miss a region of mass `eps`.
pub fn mode_missing_mass(eps: f64, k: u32) -> f64 {
    (1.0 - eps).powi(k as i32)
}

/// Majority vote against the canonical answer. Ties go to the answer whose
/// first occurrence comes earliest.
pub fn maj_at_k<T: PartialEq + Copy>(answers: &[T], canonical: T) -> bool {
    let mut tally: Vec<(T, usize)> = Vec::new();
    for &a in answers {
        match tally.iter_mut().find(|(x, _)| *x == a) {
            Some(entry) => entry.1 += 1,
            None => tally.push((a, 1)),
        }
    }
    // `tally` is in first-occurrence order; keep the first maximum.
    let mut best: Option<(T, usize)> = None;
    for (a, c) in tally {
        if best.is_none_or(|(_, bc)| c > bc) {
            best = Some((a, c));
        }
    }
    best.is_some_and(|(a, _)| a == canonical)
}

/// Mean pass rate per 10k mean decoded tokens.
pub fn token_normalized_pass(pass_rate: f64, mean_decoded_tokens: f64) -> Result<f64> {
    if mean_decoded_tokens.is_nan() || mean_decoded_tokens <= 0.0 {
        return Err(Error::Input("mean decoded tokens must be positive".into()));
    }
    Ok(pass_rate / mean_decoded_tokens * 1e4)
}

/// Token-normalized pass@K over report rows; failed branches count their tokens.
pub fn token_normalized_pass_rows(rows: &[RunRow]) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::Input("no rows".into()));
    }
    let n = rows.len() as f64;
    let pass = rows.iter().filter(|r| r.pass).count() as f64 / n;
    let tokens = rows.iter().map(|r| r.decoded_tokens() as f64).sum::<f64>() / n;
    token_normalized_pass(pass, tokens)
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// BLEU-4 of `candidate` against one `reference`: uniform weights over
/// modified 1..4-gram precisions with a brevity penalty and no smoothing.
/// Orders longer than the candidate are left out of the average.
pub fn bleu4(candidate: &[String], reference: &[String]) -> f64 {
    if candidate.is_empty() {
        return if reference.is_empty() { 1.0 } else { 0.0 };
    }
    let mut log_sum = 0.0;
    let mut orders = 0;
    for n in 1..=4 {
        if candidate.len() < n {
            break;
        }
        let cand = ngram_counts(candidate, n);
        let refc = ngram_counts(reference, n);
        let total: usize = cand.values().sum();
        let clipped: usize = cand
            .iter()
            .map(|(g, &c)| c.min(refc.get(g).copied().unwrap_or(0)))
            .sum();
        if clipped == 0 {
            return 0.0;
        }
        log_sum += (clipped as f64 / total as f64).ln();
        orders += 1;
    }
    let (c, r) = (candidate.len() as f64, reference.len() as f64);
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    bp * (log_sum / orders as f64).exp()
}

fn ordered_pairs(k: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..k).flat_map(move |i| (0..k).filter(move |&j| j != i).map(move |j| (i, j)))
}

/// Surface diversity: one minus mean BLEU-4 over ordered pairs.
pub fn d_surf(sequences: &[Vec<String>]) -> Result<f64> {
    let k = sequences.len();
    if k < 2 {
        return Err(Error::Input("d_surf needs at least two sequences".into()));
    }
    let total: f64 = ordered_pairs(k).map(|(i, j)| bleu4(&sequences[i], &sequences[j])).sum();
    Ok(1.0 - total / (k * (k - 1)) as f64)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Semantic diversity: mean pairwise cosine distance.
pub fn d_sem(embeddings: &[Vec<f64>]) -> Result<f64> {
    let k = embeddings.len();
    if k < 2 {
        return Err(Error::Input("d_sem needs at least two embeddings".into()));
    }
    let total: f64 = ordered_pairs(k)
        .map(|(i, j)| 1.0 - cosine(&embeddings[i], &embeddings[j]))
        .sum();
    Ok(total / (k * (k - 1)) as f64)
}

/// Algorithmic diversity: distinct categories over `K`.
pub fn d_alg(categories: &[usize]) -> Result<f64> {
    if categories.is_empty() {
        return Err(Error::Input("d_alg needs at least one category".into()));
    }
    let mut unique = categories.to_vec();
    unique.sort_unstable();
    unique.dedup();
    Ok(unique.len() as f64 / categories.len() as f64)
}

pub fn has_duplicate(tuple: &[Strategy]) -> bool {
    tuple.iter().enumerate().any(|(i, s)| tuple[..i].contains(s))
}

/// Fraction of tuples containing a repeated strategy.
pub fn duplicate_rate(tuples: &[Vec<Strategy>]) -> f64 {
    if tuples.is_empty() {
        return 0.0;
    }
    tuples.iter().filter(|t| has_duplicate(t)).count() as f64 / tuples.len() as f64
}

/// The three diversity metrics of one tuple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diversity {
    pub d_surf: f64,
    pub d_sem: f64,
    pub d_alg: f64,
}

pub fn tuple_diversity(problem: &ProblemSpec, tuple: &[Strategy]) -> Result<Diversity> {
    let texts: Vec<Vec<String>> = tuple.iter().map(|&s| problem.strategy_text(s)).collect();
    let embs = tuple
        .iter()
        .map(|&s| synthenv::embed(problem, s))
        .collect::<Result<Vec<_>>>()?;
    let cats: Vec<usize> = tuple.iter().map(|&s| problem.category(s)).collect();
    Ok(Diversity { d_surf: d_surf(&texts)?, d_sem: d_sem(&embs)?, d_alg: d_alg(&cats)? })
}

/// Agreement and accuracy figures for a category classifier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reliability {
    pub kappa: f64,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub informative: bool,
}

pub const KAPPA_FLOOR: f64 = 0.6;
pub const MACRO_F1_FLOOR: f64 = 0.7;

/// Cohen's kappa between two label sequences.
pub fn cohen_kappa(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Input("kappa needs two equal-length, non-empty label sets".into()));
    }
    let n = a.len() as f64;
    let observed = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / n;
    let mut ca: BTreeMap<usize, f64> = BTreeMap::new();
    let mut cb: BTreeMap<usize, f64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *ca.entry(x).or_default() += 1.0 / n;
        *cb.entry(y).or_default() += 1.0 / n;
    }
    let expected: f64 = ca.iter().map(|(c, p)| p * cb.get(c).copied().unwrap_or(0.0)).sum();
    if (1.0 - expected).abs() < 1e-15 {
        return Ok(if observed == 1.0 { 1.0 } else { 0.0 });
    }
    Ok((observed - expected) / (1.0 - expected))
}

/// Macro-averaged F1 over the classes present in either sequence.
pub fn macro_f1(pred: &[usize], truth: &[usize]) -> f64 {
    let mut classes: Vec<usize> = pred.iter().chain(truth).copied().collect();
    classes.sort_unstable();
    classes.dedup();
    if classes.is_empty() {
        return 0.0;
    }
    let total: f64 = classes
        .iter()
        .map(|&c| {
            let tp = pred.iter().zip(truth).filter(|(p, t)| **p == c && **t == c).count() as f64;
            let fp = pred.iter().zip(truth).filter(|(p, t)| **p == c && **t != c).count() as f64;
            let fn_ = pred.iter().zip(truth).filter(|(p, t)| **p != c && **t == c).count() as f64;
            if tp == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fn_) }
        })
        .sum();
    total / classes.len() as f64
}

/// Kappa between two annotators, plus accuracy and macro-F1 of `pred` on the
/// items where the annotators agree. `informative` applies both floors.
pub fn classifier_reliability(pred: &[usize], annotator_a: &[usize], annotator_b: &[usize]) -> Result<Reliability> {
    if pred.len() != annotator_a.len() {
        return Err(Error::Input("prediction and annotation lengths differ".into()));
    }
    let kappa = cohen_kappa(annotator_a, annotator_b)?;
    let (p, t): (Vec<usize>, Vec<usize>) = pred
        .iter()
        .zip(annotator_a.iter().zip(annotator_b))
        .filter(|(_, (a, b))| a == b)
        .map(|(p, (a, _))| (*p, *a))
        .unzip();
    if t.is_empty() {
        return Err(Error::Input("annotators never agree; no consensus labels".into()));
    }
    let accuracy = p.iter().zip(&t).filter(|(x, y)| x == y).count() as f64 / t.len() as f64;
    let f1 = macro_f1(&p, &t);
    Ok(Reliability {
        kappa,
        accuracy,
        macro_f1: f1,
        informative: kappa >= KAPPA_FLOOR && f1 >= MACRO_F1_FLOOR,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub k_list: Vec<usize>,
    pub mode: PlanMode,
    pub samples_per_problem: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { k_list: vec![4], mode: PlanMode::Joint, samples_per_problem: 4, seed: 0 }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_list.is_empty() || self.k_list.contains(&0) {
            return Err(Error::Config("k_list must be non-empty with every K >= 1".into()));
        }
        if self.samples_per_problem == 0 {
            return Err(Error::Config("samples_per_problem must be at least 1".into()));
        }
        Ok(())
    }
}

/// One evaluation row: one problem, one training seed, one sample, one budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub method: String,
    pub problem_id: u64,
    pub seed: u64,
    pub sample: usize,
    pub mode: PlanMode,
    pub k_solve: usize,
    pub pass: bool,
    pub maj: Option<bool>,
    pub planner_tokens: u64,
    pub solver_tokens: Vec<u32>,
    pub duplicate: bool,
    pub d_surf: f64,
    pub d_sem: f64,
    pub d_alg: f64,
    /// The rollouts behind every number in this row.
    pub trajectories: Vec<Trajectory>,
}

impl RunRow {
    pub fn decoded_tokens(&self) -> u64 {
        self.planner_tokens + self.solver_tokens.iter().map(|&t| t as u64).sum::<u64>()
    }
}

/// Recomputes every metric of a row from its trajectories.
pub fn row_from_trajectories(
    method: &str,
    problem: &ProblemSpec,
    seed: u64,
    sample: usize,
    mode: PlanMode,
    k_solve: usize,
    trajectories: Vec<Trajectory>,
) -> Result<RunRow> {
    let k_tuple = trajectories
        .first()
        .map(|t| t.tuple.len())
        .ok_or_else(|| Error::Input("row needs at least one trajectory".into()))?;
    let used = &trajectories[..tuples_needed(k_solve, k_tuple).min(trajectories.len())];
    let branches = budget_branches(used, k_solve)?;
    let pass = branches.iter().any(|b| b.2);
    let maj = problem.canonical_answer.map(|c| {
        let answers: Vec<Answer> = branches.iter().map(|b| b.1).collect();
        maj_at_k(&answers, c)
    });
    let planner_tokens = used.iter().map(|t| t.planner_tokens as u64).sum();
    let solver_tokens: Vec<u32> = used
        .iter()
        .flat_map(|t| t.solver_tokens.iter().copied())
        .take(k_solve)
        .collect();
    let first = &used[0];
    let diversity = if first.tuple.len() >= 2 {
        tuple_diversity(problem, &first.tuple)?
    } else {
        Diversity { d_surf: 0.0, d_sem: 0.0, d_alg: 1.0 }
    };
    Ok(RunRow {
        method: method.to_string(),
        problem_id: problem.id,
        seed,
        sample,
        mode,
        k_solve,
        pass,
        maj,
        planner_tokens,
        solver_tokens,
        duplicate: has_duplicate(&first.tuple),
        d_surf: diversity.d_surf,
        d_sem: diversity.d_sem,
        d_alg: diversity.d_alg,
        trajectories: used.to_vec(),
    })
}

/// Evaluates `params` on `suite`: one row per problem, sample and budget.
pub fn evaluate(
    method: &str,
    params: &PolicyParams,
    suite: &[ProblemSpec],
    cfg: &EvalConfig,
    train_seed: u64,
) -> Result<Vec<RunRow>> {
    cfg.validate()?;
    let k_tuple = params.k();
    let k_max = *cfg.k_list.iter().max().expect("validated non-empty");
    let pooled = tuples_needed(k_max, k_tuple);
    let mode_tag = match cfg.mode {
        PlanMode::Joint => 0,
        PlanMode::Iid => 1,
    };
    let per_problem = suite
        .par_iter()
        .map(|problem| {
            let mut rows = Vec::new();
            for sample in 0..cfg.samples_per_problem {
                let mut rng = rng::stream(&[cfg.seed, stage::EVAL, problem.id, sample as u64, mode_tag]);
                let trajs = (0..pooled)
                    .map(|_| rollout(params, problem, cfg.mode, &mut rng))
                    .collect::<Result<Vec<_>>>()?;
                for &k in &cfg.k_list {
                    let need = tuples_needed(k, k_tuple);
                    rows.push(row_from_trajectories(
                        method,
                        problem,
                        train_seed,
                        sample,
                        cfg.mode,
                        k,
                        trajs[..need].to_vec(),
                    )?);
                }
            }
            Ok(rows)
        })
        .collect::<Result<Vec<Vec<RunRow>>>>()?;
    Ok(per_problem.into_iter().flatten().collect())
}

/// Means of the row metrics for one budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub rows: usize,
    pub pass: f64,
    pub maj: Option<f64>,
    pub duplicate_rate: f64,
    pub mean_decoded_tokens: f64,
    pub d_surf: f64,
    pub d_sem: f64,
    pub d_alg: f64,
}

pub fn summarize(rows: &[RunRow], k_solve: usize) -> Option<Summary> {
    let sel: Vec<&RunRow> = rows.iter().filter(|r| r.k_solve == k_solve).collect();
    if sel.is_empty() {
        return None;
    }
    let n = sel.len() as f64;
    let mean = |f: &dyn Fn(&RunRow) -> f64| sel.iter().map(|r| f(r)).sum::<f64>() / n;
    let majs: Vec<bool> = sel.iter().filter_map(|r| r.maj).collect();
    Some(Summary {
        rows: sel.len(),
        pass: mean(&|r| r.pass as u8 as f64),
        maj: (!majs.is_empty()).then(|| majs.iter().filter(|&&m| m).count() as f64 / majs.len() as f64),
        duplicate_rate: mean(&|r| r.duplicate as u8 as f64),
        mean_decoded_tokens: mean(&|r| r.decoded_tokens() as f64),
        d_surf: mean(&|r| r.d_surf),
        d_sem: mean(&|r| r.d_sem),
        d_alg: mean(&|r| r.d_alg),
    })
}

/// Per-problem pass rate for one budget, averaged over samples.
pub fn per_problem_pass(rows: &[RunRow], k_solve: usize) -> BTreeMap<u64, f64> {
    let mut acc: BTreeMap<u64, (f64, f64)> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.k_solve == k_solve) {
        let e = acc.entry(r.problem_id).or_default();
        e.0 += r.pass as u8 as f64;
        e.1 += 1.0;
    }
    acc.into_iter().map(|(k, (s, n))| (k, s / n)).collect()
}
