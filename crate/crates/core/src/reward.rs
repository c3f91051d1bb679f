//! Outcome reward, learned validity gate, and the gated planner reward.
//!
//! The gate is a logistic model over hand-built tuple features. It is trained
//! by binary cross-entropy on judge-labelled tuples and its checkpoint is only
//! accepted when held-out AUC, balanced accuracy, precision and recall clear
//! fixed floors.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::Trajectory;
use crate::rng;
use crate::synthenv::{self, ProblemSpec, Strategy};

/// Version of [`TupleFeatures::vector`]; stored in every gate checkpoint.
pub const FEATURE_VERSION: u32 = 1;

pub const DEFAULT_GATE_THRESHOLD: f64 = 0.17;

/// Held-out acceptance floors for a gate checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceFloors {
    pub auc: f64,
    pub balanced_accuracy: f64,
    pub precision: f64,
    pub recall: f64,
}

impl Default for AcceptanceFloors {
    fn default() -> Self {
        Self { auc: 0.75, balanced_accuracy: 0.70, precision: 0.65, recall: 0.65 }
    }
}

/// Gate input features for one tuple.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TupleFeatures {
    /// Entries equal to some earlier entry.
    pub duplicate_count: u32,
    pub invalid_count: u32,
    /// `|S| - K`.
    pub length_delta: i32,
    /// Per-symbol counts summed over positions, `C + 1` entries.
    pub symbol_counts: Vec<u32>,
}

impl TupleFeatures {
    pub fn extract(tuple: &[Strategy], taxonomy_size: usize, k: usize) -> Self {
        let mut symbol_counts = vec![0u32; taxonomy_size + 1];
        let mut duplicate_count = 0;
        let mut invalid_count = 0;
        for &s in tuple {
            let idx = (s.0 as usize).min(taxonomy_size);
            if symbol_counts[idx] > 0 {
                duplicate_count += 1;
            }
            symbol_counts[idx] += 1;
            if idx == taxonomy_size {
                invalid_count += 1;
            }
        }
        Self {
            duplicate_count,
            invalid_count,
            length_delta: tuple.len() as i32 - k as i32,
            symbol_counts,
        }
    }

    /// `[bias, duplicates, invalids, |length delta|, symbol counts...]`.
    pub fn vector(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(4 + self.symbol_counts.len());
        v.push(1.0);
        v.push(self.duplicate_count as f64);
        v.push(self.invalid_count as f64);
        v.push(self.length_delta.unsigned_abs() as f64);
        v.extend(self.symbol_counts.iter().map(|&c| c as f64));
        v
    }
}

/// Logistic validity gate `J(x, S) = [sigmoid(w . f(S)) >= threshold]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateModel {
    pub weights: Vec<f64>,
    pub threshold: f64,
    pub feature_version: u32,
    pub taxonomy_size: usize,
    pub k: usize,
}

impl GateModel {
    /// All-zero weights: every tuple scores 0.5.
    pub fn zero(taxonomy_size: usize, k: usize, threshold: f64) -> Result<Self> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::Config(format!("gate threshold {threshold} outside (0, 1)")));
        }
        Ok(Self {
            weights: vec![0.0; 4 + taxonomy_size + 1],
            threshold,
            feature_version: FEATURE_VERSION,
            taxonomy_size,
            k,
        })
    }

    fn check(&self) -> Result<()> {
        if self.feature_version != FEATURE_VERSION {
            return Err(Error::FeatureVersion {
                model: self.feature_version,
                extractor: FEATURE_VERSION,
            });
        }
        if self.weights.len() != 4 + self.taxonomy_size + 1 {
            return Err(Error::Shape("gate weight vector does not match taxonomy".into()));
        }
        Ok(())
    }

    pub fn features(&self, tuple: &[Strategy]) -> TupleFeatures {
        TupleFeatures::extract(tuple, self.taxonomy_size, self.k)
    }

    pub fn score_features(&self, f: &TupleFeatures) -> Result<f64> {
        self.check()?;
        let v = f.vector();
        if v.len() != self.weights.len() {
            return Err(Error::Shape("feature vector does not match gate weights".into()));
        }
        Ok(sigmoid(dot(&self.weights, &v)))
    }

    /// `p(Pass | x, S)`.
    pub fn score(&self, tuple: &[Strategy]) -> Result<f64> {
        self.score_features(&self.features(tuple))
    }

    /// Binary decision; a score exactly at the threshold is accepted.
    pub fn decide(&self, tuple: &[Strategy]) -> Result<bool> {
        Ok(self.score(tuple)? >= self.threshold)
    }
}

pub fn gate_score(model: &GateModel, tuple: &[Strategy]) -> Result<f64> {
    model.score(tuple)
}

pub fn gate_decide(model: &GateModel, tuple: &[Strategy]) -> Result<bool> {
    model.decide(tuple)
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `R_out = max_i r_i`.
pub fn outcome_reward(traj: &Trajectory) -> bool {
    traj.outcomes.iter().any(|&r| r)
}

/// `R_plan = J * R_out`.
pub fn planner_reward(gate: bool, outcome: bool) -> bool {
    gate && outcome
}

/// `R_warm = J`.
pub fn warmup_reward(gate: bool) -> bool {
    gate
}

/// Which reward the planner receives. `Gated` is the full method; the other
/// two are the reward ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PlannerRewardKind {
    #[default]
    Gated,
    OutcomeOnly,
    GateOnly,
}

impl PlannerRewardKind {
    pub fn planner_reward(self, gate: bool, outcome: bool) -> bool {
        match self {
            PlannerRewardKind::Gated => planner_reward(gate, outcome),
            PlannerRewardKind::OutcomeOnly => outcome,
            PlannerRewardKind::GateOnly => gate,
        }
    }
}

/// All reward signals for one rollout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardRecord {
    pub gate_score: f64,
    pub gate_decision: bool,
    pub outcome: bool,
    pub planner_reward: bool,
    pub warmup: bool,
}

pub fn reward_record(gate: &GateModel, traj: &Trajectory) -> Result<RewardRecord> {
    let gate_score = gate.score(&traj.tuple)?;
    let gate_decision = gate_score >= gate.threshold;
    let outcome = outcome_reward(traj);
    Ok(RewardRecord {
        gate_score,
        gate_decision,
        outcome,
        planner_reward: planner_reward(gate_decision, outcome),
        warmup: warmup_reward(gate_decision),
    })
}

/// One judge-labelled tuple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateTrainingExample {
    pub features: TupleFeatures,
    pub label: bool,
}

/// Labels tuples with the rule-based judge.
pub fn label_tuples<'a, I>(items: I, k: usize) -> Vec<GateTrainingExample>
where
    I: IntoIterator<Item = (&'a ProblemSpec, &'a [Strategy])>,
{
    items
        .into_iter()
        .map(|(problem, tuple)| GateTrainingExample {
            features: TupleFeatures::extract(tuple, problem.taxonomy_size, k),
            label: synthenv::judge_tuple(problem, tuple, k),
        })
        .collect()
}

/// Downsamples the majority label to a 1:1 pool. Order within each label is
/// kept; the surviving examples are picked by a seeded shuffle.
pub fn balance_pool(pool: Vec<GateTrainingExample>, seed: u64) -> Vec<GateTrainingExample> {
    let (mut pos, mut neg): (Vec<_>, Vec<_>) = pool.into_iter().partition(|e| e.label);
    let n = pos.len().min(neg.len());
    let mut rng = rng::stream(&[seed, rng::stage::GATE, 0xBA1]);
    let mut keep = |v: &mut Vec<GateTrainingExample>| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.shuffle(&mut rng);
        let mut idx: Vec<usize> = idx.into_iter().take(n).collect();
        idx.sort_unstable();
        idx.into_iter().map(|i| v[i].clone()).collect::<Vec<_>>()
    };
    let p = keep(&mut pos);
    let q = keep(&mut neg);
    p.into_iter().zip(q).flat_map(|(a, b)| [a, b]).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GateTrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub validation_fraction: f64,
    pub threshold: f64,
    /// Search a high-recall threshold on validation when the default fails.
    pub select_threshold: bool,
    pub floors: AcceptanceFloors,
    pub seed: u64,
}

impl Default for GateTrainConfig {
    fn default() -> Self {
        Self {
            steps: 400,
            learning_rate: 0.5,
            l2: 1e-3,
            validation_fraction: 0.2,
            threshold: DEFAULT_GATE_THRESHOLD,
            select_threshold: true,
            floors: AcceptanceFloors::default(),
            seed: 0,
        }
    }
}

/// Held-out validation metrics at the gate threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateMetrics {
    pub auc: f64,
    pub balanced_accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub threshold: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateTraining {
    pub model: GateModel,
    pub metrics: GateMetrics,
}

/// Area under the ROC curve by pairwise comparison (ties count one half).
pub fn auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut pos: Vec<f64> = Vec::new();
    let mut neg: Vec<f64> = Vec::new();
    for (&s, &l) in scores.iter().zip(labels) {
        if l { pos.push(s) } else { neg.push(s) }
    }
    if pos.is_empty() || neg.is_empty() {
        return f64::NAN;
    }
    neg.sort_by(f64::total_cmp);
    let mut total = 0.0;
    for &p in &pos {
        let below = neg.partition_point(|&n| n < p);
        let equal = neg[below..].partition_point(|&n| n <= p);
        total += below as f64 + 0.5 * equal as f64;
    }
    total / (pos.len() * neg.len()) as f64
}

/// Metrics of a scored validation set at `threshold`.
pub fn threshold_metrics(
    scores: &[f64],
    labels: &[bool],
    threshold: f64,
    floors: &AcceptanceFloors,
) -> GateMetrics {
    let (mut tp, mut fp, mut tn, mut fn_) = (0.0, 0.0, 0.0, 0.0);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, false) => tn += 1.0,
            (false, true) => fn_ += 1.0,
        }
    }
    let ratio = |a: f64, b: f64| if a + b > 0.0 { a / (a + b) } else { 0.0 };
    let recall = ratio(tp, fn_);
    let specificity = ratio(tn, fp);
    let precision = ratio(tp, fp);
    let auc = auc(scores, labels);
    let balanced_accuracy = 0.5 * (recall + specificity);
    let accepted = auc >= floors.auc
        && balanced_accuracy >= floors.balanced_accuracy
        && precision >= floors.precision
        && recall >= floors.recall;
    GateMetrics { auc, balanced_accuracy, precision, recall, threshold, accepted }
}

fn split_pool(
    pool: &[GateTrainingExample],
    fraction: f64,
    seed: u64,
) -> (Vec<GateTrainingExample>, Vec<GateTrainingExample>) {
    let mut rng = rng::stream(&[seed, rng::stage::GATE, 0x5917]);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for label in [true, false] {
        let mut group: Vec<&GateTrainingExample> = pool.iter().filter(|e| e.label == label).collect();
        group.shuffle(&mut rng);
        let n_val = (group.len() as f64 * fraction).round() as usize;
        val.extend(group[..n_val].iter().map(|e| (*e).clone()));
        train.extend(group[n_val..].iter().map(|e| (*e).clone()));
    }
    (train, val)
}

fn fit(weights: &mut [f64], data: &[GateTrainingExample], cfg: &GateTrainConfig) {
    let xs: Vec<Vec<f64>> = data.iter().map(|e| e.features.vector()).collect();
    let ys: Vec<f64> = data.iter().map(|e| if e.label { 1.0 } else { 0.0 }).collect();
    let n = xs.len() as f64;
    let mut grad = vec![0.0; weights.len()];
    for _ in 0..cfg.steps {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for (x, &y) in xs.iter().zip(&ys) {
            let err = sigmoid(dot(weights, x)) - y;
            for (g, xi) in grad.iter_mut().zip(x) {
                *g += err * xi / n;
            }
        }
        for (j, (w, g)) in weights.iter_mut().zip(&grad).enumerate() {
            let reg = if j == 0 { 0.0 } else { cfg.l2 * *w };
            *w -= cfg.learning_rate * (g + reg);
        }
    }
}

fn evaluate(
    model: &GateModel,
    val: &[GateTrainingExample],
    cfg: &GateTrainConfig,
) -> Result<GateMetrics> {
    let scores = val
        .iter()
        .map(|e| model.score_features(&e.features))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<bool> = val.iter().map(|e| e.label).collect();
    let at_default = threshold_metrics(&scores, &labels, model.threshold, &cfg.floors);
    if at_default.accepted || !cfg.select_threshold {
        return Ok(at_default);
    }
    // Highest recall among passing thresholds, then balanced accuracy.
    let mut candidates: Vec<f64> = scores.iter().copied().filter(|s| *s > 0.0 && *s < 1.0).collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let best = candidates
        .into_iter()
        .map(|t| threshold_metrics(&scores, &labels, t, &cfg.floors))
        .filter(|m| m.accepted)
        .max_by(|a, b| {
            a.recall
                .total_cmp(&b.recall)
                .then(a.balanced_accuracy.total_cmp(&b.balanced_accuracy))
        });
    Ok(best.unwrap_or(at_default))
}

fn check_balanced(pool: &[GateTrainingExample]) -> Result<()> {
    let pos = pool.iter().filter(|e| e.label).count();
    let neg = pool.len() - pos;
    if pos != neg {
        return Err(Error::Data(format!("gate pool is unbalanced: {pos} positive vs {neg} negative")));
    }
    Ok(())
}

fn train_from(
    mut model: GateModel,
    pool: &[GateTrainingExample],
    cfg: &GateTrainConfig,
) -> Result<GateTraining> {
    check_balanced(pool)?;
    let (train, val) = split_pool(pool, cfg.validation_fraction, cfg.seed);
    if val.is_empty() || train.is_empty() {
        return Err(Error::Data("gate pool too small for a train/validation split".into()));
    }
    if val.iter().all(|e| e.label) || val.iter().all(|e| !e.label) {
        return Err(Error::Data("validation split lacks one of the labels".into()));
    }
    fit(&mut model.weights, &train, cfg);
    if !model.weights.iter().all(|w| w.is_finite()) {
        return Err(Error::Data("gate weights diverged".into()));
    }
    let metrics = evaluate(&model, &val, cfg)?;
    model.threshold = metrics.threshold;
    Ok(GateTraining { model, metrics })
}

/// Trains a fresh gate on a balanced pool and reports held-out metrics.
/// `metrics.accepted` is false when any acceptance floor is missed.
pub fn train_gate(
    pool: &[GateTrainingExample],
    taxonomy_size: usize,
    k: usize,
    cfg: &GateTrainConfig,
) -> Result<GateTraining> {
    let model = GateModel::zero(taxonomy_size, k, cfg.threshold)?;
    train_from(model, pool, cfg)
}

/// Result of a refresh. `metrics` is `None` when the fresh batch was empty
/// and the model is returned unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct GateRefresh {
    pub model: GateModel,
    pub metrics: Option<GateMetrics>,
}

/// Appends a rebalanced fresh batch to `pool` and resumes training from
/// `model`'s weights.
pub fn refresh_gate(
    model: &GateModel,
    pool: &mut Vec<GateTrainingExample>,
    fresh: Vec<GateTrainingExample>,
    cfg: &GateTrainConfig,
) -> Result<GateRefresh> {
    let fresh = balance_pool(fresh, cfg.seed);
    if fresh.is_empty() {
        return Ok(GateRefresh { model: model.clone(), metrics: None });
    }
    pool.extend(fresh);
    let mut start = model.clone();
    start.threshold = cfg.threshold;
    let trained = train_from(start, pool, cfg)?;
    Ok(GateRefresh { model: trained.model, metrics: Some(trained.metrics) })
}

/// Metrics of an existing gate on a labelled set, without training.
pub fn score_pool(model: &GateModel, pool: &[GateTrainingExample], floors: &AcceptanceFloors) -> Result<GateMetrics> {
    let scores = pool
        .iter()
        .map(|e| model.score_features(&e.features))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<bool> = pool.iter().map(|e| e.label).collect();
    Ok(threshold_metrics(&scores, &labels, model.threshold, floors))
}

/// Draws `n` labelled random tuples over `C + 1` symbols, used for synthetic pools.
pub fn random_labelled_tuples<R: Rng + ?Sized>(
    problem: &ProblemSpec,
    k: usize,
    n: usize,
    rng: &mut R,
) -> Vec<GateTrainingExample> {
    (0..n)
        .map(|_| {
            let t: Vec<Strategy> = (0..k)
                .map(|_| Strategy(rng.random_range(0..=problem.taxonomy_size) as u16))
                .collect();
            GateTrainingExample {
                features: TupleFeatures::extract(&t, problem.taxonomy_size, k),
                label: synthenv::judge_tuple(problem, &t, k),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthenv::{generate_suite, EnvConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn problem() -> ProblemSpec {
        generate_suite(&EnvConfig { problem_count: 1, ..EnvConfig::default() })
            .unwrap()
            .remove(0)
    }

    fn tuple(v: &[u16]) -> Vec<Strategy> {
        v.iter().map(|&x| Strategy(x)).collect()
    }

    #[test]
    fn outcome_reward_is_max() {
        let mut t = Trajectory {
            problem_id: 0,
            mode: Default::default(),
            tuple: tuple(&[0, 1, 2, 3]),
            answers: vec![],
            outcomes: vec![false, false, true, false],
            planner_tokens: 0,
            solver_tokens: vec![],
        };
        assert!(outcome_reward(&t));
        t.outcomes = vec![false; 4];
        assert!(!outcome_reward(&t));
        t.outcomes = vec![true; 4];
        assert!(outcome_reward(&t));
    }

    #[test]
    fn planner_reward_truth_table() {
        assert!(planner_reward(true, true));
        assert!(!planner_reward(false, true));
        assert!(!planner_reward(true, false));
        assert!(!planner_reward(false, false));
    }

    #[test]
    fn zero_gate_scores_one_half_and_accepts() {
        let g = GateModel::zero(8, 4, 0.17).unwrap();
        assert_eq!(g.score(&tuple(&[0, 1, 2, 3])).unwrap(), 0.5);
        assert!(g.decide(&tuple(&[0, 1, 2, 3])).unwrap());
    }

    #[test]
    fn threshold_tie_accepts() {
        let mut g = GateModel::zero(8, 4, 0.5).unwrap();
        assert!(g.decide(&tuple(&[0, 0, 0, 0])).unwrap());
        g.threshold = 0.5 + 1e-12;
        assert!(!g.decide(&tuple(&[0, 0, 0, 0])).unwrap());
    }

    #[test]
    fn feature_version_mismatch_is_an_error() {
        let mut g = GateModel::zero(8, 4, 0.17).unwrap();
        g.feature_version = 99;
        assert!(matches!(g.score(&tuple(&[0, 1, 2, 3])), Err(Error::FeatureVersion { .. })));
    }

    #[test]
    fn features_count_duplicates_and_invalids() {
        let f = TupleFeatures::extract(&tuple(&[0, 0, 8, 0]), 8, 4);
        assert_eq!(f.duplicate_count, 2);
        assert_eq!(f.invalid_count, 1);
        assert_eq!(f.length_delta, 0);
        assert_eq!(f.symbol_counts[0], 3);
    }

    #[test]
    fn auc_matches_pair_count() {
        let s = [0.1, 0.4, 0.35, 0.8];
        let l = [false, false, true, true];
        assert!((auc(&s, &l) - 0.75).abs() < 1e-12);
        assert_eq!(auc(&[0.5, 0.5], &[true, false]), 0.5);
    }

    #[test]
    fn unbalanced_pool_is_rejected() {
        let p = problem();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pool = random_labelled_tuples(&p, 4, 200, &mut rng);
        assert!(matches!(train_gate(&pool, 8, 4, &GateTrainConfig::default()), Err(Error::Data(_))));
    }

    #[test]
    fn trained_gate_rejects_duplicates() {
        let p = problem();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pool = balance_pool(random_labelled_tuples(&p, 4, 2000, &mut rng), 1);
        let trained = train_gate(&pool, 8, 4, &GateTrainConfig::default()).unwrap();
        assert!(trained.metrics.accepted, "{:?}", trained.metrics);
        assert!(!trained.model.decide(&tuple(&[3, 3, 1, 2])).unwrap());
        assert!(trained.model.decide(&tuple(&[3, 4, 1, 2])).unwrap());
    }

    #[test]
    fn empty_refresh_leaves_model_unchanged() {
        let g = GateModel::zero(8, 4, 0.17).unwrap();
        let mut pool = Vec::new();
        let r = refresh_gate(&g, &mut pool, Vec::new(), &GateTrainConfig::default()).unwrap();
        assert_eq!(r.model, g);
        assert!(r.metrics.is_none());
        assert!(pool.is_empty());
    }

    #[test]
    fn balanced_pool_alternates_labels() {
        let p = problem();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pool = balance_pool(random_labelled_tuples(&p, 4, 300, &mut rng), 0);
        assert!(!pool.is_empty());
        let pos = pool.iter().filter(|e| e.label).count();
        assert_eq!(pos * 2, pool.len());
    }
}
