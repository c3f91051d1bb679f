//! The five-stage training procedure: planner SFT, gate training, gate-guided
//! warm-up, a forward-only reward-density audit, and joint optimization.
//!
//! Every random draw comes from a stream keyed by
//! `(seed, stage, attempt, step, prompt, tuple)`, so a run is a pure function
//! of its configuration and seed regardless of thread count.

use rand::seq::{index, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{
    self, AdvantageSet, OptimConfig, Optimizer, PolicySnapshot, RolloutGroup, StepDiagnostics,
};
use crate::policy::{rollout, sample_categorical, PlanMode, PolicyParams, RegionMask, Trajectory};
use crate::reward::{
    self, GateModel, GateTrainConfig, GateTrainingExample, PlannerRewardKind, TupleFeatures,
};
use crate::rng::{self, stage};
use crate::synthenv::{self, ProblemSpec, Strategy};

/// Which `K` judge survivors become the gold tuple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SftSelection {
    #[default]
    First,
    Last,
    Random,
}

/// Stages to run. Disabled stages are reported as skipped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageSet {
    pub sft: bool,
    pub gate: bool,
    pub warmup: bool,
    pub audit: bool,
    pub joint: bool,
}

impl Default for StageSet {
    fn default() -> Self {
        Self { sft: true, gate: true, warmup: true, audit: true, joint: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub k: usize,
    pub init_std: f64,
    pub stages: StageSet,
    /// Sampling mode used for training rollouts.
    pub train_mode: PlanMode,
    pub planner_reward: PlannerRewardKind,

    pub candidates_per_problem: usize,
    pub sft_selection: SftSelection,
    pub t_sft: usize,
    pub sft_learning_rate: f64,

    /// Gate training steps; overrides `gate.steps`.
    pub t_rm: usize,
    pub gate: GateTrainConfig,
    /// Joint and iid samples per problem drawn for the gate pool.
    pub gate_pool_per_problem: usize,

    pub t_wu: usize,
    pub warmup_learning_rate: f64,
    pub plateau_window: usize,
    pub plateau_tolerance: f64,

    /// Minimum audit pass@K rate; `None` means one problem's worth.
    pub audit_min_pass: Option<f64>,
    pub audit_min_density: f64,
    pub audit_samples_per_problem: usize,
    pub max_backoff: usize,

    pub t_cppo: usize,
    pub batch_size: usize,
    pub refresh_period: usize,
    pub inner_epochs: usize,
    pub optim: OptimConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            k: 4,
            init_std: 0.01,
            stages: StageSet::default(),
            train_mode: PlanMode::Joint,
            planner_reward: PlannerRewardKind::Gated,
            candidates_per_problem: 6,
            sft_selection: SftSelection::First,
            t_sft: 100,
            sft_learning_rate: 0.05,
            t_rm: 400,
            gate: GateTrainConfig::default(),
            gate_pool_per_problem: 4,
            t_wu: 100,
            warmup_learning_rate: 0.05,
            plateau_window: 20,
            plateau_tolerance: 0.005,
            audit_min_pass: None,
            audit_min_density: 0.01,
            audit_samples_per_problem: 2,
            max_backoff: 2,
            t_cppo: 400,
            batch_size: 32,
            refresh_period: 50,
            inner_epochs: 1,
            optim: OptimConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.k == 0 {
            return fail("pipeline.k must be at least 1");
        }
        if self.optim.k != self.k {
            return fail("pipeline.optim.k must equal pipeline.k");
        }
        if self.candidates_per_problem < self.k {
            return fail("pipeline.candidates_per_problem must be at least k");
        }
        if self.init_std.is_nan() || self.init_std < 0.0 {
            return fail("pipeline.init_std must be non-negative");
        }
        if self.batch_size == 0 || self.audit_samples_per_problem == 0 || self.inner_epochs == 0 {
            return fail("pipeline.batch_size, audit_samples_per_problem and inner_epochs must be at least 1");
        }
        if self.plateau_window < 2 || !self.plateau_window.is_multiple_of(2) {
            return fail("pipeline.plateau_window must be an even number >= 2");
        }
        let unit = [
            ("plateau_tolerance", self.plateau_tolerance),
            ("audit_min_density", self.audit_min_density),
            ("audit_min_pass", self.audit_min_pass.unwrap_or(0.0)),
        ];
        for (name, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("pipeline.{name} must lie in [0, 1]")));
            }
        }
        if !(self.sft_learning_rate >= 0.0 && self.warmup_learning_rate >= 0.0) {
            return fail("pipeline learning rates must be non-negative");
        }
        self.optim.validate()
    }

    fn gate_cfg(&self, seed: u64, attempt: usize) -> GateTrainConfig {
        GateTrainConfig {
            steps: self.t_rm,
            seed: rng::derive_seed(&[seed, stage::GATE, attempt as u64]),
            ..self.gate.clone()
        }
    }
}

/// A judge-clean gold tuple and the funnel that produced it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldTuple {
    pub problem_id: u64,
    pub tuple: Vec<Strategy>,
    pub generated: usize,
    pub survived: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AuditCriterion {
    PassAtK,
    RewardDensity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageName {
    Sft,
    Gate,
    Warmup,
    Audit,
    Joint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "status")]
pub enum StageStatus {
    Completed,
    Skipped,
    Plateaued { step: usize },
    AuditFailed { criterion: AuditCriterion, back_to: StageName },
    GateRejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: StageName,
    pub attempt: usize,
    pub status: StageStatus,
    pub metrics: Vec<StepDiagnostics>,
    pub gate_metrics: Option<reward::GateMetrics>,
    pub audit: Option<AuditResult>,
    pub digest: String,
}

impl StageReport {
    fn new(stage: StageName, attempt: usize, status: StageStatus, params: &PolicyParams) -> Self {
        Self { stage, attempt, status, metrics: Vec::new(), gate_metrics: None, audit: None, digest: params.digest() }
    }
}

/// Samples `candidates` single methods from the base planner's first-position
/// row, keeps those the method judge accepts, and builds a `k`-tuple for every
/// problem with at least `k` survivors.
pub fn build_sft_set(
    params: &PolicyParams,
    suite: &[ProblemSpec],
    k: usize,
    candidates: usize,
    selection: SftSelection,
    seed: u64,
) -> Result<Vec<GoldTuple>> {
    let mut gold = Vec::new();
    for problem in suite {
        let pi = params.covers(problem)?;
        let row = params.plan_row(params.plan_offset(pi, 0, 0)?);
        let mut rng = rng::stream(&[seed, stage::SFT, problem.id]);
        let mut kept: Vec<Strategy> = Vec::new();
        for _ in 0..candidates {
            let s = Strategy(sample_categorical(row, &mut rng) as u16);
            if synthenv::judge_method(problem, &kept, s) {
                kept.push(s);
            }
        }
        if kept.len() < k {
            continue;
        }
        let survived = kept.len();
        let tuple = match selection {
            SftSelection::First => kept[..k].to_vec(),
            SftSelection::Last => kept[kept.len() - k..].to_vec(),
            SftSelection::Random => {
                kept.shuffle(&mut rng);
                kept.truncate(k);
                kept
            }
        };
        debug_assert!(synthenv::judge_tuple(problem, &tuple, k));
        gold.push(GoldTuple { problem_id: problem.id, tuple, generated: candidates, survived });
    }
    if gold.is_empty() {
        return Err(Error::Data(
            "no problem kept k judge-clean candidates; the base planner is not diverse enough".into(),
        ));
    }
    Ok(gold)
}

/// Full-batch cross-entropy on the gold tuples, plan region only.
pub fn stage1_sft(
    params: &mut PolicyParams,
    gold: &[GoldTuple],
    steps: usize,
    optim: &OptimConfig,
) -> Result<Vec<StepDiagnostics>> {
    let pairs: Vec<(u64, Vec<Strategy>)> = gold.iter().map(|g| (g.problem_id, g.tuple.clone())).collect();
    let mut opt = Optimizer::new(params, optim);
    let mut history = Vec::with_capacity(steps);
    for step in 0..steps {
        let (loss, grad) = optim::tuple_nll_gradient(params, &pairs, PlanMode::Joint)?;
        opt.step(params, &grad, optim, RegionMask::PLAN);
        history.push(StepDiagnostics {
            stage: "sft".into(),
            step,
            loss: loss / pairs.len().max(1) as f64,
            grad_norm: grad.norm(),
            advantage_density: 0.0,
            mean_outcome: 0.0,
            mean_planner_reward: 0.0,
            gate_acceptance: 0.0,
            duplicate_rate: 0.0,
        });
    }
    Ok(history)
}

/// Samples a judge-labelled, balanced pool from the current planner: joint
/// tuples and iid tuples for every problem.
pub fn gate_pool(params: &PolicyParams, suite: &[ProblemSpec], per_problem: usize, seed: u64) -> Result<Vec<GateTrainingExample>> {
    let k = params.k();
    let mut pool = Vec::new();
    for problem in suite {
        let mut rng = rng::stream(&[seed, stage::GATE, problem.id]);
        for mode in [PlanMode::Joint, PlanMode::Iid] {
            for _ in 0..per_problem {
                let t = crate::policy::sample_tuple(params, problem, mode, &mut rng)?;
                pool.push(GateTrainingExample {
                    features: TupleFeatures::extract(&t, problem.taxonomy_size, k),
                    label: synthenv::judge_tuple(problem, &t, k),
                });
            }
        }
    }
    Ok(reward::balance_pool(pool, seed))
}

/// Per-step view of one batch of rollouts.
struct Batch {
    groups: Vec<RolloutGroup>,
    diag: StepDiagnostics,
}

/// How planner rewards are formed during an RL stage.
#[derive(Debug, Clone, Copy)]
enum PlannerSignal {
    /// `R = J`, used by the warm-up.
    Gate,
    Kind(PlannerRewardKind),
}

struct RlSpec<'a> {
    stage_tag: u64,
    stage_name: &'static str,
    attempt: usize,
    mode: PlanMode,
    signal: PlannerSignal,
    terms: RegionMask,
    gate: Option<&'a GateModel>,
}

fn batch_indices(n: usize, batch: usize, path: &[u64]) -> Vec<usize> {
    let mut rng = rng::stream(path);
    if batch >= n {
        return (0..n).collect();
    }
    let mut idx = index::sample(&mut rng, n, batch).into_vec();
    idx.sort_unstable();
    idx
}

fn collect_batch(
    params: &PolicyParams,
    suite: &[ProblemSpec],
    cfg: &PipelineConfig,
    spec: &RlSpec,
    seed: u64,
    step: usize,
) -> Result<Batch> {
    let m = cfg.optim.group_size;
    let eps = cfg.optim.norm_epsilon;
    let picks = batch_indices(
        suite.len(),
        cfg.batch_size,
        &[seed, spec.stage_tag, spec.attempt as u64, step as u64, u64::MAX],
    );
    struct Scored {
        group: RolloutGroup,
        outcome: f64,
        planner: f64,
        accepted: f64,
        duplicates: f64,
    }
    let scored = picks
        .par_iter()
        .map(|&pi| {
            let problem = &suite[pi];
            let mut trajectories = Vec::with_capacity(m);
            for j in 0..m {
                let mut rng = rng::stream(&[seed, spec.stage_tag, spec.attempt as u64, step as u64, problem.id, j as u64]);
                trajectories.push(rollout(params, problem, spec.mode, &mut rng)?);
            }
            let mut gate_bits = Vec::with_capacity(m);
            for t in &trajectories {
                gate_bits.push(match spec.gate {
                    Some(g) => g.decide(&t.tuple)?,
                    None => true,
                });
            }
            let outcomes: Vec<bool> = trajectories.iter().map(reward::outcome_reward).collect();
            let planner_rewards: Vec<bool> = gate_bits
                .iter()
                .zip(&outcomes)
                .map(|(&g, &o)| match spec.signal {
                    PlannerSignal::Gate => reward::warmup_reward(g),
                    PlannerSignal::Kind(kind) => kind.planner_reward(g, o),
                })
                .collect();
            let planner = if m == 1 {
                optim::reinforce_advantages(&planner_rewards)
            } else {
                optim::planner_advantages(&planner_rewards, eps)?
            };
            let solver = if spec.terms.solve {
                trajectories
                    .iter()
                    .map(|t| optim::solver_advantages(&t.outcomes, eps))
                    .collect::<Result<Vec<_>>>()?
            } else {
                Vec::new()
            };
            let frac = |v: &[bool]| v.iter().filter(|&&b| b).count() as f64 / v.len() as f64;
            let dups: Vec<bool> = trajectories.iter().map(|t| crate::eval::has_duplicate(&t.tuple)).collect();
            Ok(Scored {
                outcome: frac(&outcomes),
                planner: frac(&planner_rewards),
                accepted: frac(&gate_bits),
                duplicates: frac(&dups),
                group: RolloutGroup { trajectories, advantages: AdvantageSet { solver, planner } },
            })
        })
        .collect::<Result<Vec<Scored>>>()?;

    let n = scored.len().max(1) as f64;
    let mean = |f: &dyn Fn(&Scored) -> f64| scored.iter().map(f).sum::<f64>() / n;
    let density = {
        let groups: Vec<&AdvantageSet> = scored.iter().map(|s| &s.group.advantages).collect();
        groups.iter().map(|a| a.density()).sum::<f64>() / n
    };
    let diag = StepDiagnostics {
        stage: spec.stage_name.to_string(),
        step,
        loss: 0.0,
        grad_norm: 0.0,
        advantage_density: density,
        mean_outcome: mean(&|s| s.outcome),
        mean_planner_reward: mean(&|s| s.planner),
        gate_acceptance: mean(&|s| s.accepted),
        duplicate_rate: mean(&|s| s.duplicates),
    };
    Ok(Batch { groups: scored.into_iter().map(|s| s.group).collect(), diag })
}

fn rl_update(
    params: &mut PolicyParams,
    reference: &PolicyParams,
    opt: &mut Optimizer,
    batch: &mut Batch,
    cfg: &PipelineConfig,
    optim_cfg: &OptimConfig,
    terms: RegionMask,
) -> Result<()> {
    let snapshot = PolicySnapshot { old: params.clone(), reference: reference.clone() };
    for _ in 0..cfg.inner_epochs {
        let (loss, grad) = optim::analytic_gradient(params, &snapshot, &batch.groups, optim_cfg, terms)?;
        opt.step(params, &grad, optim_cfg, terms);
        batch.diag.loss = loss;
        batch.diag.grad_norm = grad.norm();
    }
    if !params.is_finite() {
        return Err(Error::Data("parameters became non-finite".into()));
    }
    Ok(())
}

/// True when the acceptance-rate series has stopped improving: a saturated
/// latest rate, or a gain below `tolerance` between the two halves of the
/// trailing window.
pub fn plateaued(rates: &[f64], window: usize, tolerance: f64) -> bool {
    if rates.last().is_some_and(|&r| r >= 1.0) {
        return true;
    }
    if rates.len() < window {
        return false;
    }
    let tail = &rates[rates.len() - window..];
    let half = window / 2;
    let prior = tail[..half].iter().sum::<f64>() / half as f64;
    let recent = tail[half..].iter().sum::<f64>() / half as f64;
    recent - prior < tolerance
}

/// Planner-only GRPO against `R = J` until the acceptance rate plateaus or
/// the budget runs out.
pub fn stage3_warmup(
    params: &mut PolicyParams,
    gate: &GateModel,
    suite: &[ProblemSpec],
    cfg: &PipelineConfig,
    seed: u64,
    attempt: usize,
) -> Result<StageReport> {
    let optim_cfg = OptimConfig { learning_rate: cfg.warmup_learning_rate, ..cfg.optim.clone() };
    let reference = params.clone();
    let mut opt = Optimizer::new(params, &optim_cfg);
    let spec = RlSpec {
        stage_tag: stage::WARMUP,
        stage_name: "warmup",
        attempt,
        mode: cfg.train_mode,
        signal: PlannerSignal::Gate,
        terms: RegionMask::PLAN,
        gate: Some(gate),
    };
    let mut metrics = Vec::new();
    let mut rates = Vec::new();
    let mut status = StageStatus::Completed;
    for step in 0..cfg.t_wu {
        let mut batch = collect_batch(params, suite, cfg, &spec, seed, step)?;
        rates.push(batch.diag.gate_acceptance);
        if plateaued(&rates, cfg.plateau_window, cfg.plateau_tolerance) {
            metrics.push(batch.diag);
            status = StageStatus::Plateaued { step };
            break;
        }
        rl_update(params, &reference, &mut opt, &mut batch, cfg, &optim_cfg, RegionMask::PLAN)?;
        metrics.push(batch.diag);
    }
    let mut report = StageReport::new(StageName::Warmup, attempt, status, params);
    report.metrics = metrics;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditResult {
    pub pass_rate: f64,
    pub density: f64,
    pub min_pass: f64,
    pub min_density: f64,
    pub failed: Option<AuditCriterion>,
}

impl AuditResult {
    pub fn passed(&self) -> bool {
        self.failed.is_none()
    }
}

/// Forward-only check that rollouts from the current policy reach the pass@K
/// and planner-reward-density floors. Parameters are only read.
pub fn stage4_audit(
    params: &PolicyParams,
    gate: Option<&GateModel>,
    suite: &[ProblemSpec],
    cfg: &PipelineConfig,
    seed: u64,
    attempt: usize,
) -> Result<AuditResult> {
    if suite.is_empty() {
        return Err(Error::Input("audit needs a non-empty suite".into()));
    }
    let per_problem = suite
        .par_iter()
        .map(|problem| {
            let mut pass = 0usize;
            let mut dense = 0usize;
            for s in 0..cfg.audit_samples_per_problem {
                let mut rng = rng::stream(&[seed, stage::AUDIT, attempt as u64, problem.id, s as u64]);
                let t = rollout(params, problem, cfg.train_mode, &mut rng)?;
                let outcome = reward::outcome_reward(&t);
                let g = match gate {
                    Some(g) => g.decide(&t.tuple)?,
                    None => true,
                };
                pass += outcome as usize;
                dense += cfg.planner_reward.planner_reward(g, outcome) as usize;
            }
            Ok((pass, dense))
        })
        .collect::<Result<Vec<_>>>()?;
    let total = (suite.len() * cfg.audit_samples_per_problem) as f64;
    let pass_rate = per_problem.iter().map(|p| p.0).sum::<usize>() as f64 / total;
    let density = per_problem.iter().map(|p| p.1).sum::<usize>() as f64 / total;
    let min_pass = cfg.audit_min_pass.unwrap_or(1.0 / suite.len() as f64);
    let failed = if pass_rate < min_pass {
        Some(AuditCriterion::PassAtK)
    } else if density < cfg.audit_min_density {
        Some(AuditCriterion::RewardDensity)
    } else {
        None
    };
    Ok(AuditResult { pass_rate, density, min_pass, min_density: cfg.audit_min_density, failed })
}

/// Joint optimization: `M` tuples per prompt, gated planner rewards, split
/// advantages, and a gate refresh every `refresh_period` steps. Refuses to run
/// on a failed audit.
#[allow(clippy::too_many_arguments)]
pub fn stage5_joint(
    params: &mut PolicyParams,
    gate: &mut Option<GateModel>,
    gate_pool: &mut Vec<GateTrainingExample>,
    suite: &[ProblemSpec],
    cfg: &PipelineConfig,
    audit: Option<&AuditResult>,
    seed: u64,
) -> Result<StageReport> {
    if let Some(a) = audit {
        if !a.passed() {
            return Err(Error::AuditFailed(format!("joint training refused: audit failed on {:?}", a.failed)));
        }
    }
    let reference = params.clone();
    let mut opt = Optimizer::new(params, &cfg.optim);
    let mut metrics = Vec::with_capacity(cfg.t_cppo);
    let mut fresh: Vec<GateTrainingExample> = Vec::new();
    let mut refreshes = 0u64;
    let mut last_gate_metrics = None;
    for step in 0..cfg.t_cppo {
        if cfg.refresh_period > 0 && step > 0 && step % cfg.refresh_period == 0 {
            if let Some(g) = gate.as_ref() {
                refreshes += 1;
                let gcfg = GateTrainConfig {
                    seed: rng::derive_seed(&[seed, stage::REFRESH, refreshes]),
                    ..cfg.gate_cfg(seed, 0)
                };
                let mut candidate_pool = gate_pool.clone();
                let r = reward::refresh_gate(g, &mut candidate_pool, std::mem::take(&mut fresh), &gcfg)?;
                if let Some(m) = r.metrics {
                    last_gate_metrics = Some(m);
                    if m.accepted {
                        *gate = Some(r.model);
                        *gate_pool = candidate_pool;
                    }
                }
            }
        }
        let spec = RlSpec {
            stage_tag: stage::JOINT,
            stage_name: "joint",
            attempt: 0,
            mode: cfg.train_mode,
            signal: PlannerSignal::Kind(cfg.planner_reward),
            terms: RegionMask::ALL,
            gate: gate.as_ref(),
        };
        let mut batch = collect_batch(params, suite, cfg, &spec, seed, step)?;
        if gate.is_some() && cfg.refresh_period > 0 {
            for g in &batch.groups {
                for t in &g.trajectories {
                    let problem = suite
                        .iter()
                        .find(|p| p.id == t.problem_id)
                        .expect("rollout came from the suite");
                    fresh.push(GateTrainingExample {
                        features: TupleFeatures::extract(&t.tuple, problem.taxonomy_size, cfg.k),
                        label: synthenv::judge_tuple(problem, &t.tuple, cfg.k),
                    });
                }
            }
        }
        rl_update(params, &reference, &mut opt, &mut batch, cfg, &cfg.optim, RegionMask::ALL)?;
        metrics.push(batch.diag);
    }
    let mut report = StageReport::new(StageName::Joint, 0, StageStatus::Completed, params);
    report.metrics = metrics;
    report.gate_metrics = last_gate_metrics;
    Ok(report)
}

/// Everything a pipeline run produces.
#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub params: PolicyParams,
    pub gate: Option<GateModel>,
    pub gold: Vec<GoldTuple>,
    pub reports: Vec<StageReport>,
    pub audit_passed: bool,
}

impl PipelineOutcome {
    /// Step diagnostics of every stage, in order.
    pub fn step_metrics(&self) -> Vec<StepDiagnostics> {
        self.reports.iter().flat_map(|r| r.metrics.iter().cloned()).collect()
    }
}

/// Receives the parameters at each stage boundary.
pub type StageObserver<'a> = dyn FnMut(StageName, usize, &PolicyParams) + 'a;

fn train_gate_stage(
    params: &PolicyParams,
    suite: &[ProblemSpec],
    cfg: &PipelineConfig,
    seed: u64,
    attempt: usize,
) -> Result<(Option<GateModel>, Vec<GateTrainingExample>, StageReport)> {
    let pool_seed = rng::derive_seed(&[seed, stage::GATE, attempt as u64]);
    let pool = gate_pool(params, suite, cfg.gate_pool_per_problem, pool_seed)?;
    let trained = reward::train_gate(&pool, params.taxonomy_size(), params.k(), &cfg.gate_cfg(seed, attempt))?;
    let status = if trained.metrics.accepted { StageStatus::Completed } else { StageStatus::GateRejected };
    let mut report = StageReport::new(StageName::Gate, attempt, status, params);
    report.gate_metrics = Some(trained.metrics);
    let gate = trained.metrics.accepted.then_some(trained.model);
    Ok((gate, pool, report))
}

/// Runs the enabled stages in order. A failed audit sends the run back to SFT
/// (pass@K floor) or to gate training (density floor) up to `max_backoff`
/// times; `audit_passed` is false when the retries run out.
pub fn run_pipeline(
    suite: &[ProblemSpec],
    cfg: &PipelineConfig,
    seed: u64,
    observer: Option<&mut StageObserver>,
) -> Result<PipelineOutcome> {
    cfg.validate()?;
    let mut noop = |_: StageName, _: usize, _: &PolicyParams| {};
    let observer: &mut StageObserver = match observer {
        Some(o) => o,
        None => &mut noop,
    };
    let base = PolicyParams::init(suite, cfg.k, seed, cfg.init_std)?;
    let mut params = base.clone();
    let mut reports = Vec::new();
    let mut gold = Vec::new();
    let mut gate: Option<GateModel> = None;
    let mut pool: Vec<GateTrainingExample> = Vec::new();
    let mut audit: Option<AuditResult> = None;

    let mut resume = StageName::Sft;
    let mut attempt = 0usize;
    loop {
        if resume == StageName::Sft {
            if cfg.stages.sft {
                params = base.clone();
                let sft_seed = rng::derive_seed(&[seed, attempt as u64]);
                gold = build_sft_set(&base, suite, cfg.k, cfg.candidates_per_problem, cfg.sft_selection, sft_seed)?;
                let sft_optim = OptimConfig { learning_rate: cfg.sft_learning_rate, ..cfg.optim.clone() };
                let steps = cfg.t_sft * (attempt + 1);
                let history = stage1_sft(&mut params, &gold, steps, &sft_optim)?;
                let mut r = StageReport::new(StageName::Sft, attempt, StageStatus::Completed, &params);
                r.metrics = history;
                reports.push(r);
            } else {
                reports.push(StageReport::new(StageName::Sft, attempt, StageStatus::Skipped, &params));
            }
            observer(StageName::Sft, attempt, &params);
        }

        if cfg.stages.gate {
            let (g, p, r) = train_gate_stage(&params, suite, cfg, seed, attempt)?;
            let rejected = g.is_none();
            reports.push(r);
            if rejected {
                return Err(Error::GateRejected(format!(
                    "gate training attempt {attempt} missed the acceptance floors"
                )));
            }
            gate = g;
            pool = p;
        } else {
            reports.push(StageReport::new(StageName::Gate, attempt, StageStatus::Skipped, &params));
        }

        if cfg.stages.warmup {
            let g = gate
                .as_ref()
                .ok_or_else(|| Error::Config("warm-up needs the gate stage".into()))?;
            reports.push(stage3_warmup(&mut params, g, suite, cfg, seed, attempt)?);
        } else {
            reports.push(StageReport::new(StageName::Warmup, attempt, StageStatus::Skipped, &params));
        }
        observer(StageName::Warmup, attempt, &params);

        if !cfg.stages.audit {
            reports.push(StageReport::new(StageName::Audit, attempt, StageStatus::Skipped, &params));
            break;
        }
        let before = params.digest();
        let result = stage4_audit(&params, gate.as_ref(), suite, cfg, seed, attempt)?;
        debug_assert_eq!(before, params.digest());
        let status = match result.failed {
            None => StageStatus::Completed,
            Some(c) => StageStatus::AuditFailed {
                criterion: c,
                back_to: match c {
                    AuditCriterion::PassAtK => StageName::Sft,
                    AuditCriterion::RewardDensity => StageName::Gate,
                },
            },
        };
        let mut r = StageReport::new(StageName::Audit, attempt, status, &params);
        r.audit = Some(result);
        reports.push(r);
        audit = Some(result);
        match result.failed {
            None => break,
            Some(_) if attempt >= cfg.max_backoff => {
                return Ok(PipelineOutcome { params, gate, gold, reports, audit_passed: false });
            }
            Some(AuditCriterion::PassAtK) => resume = StageName::Sft,
            Some(AuditCriterion::RewardDensity) => resume = StageName::Gate,
        }
        attempt += 1;
    }

    if cfg.stages.joint {
        let r = stage5_joint(&mut params, &mut gate, &mut pool, suite, cfg, audit.as_ref(), seed)?;
        reports.push(r);
    } else {
        reports.push(StageReport::new(StageName::Joint, 0, StageStatus::Skipped, &params));
    }
    observer(StageName::Joint, 0, &params);
    Ok(PipelineOutcome { params, gate, gold, reports, audit_passed: true })
}

/// Named training recipes compared by the experiment runner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// The untrained base policy sampled independently.
    DirectIid,
    /// Joint-stage RL on iid samples with the plain any-pass reward.
    IidPasskReward,
    TupleSftOnly,
    SftWarmup,
    FullCppo,
    NoGate,
    GateOnly,
    /// Full pipeline with `M` tuples per prompt.
    #[serde(rename = "m1")]
    M1,
    #[serde(rename = "m2")]
    M2,
    #[serde(rename = "m4")]
    M4,
    #[serde(rename = "m8")]
    M8,
}

impl Variant {
    pub const ALL: [Variant; 11] = [
        Variant::DirectIid,
        Variant::IidPasskReward,
        Variant::TupleSftOnly,
        Variant::SftWarmup,
        Variant::FullCppo,
        Variant::NoGate,
        Variant::GateOnly,
        Variant::M1,
        Variant::M2,
        Variant::M4,
        Variant::M8,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::DirectIid => "direct-iid",
            Variant::IidPasskReward => "iid-passk-reward",
            Variant::TupleSftOnly => "tuple-sft-only",
            Variant::SftWarmup => "sft+warmup",
            Variant::FullCppo => "full-cppo",
            Variant::NoGate => "no-gate",
            Variant::GateOnly => "gate-only",
            Variant::M1 => "m1",
            Variant::M2 => "m2",
            Variant::M4 => "m4",
            Variant::M8 => "m8",
        }
    }

    pub fn parse(s: &str) -> Option<Variant> {
        Variant::ALL.into_iter().find(|v| v.name() == s)
    }

    /// Sampling mode the variant is natively evaluated in.
    pub fn native_mode(self) -> PlanMode {
        match self {
            Variant::DirectIid | Variant::IidPasskReward => PlanMode::Iid,
            _ => PlanMode::Joint,
        }
    }

    /// The pipeline configuration of this variant derived from `base`.
    pub fn configure(self, base: &PipelineConfig) -> PipelineConfig {
        let mut cfg = base.clone();
        let none = StageSet { sft: false, gate: false, warmup: false, audit: false, joint: false };
        match self {
            Variant::DirectIid => cfg.stages = none,
            Variant::IidPasskReward => {
                cfg.stages = StageSet { joint: true, ..none };
                cfg.train_mode = PlanMode::Iid;
                cfg.planner_reward = PlannerRewardKind::OutcomeOnly;
            }
            Variant::TupleSftOnly => cfg.stages = StageSet { sft: true, ..none },
            Variant::SftWarmup => cfg.stages = StageSet { joint: false, ..StageSet::default() },
            Variant::FullCppo => {}
            Variant::NoGate => cfg.planner_reward = PlannerRewardKind::OutcomeOnly,
            Variant::GateOnly => cfg.planner_reward = PlannerRewardKind::GateOnly,
            Variant::M1 => cfg.optim.group_size = 1,
            Variant::M2 => cfg.optim.group_size = 2,
            Variant::M4 => cfg.optim.group_size = 4,
            Variant::M8 => cfg.optim.group_size = 8,
        }
        cfg
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Trajectories of one sampled batch, for callers that inspect rollouts.
pub fn sample_rollouts(params: &PolicyParams, problem: &ProblemSpec, mode: PlanMode, n: usize, path: &[u64]) -> Result<Vec<Trajectory>> {
    (0..n)
        .map(|j| {
            let mut p = path.to_vec();
            p.push(j as u64);
            rollout(params, problem, mode, &mut rng::stream(&p))
        })
        .collect()
}
