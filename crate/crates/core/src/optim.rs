//! Group-normalized advantages, the split-region clipped surrogate, and its
//! exact gradient for the tabular softmax policy.
//!
//! For one sampled span with log-probability `l` under the current policy and
//! `l_old` under the rollout policy, the surrogate term is
//!
//! ```text
//! L = -min(rho * A, clip(rho, 1 - eps, 1 + eps) * A) + beta * KL(pi || pi_ref),
//! rho = exp(l - l_old)
//! ```
//!
//! Planner spans are whole tuples (advantage `A_plan`, plan-region rows only);
//! solver spans are single answers (advantage `a_i`, solve-region rows only).
//! The batch loss is the sum of all planner and solver terms.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{log_softmax, PolicyParams, Region, RegionMask, RowStep, Trajectory};
use crate::synthenv::Strategy;

/// How `KL(pi || pi_ref)` is evaluated on each sampled context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum KlMode {
    /// Full categorical KL over the row, summed over sampled contexts.
    #[default]
    Exact,
    /// The `r - ln r - 1` estimator at the sampled symbol, `r = pi_ref / pi`.
    Sampled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub norm_epsilon: f64,
    pub clip_ratio: f64,
    pub kl_coeff: f64,
    pub kl_mode: KlMode,
    pub learning_rate: f64,
    pub group_size: usize,
    pub k: usize,
    pub planner_weight: f64,
    pub solver_weight: f64,
    pub optimizer: OptimizerKind,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub weight_decay: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            norm_epsilon: 1e-8,
            clip_ratio: 0.2,
            kl_coeff: 0.01,
            kl_mode: KlMode::Exact,
            learning_rate: 0.05,
            group_size: 8,
            k: 4,
            planner_weight: 1.0,
            solver_weight: 1.0,
            optimizer: OptimizerKind::Adam,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("norm_epsilon", self.norm_epsilon),
            ("clip_ratio", self.clip_ratio),
            ("planner_weight", self.planner_weight),
            ("solver_weight", self.solver_weight),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.kl_coeff.is_nan() || self.kl_coeff < 0.0 || self.learning_rate.is_nan() || self.learning_rate < 0.0 {
            return Err(Error::Config("kl_coeff and learning_rate must be non-negative".into()));
        }
        if self.group_size == 0 || self.k == 0 {
            return Err(Error::Config("group_size and k must be at least 1".into()));
        }
        Ok(())
    }
}

/// `A_i = (r_i - mean(r)) / (std(r) + eps)` with the population std.
/// A constant group gets exactly zero advantages.
pub fn grpo_group_advantages(rewards: &[f64], eps: f64) -> Result<Vec<f64>> {
    if rewards.is_empty() {
        return Err(Error::Input("advantage group is empty".into()));
    }
    let first = rewards[0];
    if rewards.iter().all(|&r| r == first) {
        return Ok(vec![0.0; rewards.len()]);
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let std = (rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
    Ok(rewards.iter().map(|r| (r - mean) / (std + eps)).collect())
}

fn bits(v: &[bool]) -> Vec<f64> {
    v.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
}

/// Within-tuple solver advantages over the `K` branch outcomes.
pub fn solver_advantages(outcomes: &[bool], eps: f64) -> Result<Vec<f64>> {
    grpo_group_advantages(&bits(outcomes), eps)
}

/// Across-tuple planner advantages over `M` planner rewards.
pub fn planner_advantages(rewards: &[bool], eps: f64) -> Result<Vec<f64>> {
    grpo_group_advantages(&bits(rewards), eps)
}

/// Raw-reward advantages without a baseline (the `M = 1` variant).
pub fn reinforce_advantages(rewards: &[bool]) -> Vec<f64> {
    bits(rewards)
}

/// Solver and planner advantages for one prompt group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageSet {
    /// One vector of `K` branch advantages per tuple.
    pub solver: Vec<Vec<f64>>,
    /// One advantage per tuple.
    pub planner: Vec<f64>,
}

impl AdvantageSet {
    /// Fraction of advantages that are nonzero.
    pub fn density(&self) -> f64 {
        let all: Vec<f64> = self.solver.iter().flatten().chain(&self.planner).copied().collect();
        if all.is_empty() {
            return 0.0;
        }
        all.iter().filter(|a| **a != 0.0).count() as f64 / all.len() as f64
    }
}

/// The `M` rollouts of one prompt and their advantages.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutGroup {
    pub trajectories: Vec<Trajectory>,
    pub advantages: AdvantageSet,
}

/// Frozen policies for importance ratios (`old`) and the KL anchor (`reference`).
#[derive(Debug, Clone)]
pub struct PolicySnapshot {
    pub old: PolicyParams,
    pub reference: PolicyParams,
}

impl PolicySnapshot {
    /// Both roles served by copies of `params`.
    pub fn of(params: &PolicyParams) -> Self {
        Self { old: params.clone(), reference: params.clone() }
    }
}

/// Dense gradient with the same split as [`PolicyParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub plan: Vec<f64>,
    pub solve: Vec<f64>,
}

impl Gradient {
    pub fn zeros_like(params: &PolicyParams) -> Self {
        Self { plan: vec![0.0; params.plan_len()], solve: vec![0.0; params.solve_len()] }
    }

    pub fn get(&self, i: usize) -> f64 {
        if i < self.plan.len() {
            self.plan[i]
        } else {
            self.solve[i - self.plan.len()]
        }
    }

    pub fn len(&self) -> usize {
        self.plan.len() + self.solve.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn norm(&self) -> f64 {
        self.plan.iter().chain(&self.solve).map(|g| g * g).sum::<f64>().sqrt()
    }

    fn add_row(&mut self, region: Region, offset: usize, values: &[f64]) {
        let target = match region {
            Region::Plan => &mut self.plan,
            Region::Solve => &mut self.solve,
        };
        for (t, v) in target[offset..offset + values.len()].iter_mut().zip(values) {
            *t += v;
        }
    }
}

/// Gradient contribution to one logit row.
struct RowGrad {
    region: Region,
    offset: usize,
    values: Vec<f64>,
}

/// Loss value and sparse gradient of one prompt group.
struct GroupTerms {
    loss: f64,
    rows: Vec<RowGrad>,
}

fn row(params: &PolicyParams, region: Region, offset: usize) -> &[f64] {
    match region {
        Region::Plan => params.plan_row(offset),
        Region::Solve => params.solve_row(offset),
    }
}

fn clip(x: f64, eps: f64) -> f64 {
    x.clamp(1.0 - eps, 1.0 + eps)
}

/// Adds the clipped surrogate and KL terms of one span.
#[allow(clippy::too_many_arguments)]
fn span_terms(
    params: &PolicyParams,
    snapshot: &PolicySnapshot,
    region: Region,
    path: &[RowStep],
    advantage: f64,
    weight: f64,
    cfg: &OptimConfig,
    want_grad: bool,
    out: &mut GroupTerms,
) {
    let mut lp_new = 0.0;
    let mut lp_old = 0.0;
    let mut new_logp = Vec::with_capacity(path.len());
    let mut ref_logp = Vec::with_capacity(path.len());
    for step in path {
        let ln = log_softmax(row(params, region, step.offset));
        let lo = log_softmax(row(&snapshot.old, region, step.offset));
        lp_new += ln[step.symbol];
        lp_old += lo[step.symbol];
        new_logp.push(ln);
        ref_logp.push(log_softmax(row(&snapshot.reference, region, step.offset)));
    }

    let ratio = (lp_new - lp_old).exp();
    let unclipped = ratio * advantage;
    let clipped = clip(ratio, cfg.clip_ratio) * advantage;
    let (surrogate, active) = if unclipped <= clipped { (unclipped, true) } else { (clipped, false) };
    out.loss -= weight * surrogate;
    // d(-w * rho * A) / d(log pi) = -w * rho * A, spread over the path.
    let pg_coeff = if active { -weight * ratio * advantage } else { 0.0 };

    for ((step, ln), lr) in path.iter().zip(&new_logp).zip(&ref_logp) {
        let p: Vec<f64> = ln.iter().map(|x| x.exp()).collect();
        let mut g = if want_grad { vec![0.0; p.len()] } else { Vec::new() };
        if want_grad && pg_coeff != 0.0 {
            for (b, gb) in g.iter_mut().enumerate() {
                let onehot = if b == step.symbol { 1.0 } else { 0.0 };
                *gb += pg_coeff * (onehot - p[b]);
            }
        }
        if cfg.kl_coeff > 0.0 {
            let scale = weight * cfg.kl_coeff;
            match cfg.kl_mode {
                KlMode::Exact => {
                    let kl: f64 = p.iter().zip(ln).zip(lr).map(|((pa, a), b)| pa * (a - b)).sum();
                    out.loss += scale * kl;
                    if want_grad {
                        for (b, gb) in g.iter_mut().enumerate() {
                            *gb += scale * p[b] * (ln[b] - lr[b] - kl);
                        }
                    }
                }
                KlMode::Sampled => {
                    let log_r = lr[step.symbol] - ln[step.symbol];
                    let r = log_r.exp();
                    out.loss += scale * (r - log_r - 1.0);
                    if want_grad {
                        for (b, gb) in g.iter_mut().enumerate() {
                            let onehot = if b == step.symbol { 1.0 } else { 0.0 };
                            *gb += scale * (1.0 - r) * (onehot - p[b]);
                        }
                    }
                }
            }
        }
        if want_grad {
            out.rows.push(RowGrad { region, offset: step.offset, values: g });
        }
    }
}

fn group_terms(
    params: &PolicyParams,
    snapshot: &PolicySnapshot,
    group: &RolloutGroup,
    cfg: &OptimConfig,
    terms: RegionMask,
    want_grad: bool,
) -> Result<GroupTerms> {
    let mut out = GroupTerms { loss: 0.0, rows: Vec::new() };
    if terms.plan && group.advantages.planner.len() != group.trajectories.len() {
        return Err(Error::Shape("planner advantages do not match tuples".into()));
    }
    if terms.solve && group.advantages.solver.len() != group.trajectories.len() {
        return Err(Error::Shape("solver advantages do not match tuples".into()));
    }
    for (m, traj) in group.trajectories.iter().enumerate() {
        let pi = params.problem_index(traj.problem_id)?;
        if terms.plan {
            let path = params.tuple_path(pi, &traj.tuple, traj.mode)?;
            let a = group.advantages.planner[m];
            span_terms(params, snapshot, Region::Plan, &path, a, cfg.planner_weight, cfg, want_grad, &mut out);
        }
        if terms.solve {
            let adv = &group.advantages.solver[m];
            if adv.len() != traj.tuple.len() || traj.answers.len() != traj.tuple.len() {
                return Err(Error::Shape("solver advantages do not match branches".into()));
            }
            for ((&s, &y), &a) in traj.tuple.iter().zip(&traj.answers).zip(adv) {
                let offset = params.solve_offset(pi, s)?;
                let path = [RowStep { offset, symbol: y.0 as usize }];
                span_terms(params, snapshot, Region::Solve, &path, a, cfg.solver_weight, cfg, want_grad, &mut out);
            }
        }
    }
    Ok(out)
}

fn check_snapshot(params: &PolicyParams, snapshot: &PolicySnapshot) -> Result<()> {
    if !params.same_shape(&snapshot.old) || !params.same_shape(&snapshot.reference) {
        return Err(Error::Shape("snapshot shape differs from current parameters".into()));
    }
    Ok(())
}

/// Split-region surrogate loss over a batch of prompt groups.
pub fn surrogate_loss(
    params: &PolicyParams,
    snapshot: &PolicySnapshot,
    groups: &[RolloutGroup],
    cfg: &OptimConfig,
    terms: RegionMask,
) -> Result<f64> {
    check_snapshot(params, snapshot)?;
    let parts = groups
        .par_iter()
        .map(|g| group_terms(params, snapshot, g, cfg, terms, false).map(|t| t.loss))
        .collect::<Result<Vec<f64>>>()?;
    Ok(parts.into_iter().sum())
}

/// Loss and its exact gradient. Groups are evaluated in parallel and reduced
/// in batch order, so the result does not depend on thread scheduling.
pub fn analytic_gradient(
    params: &PolicyParams,
    snapshot: &PolicySnapshot,
    groups: &[RolloutGroup],
    cfg: &OptimConfig,
    terms: RegionMask,
) -> Result<(f64, Gradient)> {
    check_snapshot(params, snapshot)?;
    let parts = groups
        .par_iter()
        .map(|g| group_terms(params, snapshot, g, cfg, terms, true))
        .collect::<Result<Vec<GroupTerms>>>()?;
    let mut grad = Gradient::zeros_like(params);
    let mut loss = 0.0;
    for part in parts {
        loss += part.loss;
        for r in part.rows {
            grad.add_row(r.region, r.offset, &r.values);
        }
    }
    Ok((loss, grad))
}

/// Negative log-likelihood `-sum log q(S* | x)` of gold tuples and its
/// plan-region gradient.
pub fn tuple_nll_gradient(
    params: &PolicyParams,
    gold: &[(u64, Vec<Strategy>)],
    mode: crate::policy::PlanMode,
) -> Result<(f64, Gradient)> {
    let mut grad = Gradient::zeros_like(params);
    let mut loss = 0.0;
    for (pid, tuple) in gold {
        let pi = params.problem_index(*pid)?;
        for step in params.tuple_path(pi, tuple, mode)? {
            let ln = log_softmax(params.plan_row(step.offset));
            loss -= ln[step.symbol];
            let g: Vec<f64> = ln
                .iter()
                .enumerate()
                .map(|(b, l)| l.exp() - if b == step.symbol { 1.0 } else { 0.0 })
                .collect();
            grad.add_row(Region::Plan, step.offset, &g);
        }
    }
    Ok((loss, grad))
}

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` over a plain vector.
pub fn central_difference<F: FnMut(&[f64]) -> f64>(x: &[f64], mut f: F, h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Central-difference gradient of `loss` over every policy parameter.
pub fn finite_difference_gradient<F: FnMut(&PolicyParams) -> f64>(
    params: &PolicyParams,
    mut loss: F,
    h: f64,
) -> Gradient {
    let mut probe = params.clone();
    let mut grad = Gradient::zeros_like(params);
    for i in 0..params.param_count() {
        let x = params.get(i);
        probe.set(i, x + h);
        let up = loss(&probe);
        probe.set(i, x - h);
        let down = loss(&probe);
        probe.set(i, x);
        let g = (up - down) / (2.0 * h);
        if i < grad.plan.len() {
            grad.plan[i] = g;
        } else {
            let j = i - grad.plan.len();
            grad.solve[j] = g;
        }
    }
    grad
}

/// Plain gradient descent on the allowed regions.
pub fn sgd_step(params: &mut PolicyParams, grad: &Gradient, learning_rate: f64, mask: RegionMask) {
    if mask.plan {
        for (p, g) in params.plan_values_mut().iter_mut().zip(&grad.plan) {
            *p -= learning_rate * g;
        }
    }
    if mask.solve {
        for (p, g) in params.solve_values_mut().iter_mut().zip(&grad.solve) {
            *p -= learning_rate * g;
        }
    }
}

/// AdamW moments for one parameter vector. Regions outside the update mask
/// keep both their values and their moments.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Gradient,
    v: Gradient,
    t_plan: u64,
    t_solve: u64,
}

impl AdamState {
    pub fn new(params: &PolicyParams) -> Self {
        Self {
            m: Gradient::zeros_like(params),
            v: Gradient::zeros_like(params),
            t_plan: 0,
            t_solve: 0,
        }
    }

    pub fn step(&mut self, params: &mut PolicyParams, grad: &Gradient, cfg: &OptimConfig, mask: RegionMask) {
        let (b1, b2, eps, lr, wd) =
            (cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon, cfg.learning_rate, cfg.weight_decay);
        let update = |values: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], t: u64| {
            let c1 = 1.0 - b1.powi(t as i32);
            let c2 = 1.0 - b2.powi(t as i32);
            for (((x, &gi), mi), vi) in values.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let step = (*mi / c1) / ((*vi / c2).sqrt() + eps);
                *x -= lr * (step + wd * *x);
            }
        };
        if mask.plan {
            self.t_plan += 1;
            update(params.plan_values_mut(), &grad.plan, &mut self.m.plan, &mut self.v.plan, self.t_plan);
        }
        if mask.solve {
            self.t_solve += 1;
            update(params.solve_values_mut(), &grad.solve, &mut self.m.solve, &mut self.v.solve, self.t_solve);
        }
    }
}

/// Optimizer selected by [`OptimConfig::optimizer`].
#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd,
    Adam(AdamState),
}

impl Optimizer {
    pub fn new(params: &PolicyParams, cfg: &OptimConfig) -> Self {
        match cfg.optimizer {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::Adam => Optimizer::Adam(AdamState::new(params)),
        }
    }

    pub fn step(&mut self, params: &mut PolicyParams, grad: &Gradient, cfg: &OptimConfig, mask: RegionMask) {
        match self {
            Optimizer::Sgd => sgd_step(params, grad, cfg.learning_rate, mask),
            Optimizer::Adam(state) => state.step(params, grad, cfg, mask),
        }
    }
}

/// One loss/gradient row of the per-step diagnostics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub stage: String,
    pub step: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub advantage_density: f64,
    pub mean_outcome: f64,
    pub mean_planner_reward: f64,
    pub gate_acceptance: f64,
    pub duplicate_rate: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_success_in_four() {
        let a = solver_advantages(&[true, false, false, false], 1e-8).unwrap();
        let expected = [1.7321, -0.5774, -0.5774, -0.5774];
        for (x, e) in a.iter().zip(expected) {
            assert!((x - e).abs() < 1e-4, "{a:?}");
        }
        let sum: f64 = a.iter().sum();
        assert!(sum.abs() < 1e-9);
    }

    #[test]
    fn constant_groups_have_zero_advantage() {
        assert_eq!(solver_advantages(&[false; 4], 1e-8).unwrap(), vec![0.0; 4]);
        assert_eq!(solver_advantages(&[true; 4], 1e-8).unwrap(), vec![0.0; 4]);
        assert_eq!(planner_advantages(&[true], 1e-8).unwrap(), vec![0.0]);
        assert_eq!(reinforce_advantages(&[true]), vec![1.0]);
    }

    #[test]
    fn empty_group_is_an_error() {
        assert!(grpo_group_advantages(&[], 1e-8).is_err());
    }

    #[test]
    fn shift_and_scale_invariance() {
        let r = [0.3, 1.7, -0.2, 0.9, 0.0];
        let base = grpo_group_advantages(&r, 1e-8).unwrap();
        let shifted: Vec<f64> = r.iter().map(|x| x + 5.0).collect();
        for (a, b) in base.iter().zip(grpo_group_advantages(&shifted, 1e-8).unwrap()) {
            assert!((a - b).abs() < 1e-9);
        }
        let scaled: Vec<f64> = r.iter().map(|x| x * 3.0).collect();
        let tight = grpo_group_advantages(&scaled, 1e-12).unwrap();
        for (a, b) in base.iter().zip(tight) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn quadratic_central_difference() {
        let f = |x: &[f64]| 3.0 * x[0] * x[0] - 2.0 * x[0] * x[1] + 0.5 * x[1] * x[1];
        let g = central_difference(&[1.0, -2.0], f, 1e-3);
        assert!((g[0] - 10.0).abs() < 1e-9);
        assert!((g[1] - (-4.0)).abs() < 1e-9);
    }

    #[test]
    fn richardson_error_shrinks_fourfold() {
        let f = |x: &[f64]| x[0].sin() * x[0].exp();
        let exact = 0.7f64.cos() * 0.7f64.exp() + 0.7f64.sin() * 0.7f64.exp();
        let e1 = (central_difference(&[0.7], f, 1e-2)[0] - exact).abs();
        let e2 = (central_difference(&[0.7], f, 5e-3)[0] - exact).abs();
        let ratio = e1 / e2;
        assert!((ratio - 4.0).abs() < 0.1, "ratio {ratio}");
    }
}
