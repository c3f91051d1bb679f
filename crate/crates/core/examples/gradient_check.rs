//! Compares the analytic gradient of the clipped surrogate with central
//! differences on a tiny problem.

use cppo::optim::{self, AdvantageSet, OptimConfig, PolicySnapshot, RolloutGroup};
use cppo::policy::{rollout, RegionMask};
use cppo::synthenv::{generate_suite, EnvConfig};
use cppo::{rng, PlanMode, PolicyParams};

fn main() -> anyhow::Result<()> {
    let suite = generate_suite(&EnvConfig {
        problem_count: 2,
        taxonomy_size: 3,
        answer_alphabet: 3,
        multimodality: 2,
        ..EnvConfig::default()
    })?;
    let params = PolicyParams::init(&suite, 2, 3, 0.5)?;
    let snapshot = PolicySnapshot::of(&PolicyParams::init(&suite, 2, 4, 0.5)?);
    let cfg = OptimConfig { k: 2, group_size: 2, kl_coeff: 0.05, ..OptimConfig::default() };

    let mut r = rng::stream(&[3]);
    let mut groups = Vec::new();
    for p in &suite {
        let trajectories = (0..2)
            .map(|_| rollout(&snapshot.old, p, PlanMode::Joint, &mut r))
            .collect::<Result<Vec<_>, _>>()?;
        let planner_rewards: Vec<bool> = trajectories.iter().map(|t| t.any_pass()).collect();
        let planner = optim::planner_advantages(&planner_rewards, 1e-8)?;
        let solver = trajectories
            .iter()
            .map(|t| optim::solver_advantages(&t.outcomes, 1e-8))
            .collect::<Result<Vec<_>, _>>()?;
        groups.push(RolloutGroup { trajectories, advantages: AdvantageSet { solver, planner } });
    }

    let (loss, g) = optim::analytic_gradient(&params, &snapshot, &groups, &cfg, RegionMask::ALL)?;
    let fd = optim::finite_difference_gradient(
        &params,
        |p| optim::surrogate_loss(p, &snapshot, &groups, &cfg, RegionMask::ALL).unwrap_or(f64::NAN),
        1e-6,
    );
    let worst = (0..g.len())
        .map(|i| (g.get(i) - fd.get(i)).abs() / g.get(i).abs().max(fd.get(i).abs()).max(1e-6))
        .fold(0.0, f64::max);
    println!("loss {loss:.6}, |grad| {:.6}, {} params, worst relative error {worst:.2e}", g.norm(), g.len());
    Ok(())
}
