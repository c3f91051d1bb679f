use cppo::optim::{self, AdvantageSet, OptimConfig, PolicySnapshot, RolloutGroup};
use cppo::policy::{rollout, RegionMask};
use cppo::synthenv::{generate_suite, EnvConfig, ProblemSpec};
use cppo::{rng, Answer, PlanMode, PolicyParams, Strategy, Trajectory};
use proptest::prelude::*;
use rand_distr::{Distribution, StandardNormal};

fn tiny_suite(seed: u64) -> Vec<ProblemSpec> {
    generate_suite(&EnvConfig {
        problem_count: 2,
        taxonomy_size: 3,
        answer_alphabet: 3,
        multimodality: 2,
        seed,
        ..EnvConfig::default()
    })
    .unwrap()
}

fn jitter(params: &PolicyParams, std: f64, seed: u64) -> PolicyParams {
    let mut r = rng::stream(&[seed, 0x717]);
    let mut p = params.clone();
    for i in 0..p.param_count() {
        let z: f64 = StandardNormal.sample(&mut r);
        p.set(i, p.get(i) + std * z);
    }
    p
}

fn random_groups(snapshot: &PolicySnapshot, suite: &[ProblemSpec], mode: PlanMode, seed: u64) -> Vec<RolloutGroup> {
    let mut r = rng::stream(&[seed, 0x6e0]);
    suite
        .iter()
        .map(|p| {
            let trajectories: Vec<Trajectory> = (0..2).map(|_| rollout(&snapshot.old, p, mode, &mut r).unwrap()).collect();
            let solver = (0..2).map(|_| (0..2).map(|_| StandardNormal.sample(&mut r)).collect()).collect();
            let planner = (0..2).map(|_| StandardNormal.sample(&mut r)).collect();
            RolloutGroup { trajectories, advantages: AdvantageSet { solver, planner } }
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn analytic_gradient_matches_central_differences(seed in 0u64..10_000, joint in any::<bool>()) {
        let suite = tiny_suite(seed);
        let params = PolicyParams::init(&suite, 2, seed, 0.5).unwrap();
        let snapshot = PolicySnapshot { old: jitter(&params, 0.1, seed), reference: jitter(&params, 0.3, seed + 1) };
        let mode = if joint { PlanMode::Joint } else { PlanMode::Iid };
        let groups = random_groups(&snapshot, &suite, mode, seed);
        let cfg = OptimConfig { k: 2, group_size: 2, kl_coeff: 0.05, ..OptimConfig::default() };
        let (loss, g) = optim::analytic_gradient(&params, &snapshot, &groups, &cfg, RegionMask::ALL).unwrap();
        let direct = optim::surrogate_loss(&params, &snapshot, &groups, &cfg, RegionMask::ALL).unwrap();
        prop_assert!((loss - direct).abs() <= 1e-12);
        let fd = optim::finite_difference_gradient(
            &params,
            |p| optim::surrogate_loss(p, &snapshot, &groups, &cfg, RegionMask::ALL).unwrap(),
            1e-6,
        );
        for i in 0..g.len() {
            let (a, f) = (g.get(i), fd.get(i));
            prop_assert!((a - f).abs() / a.abs().max(f.abs()).max(1e-6) < 1e-5, "param {i}: {a} vs {f}");
        }
    }

    #[test]
    fn solver_terms_ignore_plan_parameters(seed in 0u64..10_000) {
        let suite = tiny_suite(seed);
        let params = PolicyParams::init(&suite, 2, seed, 0.5).unwrap();
        let snapshot = PolicySnapshot { old: jitter(&params, 0.1, seed), reference: jitter(&params, 0.3, seed + 1) };
        let groups = random_groups(&snapshot, &suite, PlanMode::Joint, seed);
        let cfg = OptimConfig { k: 2, group_size: 2, ..OptimConfig::default() };
        let (_, g) = optim::analytic_gradient(&params, &snapshot, &groups, &cfg, RegionMask::SOLVE).unwrap();
        prop_assert!(g.plan.iter().all(|&x| x == 0.0));
        let base = optim::surrogate_loss(&params, &snapshot, &groups, &cfg, RegionMask::SOLVE).unwrap();
        let mut moved = params.clone();
        for v in moved.plan_values_mut() {
            *v += 0.37;
        }
        moved.plan_values_mut()[0] -= 1.3;
        let after = optim::surrogate_loss(&moved, &snapshot, &groups, &cfg, RegionMask::SOLVE).unwrap();
        prop_assert!((after - base).abs() <= 1e-10);
    }

    #[test]
    fn kl_is_non_negative_and_zero_at_reference(seed in 0u64..10_000) {
        let suite = tiny_suite(seed);
        let params = PolicyParams::init(&suite, 2, seed, 0.8).unwrap();
        let old = params.clone();
        let mut groups = random_groups(&PolicySnapshot::of(&params), &suite, PlanMode::Joint, seed);
        for g in &mut groups {
            g.advantages.planner.iter_mut().for_each(|a| *a = 0.0);
            g.advantages.solver.iter_mut().flatten().for_each(|a| *a = 0.0);
        }
        let cfg = OptimConfig { k: 2, group_size: 2, kl_coeff: 1.0, ..OptimConfig::default() };
        let at_ref = optim::surrogate_loss(&params, &PolicySnapshot::of(&params), &groups, &cfg, RegionMask::ALL).unwrap();
        prop_assert!(at_ref.abs() <= 1e-10);
        let away = PolicySnapshot { old, reference: jitter(&params, 0.5, seed) };
        let kl = optim::surrogate_loss(&params, &away, &groups, &cfg, RegionMask::ALL).unwrap();
        prop_assert!(kl >= 0.0);
    }
}

#[test]
fn single_branch_reinforce_matches_hand_jacobian() {
    let suite = generate_suite(&EnvConfig {
        problem_count: 1,
        taxonomy_size: 2,
        answer_alphabet: 2,
        multimodality: 1,
        ..EnvConfig::default()
    })
    .unwrap();
    let mut params = PolicyParams::zeros(&suite, 1).unwrap();
    let off = params.solve_offset(0, Strategy(0)).unwrap();
    params.solve_values_mut()[off] = 0.3;
    params.solve_values_mut()[off + 1] = -0.2;
    let traj = Trajectory {
        problem_id: suite[0].id,
        mode: PlanMode::Joint,
        tuple: vec![Strategy(0)],
        answers: vec![Answer(0)],
        outcomes: vec![true],
        planner_tokens: 1,
        solver_tokens: vec![1],
    };
    let adv = 1.5;
    let groups = vec![RolloutGroup {
        trajectories: vec![traj],
        advantages: AdvantageSet { solver: vec![vec![adv]], planner: vec![0.0] },
    }];
    let cfg = OptimConfig { k: 1, group_size: 1, kl_coeff: 0.0, ..OptimConfig::default() };
    let (loss, g) = optim::analytic_gradient(&params, &PolicySnapshot::of(&params), &groups, &cfg, RegionMask::SOLVE).unwrap();
    // At the behaviour policy the loss is -A and the gradient is -A (e_y - sigmoid).
    let p0 = 1.0 / (1.0 + (-0.5f64).exp());
    assert!((loss + adv).abs() < 1e-12);
    assert!((g.solve[off] - (-adv * (1.0 - p0))).abs() < 1e-12);
    assert!((g.solve[off + 1] - (adv * (1.0 - p0))).abs() < 1e-12);
    assert!((g.solve[off] + 0.566_311).abs() < 1e-6);
    let others: f64 = g.solve.iter().enumerate().filter(|(i, _)| *i != off && *i != off + 1).map(|(_, v)| v.abs()).sum();
    assert_eq!(others, 0.0);
}

#[test]
fn clipped_ratio_stops_the_gradient() {
    let suite = tiny_suite(1);
    let params = PolicyParams::init(&suite, 2, 1, 0.5).unwrap();
    let mut old = params.clone();
    for v in old.solve_values_mut() {
        *v = 0.0;
    }
    let groups = random_groups(&PolicySnapshot::of(&old), &suite, PlanMode::Joint, 1);
    let mut boosted = params.clone();
    // Push every chosen answer far above its old probability so each ratio exceeds 1 + clip.
    for g in &groups {
        for t in &g.trajectories {
            for (&s, &y) in t.tuple.iter().zip(&t.answers) {
                let pi = boosted.problem_index(t.problem_id).unwrap();
                let o = boosted.solve_offset(pi, s).unwrap();
                boosted.solve_values_mut()[o + y.0 as usize] = 8.0;
            }
        }
    }
    let mut positive = groups.clone();
    for g in &mut positive {
        g.advantages.solver.iter_mut().flatten().for_each(|a| *a = 1.0);
    }
    let snapshot = PolicySnapshot { old, reference: boosted.clone() };
    let cfg = OptimConfig { k: 2, group_size: 2, kl_coeff: 0.0, ..OptimConfig::default() };
    let (_, g) = optim::analytic_gradient(&boosted, &snapshot, &positive, &cfg, RegionMask::SOLVE).unwrap();
    assert!(g.solve.iter().all(|&x| x == 0.0));
}
