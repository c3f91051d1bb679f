use std::collections::HashMap;

use cppo::policy::{log_softmax, sample_tuple, softmax, tuple_logprob};
use cppo::synthenv::{generate_suite, EnvConfig, ProblemSpec};
use cppo::{rng, PlanMode, PolicyParams, Strategy};
use proptest::prelude::*;
use rand_distr::{Distribution, StandardNormal};

fn suite(c: usize) -> Vec<ProblemSpec> {
    generate_suite(&EnvConfig {
        problem_count: 1,
        taxonomy_size: c,
        answer_alphabet: 2,
        multimodality: 1,
        ..EnvConfig::default()
    })
    .unwrap()
}

fn tally(params: &PolicyParams, problem: &ProblemSpec, mode: PlanMode, n: usize, tag: u64) -> HashMap<Vec<Strategy>, usize> {
    let mut counts = HashMap::new();
    let mut r = rng::stream(&[tag, mode as u64]);
    for _ in 0..n {
        *counts.entry(sample_tuple(params, problem, mode, &mut r).unwrap()).or_insert(0) += 1;
    }
    counts
}

#[test]
fn uniform_logits_give_uniform_ordered_pairs() {
    let s = suite(4);
    let params = PolicyParams::zeros(&s, 2).unwrap();
    let n = 100_000;
    let p = 1.0 / 25.0;
    let sigma = (p * (1.0 - p) / n as f64).sqrt();
    for mode in [PlanMode::Joint, PlanMode::Iid] {
        let counts = tally(&params, &s[0], mode, n, 11);
        assert_eq!(counts.len(), 25);
        for (t, c) in &counts {
            let f = *c as f64 / n as f64;
            assert!((f - p).abs() <= 3.0 * sigma, "{mode:?} {t:?}: {f}");
        }
    }
}

#[test]
fn iid_entries_are_exchangeable() {
    let s = suite(4);
    let params = PolicyParams::zeros(&s, 2).unwrap();
    let n = 100_000;
    let counts = tally(&params, &s[0], PlanMode::Iid, n, 2);
    let mut first = [0usize; 5];
    let mut second = [0usize; 5];
    for (t, c) in &counts {
        first[t[0].0 as usize] += c;
        second[t[1].0 as usize] += c;
    }
    for b in 0..5 {
        let (x, y) = (first[b] as f64 / n as f64, second[b] as f64 / n as f64);
        // Difference of two marginals, each with variance p(1-p)/n.
        let sigma = (2.0 * 0.2 * 0.8 / n as f64).sqrt();
        assert!((x - y).abs() <= 3.0 * sigma, "symbol {b}: {x} vs {y}");
    }
}

#[test]
fn history_free_rows_make_joint_equal_iid() {
    let s = suite(4);
    let mut params = PolicyParams::zeros(&s, 2).unwrap();
    let mut r = rng::stream(&[3]);
    let logits: Vec<f64> = (0..params.symbols()).map(|_| StandardNormal.sample(&mut r)).collect();
    for row in 0..params.layout().rows() {
        let (pos, mask) = params.layout().key(row);
        let off = params.plan_offset(0, pos, mask).unwrap();
        params.plan_values_mut()[off..off + logits.len()].copy_from_slice(&logits);
    }
    let n = 100_000;
    let joint = tally(&params, &s[0], PlanMode::Joint, n, 4);
    let iid = tally(&params, &s[0], PlanMode::Iid, n, 5);
    let kl: f64 = joint
        .iter()
        .map(|(t, &c)| {
            let p = c as f64 / n as f64;
            let q = iid.get(t).copied().unwrap_or(0).max(1) as f64 / n as f64;
            p * (p / q).ln()
        })
        .sum();
    assert!(kl < 1e-3, "empirical KL {kl}");
}

#[test]
fn empirical_frequencies_match_logprob() {
    let s = suite(2);
    let params = PolicyParams::init(&s, 2, 9, 1.0).unwrap();
    let n = 1_000_000;
    for mode in [PlanMode::Joint, PlanMode::Iid] {
        let counts = tally(&params, &s[0], mode, n, 6);
        for a in 0..3u16 {
            for b in 0..3u16 {
                let t = vec![Strategy(a), Strategy(b)];
                let p = tuple_logprob(&params, s[0].id, &t, mode).unwrap().exp();
                let f = counts.get(&t).copied().unwrap_or(0) as f64 / n as f64;
                let sigma = (p * (1.0 - p) / n as f64).sqrt();
                assert!((f - p).abs() <= 4.0 * sigma, "{mode:?} {t:?}: {f} vs {p}");
            }
        }
    }
}

proptest! {
    #[test]
    fn softmax_rows_normalize(row in prop::collection::vec(-30.0f64..30.0, 1..24)) {
        let p = softmax(&row);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        let lse: f64 = log_softmax(&row).iter().map(|l| l.exp()).sum();
        prop_assert!((lse - 1.0).abs() <= 1e-12);
    }
}
