//! Trains the tuple gate on random labelled tuples and prints its held-out
//! metrics against the acceptance floors.

use cppo::reward::{self, balance_pool, random_labelled_tuples, GateTrainConfig};
use cppo::synthenv::{generate_suite, EnvConfig};
use cppo::{rng, Strategy};

fn main() -> anyhow::Result<()> {
    let suite = generate_suite(&EnvConfig { problem_count: 1, ..EnvConfig::default() })?;
    let k = 4;
    let mut r = rng::stream(&[5]);
    let pool = balance_pool(random_labelled_tuples(&suite[0], k, 4000, &mut r), 5);
    let positives = pool.iter().filter(|e| e.label).count();
    println!("balanced pool: {} examples, {positives} positive", pool.len());

    let trained = reward::train_gate(&pool, suite[0].taxonomy_size, k, &GateTrainConfig::default())?;
    let m = trained.metrics;
    println!(
        "auc {:.3}  bal.acc {:.3}  precision {:.3}  recall {:.3}  threshold {:.3}  accepted {}",
        m.auc, m.balanced_accuracy, m.precision, m.recall, m.threshold, m.accepted
    );
    let invalid = suite[0].invalid();
    for t in [vec![Strategy(0), Strategy(1), Strategy(2), Strategy(3)], vec![Strategy(0), Strategy(0), invalid, Strategy(1)]] {
        println!("  {:?} -> score {:.3}", t.iter().map(|s| s.0).collect::<Vec<_>>(), trained.model.score(&t)?);
    }
    Ok(())
}
