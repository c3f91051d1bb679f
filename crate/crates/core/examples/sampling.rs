//! Draws tuples from a random planner in joint and iid mode and compares how
//! often each produces a repeated strategy.
//!
//! ```text
//! cargo run --release --example sampling -- [draws]
//! ```

use cppo::eval;
use cppo::policy::{sample_tuple, tuple_logprob};
use cppo::synthenv::{generate_suite, EnvConfig};
use cppo::{rng, PlanMode, PolicyParams};

fn main() -> anyhow::Result<()> {
    let draws: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(20_000);
    let suite = generate_suite(&EnvConfig { problem_count: 1, ..EnvConfig::default() })?;
    let params = PolicyParams::init(&suite, 4, 7, 1.0)?;

    for mode in [PlanMode::Joint, PlanMode::Iid] {
        let mut r = rng::stream(&[7, mode as u64]);
        let tuples = (0..draws)
            .map(|_| sample_tuple(&params, &suite[0], mode, &mut r))
            .collect::<Result<Vec<_>, _>>()?;
        let lp = tuple_logprob(&params, suite[0].id, &tuples[0], mode)?;
        println!(
            "{mode:?}: duplicate rate {:.3}, first tuple {:?} has log-prob {lp:.3}",
            eval::duplicate_rate(&tuples),
            tuples[0].iter().map(|s| s.0).collect::<Vec<_>>()
        );
    }
    Ok(())
}
