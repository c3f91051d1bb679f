//! Simulates two methods over 200 problems and three seeds, then runs the
//! hierarchical bootstrap and the per-seed t interval on their difference.

use cppo::rng;
use cppo::stats::{hierarchical_bootstrap, seed_ci, simulate_method, DEFAULT_ALPHA};

fn main() -> anyhow::Result<()> {
    let gap: f64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(0.15);
    let mut r = rng::stream(&[12]);
    let base = simulate_method("base", 200, 3, (1.0, 1.0), 0.0, &mut r)?;
    let better = simulate_method("better", 200, 3, (1.0, 1.0), gap, &mut r)?;

    let out = hierarchical_bootstrap(&better, &base, 1000, 12)?;
    println!(
        "means {:.3} vs {:.3}, p = {:.4} (reported {:.4}), significant at {DEFAULT_ALPHA}: {}",
        better.mean(),
        base.mean(),
        out.p_value,
        out.reported_p(),
        out.significant(DEFAULT_ALPHA)
    );

    let deltas: Vec<f64> = better.seed_means().iter().zip(base.seed_means()).map(|(a, b)| a - b).collect();
    let ci = seed_ci(&deltas)?;
    println!("per-seed deltas {deltas:.3?}: mean {:.3} in [{:.3}, {:.3}]", ci.mean, ci.lo, ci.hi);
    Ok(())
}
