//! Scores a few hand-picked tuples with the three diversity measures and
//! shows BLEU-4 between two strategy descriptions.

use cppo::eval::{self, bleu4};
use cppo::synthenv::{generate_suite, EnvConfig};
use cppo::Strategy;

fn main() -> anyhow::Result<()> {
    let suite = generate_suite(&EnvConfig { problem_count: 1, ..EnvConfig::default() })?;
    let p = &suite[0];
    let tuples = [
        vec![Strategy(0), Strategy(0), Strategy(0), Strategy(0)],
        vec![Strategy(0), Strategy(1), Strategy(0), Strategy(1)],
        vec![Strategy(0), Strategy(3), Strategy(5), Strategy(7)],
    ];
    println!("{:<14} {:>7} {:>7} {:>7}", "tuple", "d_surf", "d_sem", "d_alg");
    for t in &tuples {
        let d = eval::tuple_diversity(p, t)?;
        let ids: Vec<u16> = t.iter().map(|s| s.0).collect();
        println!("{:<14} {:>7.3} {:>7.3} {:>7.3}", format!("{ids:?}"), d.d_surf, d.d_sem, d.d_alg);
    }
    let (a, b) = (p.strategy_text(Strategy(0)), p.strategy_text(Strategy(1)));
    println!("bleu4({}, {}) = {:.3}", a.join(" "), b.join(" "), bleu4(&a, &b));
    Ok(())
}
