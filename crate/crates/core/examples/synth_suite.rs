//! Generates a small synthetic suite, prints what one problem looks like, and
//! round-trips the suite through its JSONL form.

use cppo::synthenv::{self, generate_suite, judge_method, judge_tuple, EnvConfig};
use cppo::{Answer, Strategy};

fn main() -> anyhow::Result<()> {
    let cfg = EnvConfig { problem_count: 8, ..EnvConfig::default() };
    let suite = generate_suite(&cfg)?;
    let p = &suite[0];
    println!("problem {} with C={} and {} answers", p.id, p.taxonomy_size, p.answer_alphabet);
    for s in 0..p.taxonomy_size as u16 {
        let s = Strategy(s);
        let correct: Vec<u16> = (0..p.answer_alphabet as u16)
            .filter(|&y| synthenv::verify(p, s, Answer(y)).unwrap_or(false))
            .collect();
        println!("  {:<24} viable={:<5} correct answers {:?}", p.strategy_name(s), p.is_viable(s), correct);
    }

    let k = 4;
    let good: Vec<Strategy> = (0..k as u16).map(Strategy).collect();
    let dup = vec![Strategy(0), Strategy(0), Strategy(1), Strategy(2)];
    println!("judge_tuple distinct={} duplicate={}", judge_tuple(p, &good, k), judge_tuple(p, &dup, k));
    println!("judge_method on a repeat: {}", judge_method(p, &[Strategy(3)], Strategy(3)));

    let mut buf = Vec::new();
    synthenv::write_suite(&mut buf, &suite)?;
    let back = synthenv::read_suite(buf.as_slice())?;
    assert_eq!(back, suite);
    println!("{} bytes of JSONL, round trip ok", buf.len());
    Ok(())
}
