//! Trains several variants on the multimodal suite and prints pass@4 under
//! joint and iid inference together with the duplicate-tuple rate.
//!
//! ```text
//! cargo run --release --example ablation_table -- [seeds] [variants...]
//! ```

use std::time::Instant;

use cppo::eval::{self, EvalConfig};
use cppo::pipeline::{run_pipeline, PipelineConfig, Variant};
use cppo::synthenv::{generate_suite, EnvConfig};
use cppo::PlanMode;

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let seeds: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(3);
    let mut variants: Vec<Variant> = args.filter_map(|a| Variant::parse(&a)).collect();
    if variants.is_empty() {
        variants = vec![Variant::DirectIid, Variant::FullCppo, Variant::NoGate, Variant::M1, Variant::M8];
    }
    let suite = generate_suite(&EnvConfig::default())?;
    let base = PipelineConfig::default();

    println!("{:<18} {:>10} {:>10} {:>10} {:>8}", "variant", "joint@4", "iid@4", "dup", "secs");
    for v in variants {
        let cfg = v.configure(&base);
        let (mut joint, mut iid, mut dup) = (0.0, 0.0, 0.0);
        let start = Instant::now();
        for seed in 1..=seeds {
            let out = run_pipeline(&suite, &cfg, seed, None)?;
            for mode in [PlanMode::Joint, PlanMode::Iid] {
                let ecfg = EvalConfig { k_list: vec![4], mode, samples_per_problem: 4, seed: 99 };
                let rows = eval::evaluate(v.name(), &out.params, &suite, &ecfg, seed)?;
                let s = eval::summarize(&rows, 4).expect("k=4 rows");
                match mode {
                    PlanMode::Joint => {
                        joint += s.pass;
                        dup += s.duplicate_rate;
                    }
                    PlanMode::Iid => iid += s.pass,
                }
            }
        }
        let n = seeds as f64;
        println!(
            "{:<18} {:>10.3} {:>10.3} {:>10.3} {:>8.1}",
            v.name(),
            joint / n,
            iid / n,
            dup / n,
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
