//! Runs the full staged pipeline on one seed and prints every stage report
//! along with the parameter digests seen at each boundary.

use cppo::pipeline::{run_pipeline, PipelineConfig, StageName};
use cppo::synthenv::{generate_suite, EnvConfig};
use cppo::PolicyParams;

fn main() -> anyhow::Result<()> {
    let seed: u64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(1);
    let suite = generate_suite(&EnvConfig { problem_count: 60, ..EnvConfig::default() })?;
    let cfg = PipelineConfig { t_cppo: 150, ..PipelineConfig::default() };

    let mut boundaries = Vec::new();
    let mut observer = |stage: StageName, attempt: usize, p: &PolicyParams| {
        boundaries.push((stage, attempt, p.plan_digest(), p.solve_digest()));
    };
    let out = run_pipeline(&suite, &cfg, seed, Some(&mut observer))?;

    for r in &out.reports {
        let last = r.metrics.last();
        print!("{:?}#{} {:?}", r.stage, r.attempt, r.status);
        if let Some(m) = last {
            print!("  steps {}  planner reward {:.3}", r.metrics.len(), m.mean_planner_reward);
        }
        if let Some(g) = r.gate_metrics {
            print!("  gate auc {:.3}", g.auc);
        }
        if let Some(a) = &r.audit {
            print!("  pass {:.3} density {:.3}", a.pass_rate, a.density);
        }
        println!();
    }
    for (stage, attempt, plan, solve) in &boundaries {
        println!("after {stage:?}#{attempt}: plan {} solve {}", &plan[..12], &solve[..12]);
    }
    println!("gold tuples {}, audit passed {}", out.gold.len(), out.audit_passed);
    Ok(())
}
