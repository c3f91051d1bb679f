//! Trains the full pipeline once and sweeps the solve budget, reporting
//! pass@K, maj@K and token-normalized pass for joint and iid inference.

use cppo::eval::{self, EvalConfig};
use cppo::pipeline::{run_pipeline, PipelineConfig};
use cppo::synthenv::{generate_suite, EnvConfig};
use cppo::PlanMode;

fn main() -> anyhow::Result<()> {
    let suite = generate_suite(&EnvConfig::default())?;
    let out = run_pipeline(&suite, &PipelineConfig::default(), 1, None)?;
    let ks = vec![1, 2, 4, 8, 16];

    println!("{:<6} {:>4} {:>8} {:>8} {:>10} {:>6}", "mode", "K", "pass", "maj", "pass/10kt", "dup");
    for mode in [PlanMode::Joint, PlanMode::Iid] {
        let cfg = EvalConfig { k_list: ks.clone(), mode, samples_per_problem: 2, seed: 11 };
        let rows = eval::evaluate("full-cppo", &out.params, &suite, &cfg, 1)?;
        for &k in &ks {
            let Some(s) = eval::summarize(&rows, k) else { continue };
            let at_k: Vec<_> = rows.iter().filter(|r| r.k_solve == k).cloned().collect();
            let tnp = eval::token_normalized_pass_rows(&at_k)?;
            let maj = s.maj.map_or("-".to_string(), |m| format!("{m:.3}"));
            println!("{:<6} {:>4} {:>8.3} {:>8} {:>10.2} {:>6.3}", format!("{mode:?}"), k, s.pass, maj, tnp, s.duplicate_rate);
        }
    }
    Ok(())
}
