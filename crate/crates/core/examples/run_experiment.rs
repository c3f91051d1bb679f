//! Drives the experiment commands from a TOML config, the same way the `cppo`
//! binary does, and prints the rendered report.
//!
//! ```text
//! cargo run --release --example run_experiment -- crates/core/examples/configs/desk.toml
//! ```

use std::path::PathBuf;

use anyhow::Context;
use cppo::experiment::{self, Command, ExperimentConfig};

fn main() -> anyhow::Result<()> {
    let path: PathBuf = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/configs/desk.toml")));
    let cfg = ExperimentConfig::load(&path).with_context(|| format!("loading {}", path.display()))?;

    for cmd in [Command::Train, Command::Eval, Command::Ablate, Command::Bootstrap, Command::Report] {
        let summary = experiment::run_with(cmd, &cfg, true)?;
        println!("{:<10} {} files in {}", cmd.dir_name(), summary.files.len(), summary.dir.display());
        for f in &summary.audit_failures {
            println!("  audit failure: {f}");
        }
    }
    let report = cfg.output_dir.join(Command::Report.dir_name()).join("table.csv");
    if let Ok(text) = std::fs::read_to_string(&report) {
        println!("\n{text}");
    }
    Ok(())
}
