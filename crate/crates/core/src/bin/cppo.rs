use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use cppo::experiment::{self, Command};

#[derive(Parser)]
#[command(name = "cppo", version, about = "Run coordinated pass@K experiments from a TOML config")]
struct Cli {
    #[command(subcommand)]
    action: Action,
}

#[derive(Subcommand)]
enum Action {
    /// Run one experiment command.
    Run {
        #[arg(value_enum)]
        command: Cmd,
        #[arg(long)]
        config: PathBuf,
        /// Replace an existing output directory for this command.
        #[arg(long)]
        overwrite: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Cmd {
    Train,
    Eval,
    Ablate,
    Sweep,
    Bootstrap,
    Decon,
    Report,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Train => Command::Train,
            Cmd::Eval => Command::Eval,
            Cmd::Ablate => Command::Ablate,
            Cmd::Sweep => Command::Sweep,
            Cmd::Bootstrap => Command::Bootstrap,
            Cmd::Decon => Command::Decon,
            Cmd::Report => Command::Report,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Action::Run { command, config, overwrite } = cli.action;
    match experiment::run(command.into(), &config, overwrite) {
        Ok(summary) => {
            println!("wrote {} files under {}", summary.files.len(), summary.dir.display());
            for f in &summary.audit_failures {
                eprintln!("audit failed: {f}");
            }
            ExitCode::from(summary.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(experiment::exit_code(&e) as u8)
        }
    }
}
