use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dampc::Controller;
use dampc_cli::config::{env_seed, resolve, Overrides, SEED_ENV};
use dampc_cli::{execute, CliError, Command, EXIT_ERROR};

#[derive(Parser)]
#[command(name = "dampc", version, about = "Distributed adaptive MPC for V-formation flocking")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// One seeded run; exit 0 if the goal is reached, 2 otherwise.
    Run(Common),
    /// A batch of seeded runs with aggregate statistics.
    Smc(Common),
    /// The same batch under both controllers, side by side.
    Compare(Common),
}

#[derive(Args)]
struct Common {
    /// JSON configuration file; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed (overrides DAMPC_SEED and the config file).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    controller: Option<ControllerArg>,
    /// Number of runs (overrides the epsilon/delta sample size).
    #[arg(long)]
    runs: Option<u64>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ControllerArg {
    Dampc,
    Ampc,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let (cmd, common) = match cli.command {
        Cmd::Run(c) => (Command::Run, c),
        Cmd::Smc(c) => (Command::Smc, c),
        Cmd::Compare(c) => (Command::Compare, c),
    };
    match run(cmd, common) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("dampc: {e}");
            ExitCode::from(EXIT_ERROR as u8)
        }
    }
}

fn run(cmd: Command, common: Common) -> Result<i32, CliError> {
    let overrides = Overrides {
        seed: common.seed,
        out: common.out,
        controller: common.controller.map(|c| match c {
            ControllerArg::Dampc => Controller::Dampc,
            ControllerArg::Ampc => Controller::Ampc,
        }),
        runs: common.runs,
    };
    let env = env_seed(std::env::var(SEED_ENV).ok())?;
    let cfg = resolve(common.config.as_deref(), env, &overrides)?;
    execute(cmd, &cfg)
}
