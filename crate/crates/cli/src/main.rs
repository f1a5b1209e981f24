mod commands;
mod config;
mod error;
mod pipeline;
mod report;

use clap::Parser;

use crate::commands::Cli;
use crate::config::RunConfig;
use crate::error::CliError;

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    commands::run(cli.command, cfg)
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("pmr: {e}");
        std::process::exit(e.exit_code());
    }
}
