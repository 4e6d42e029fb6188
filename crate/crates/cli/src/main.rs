use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, ValueEnum};

use proxcert_cli::{parse_config, run_command, Command, RunOptions};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Cmd {
    Certify,
    Solve,
    Sweep,
}

/// Regularity certification and monitored solver runs.
#[derive(Debug, Parser)]
#[command(name = "proxcert", version)]
struct Cli {
    command: Cmd,
    /// Configuration file (`key = value` lines).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for sampling and sweeps.
    #[arg(long, env = "PROXCERT_WORKERS", default_value_t = 1)]
    workers: usize,
    /// Replaces `seed` from the config.
    #[arg(long)]
    seed_override: Option<u64>,
}

fn run(cli: &Cli) -> Result<i32> {
    let text = std::fs::read_to_string(&cli.config).with_context(|| format!("reading {}", cli.config.display()))?;
    let mut cfg = parse_config(&text).with_context(|| format!("config {}", cli.config.display()))?;
    let wanted = match cli.command {
        Cmd::Certify => Command::Certify,
        Cmd::Solve => Command::Solve,
        Cmd::Sweep => Command::Sweep,
    };
    if cfg.command != wanted {
        bail!("config command '{}' does not match subcommand '{}'", cfg.command.as_str(), wanted.as_str());
    }
    if let Some(s) = cli.seed_override {
        cfg.seed = s;
    }
    let opts = RunOptions { out_dir: cli.out.clone().unwrap_or_else(|| cfg.output.clone()), workers: cli.workers.max(1) };
    let outcome = run_command(&cfg, &opts)?;
    println!("{}", outcome.summary);
    Ok(outcome.status.exit_code())
}

fn main() -> ExitCode {
    // usage errors are operational errors (1); 2 is reserved for certified failures
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
