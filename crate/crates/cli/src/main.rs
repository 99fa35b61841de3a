use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use contact_equilibrate::config::parse_config;
use contact_equilibrate::run::{execute, CliError, Mode};

/// Adaptive Nitsche contact solver with equilibrated-stress error estimation.
#[derive(Parser, Debug)]
#[command(name = "contact-equilibrate", version)]
struct Cli {
    #[arg(value_enum)]
    mode: Mode,
    /// Flat `section.key = value` configuration; `CE_SECTION_KEY` variables override it.
    #[arg(long)]
    config: PathBuf,
    /// Worker threads for the parallel layers; 1 gives byte-identical reruns.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory, overriding `output.directory`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of refinement steps, overriding `adaptive.max_steps` (and `adaptive.uniform_steps`).
    #[arg(long)]
    budget: Option<usize>,
}

fn main_inner(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Threads(e.to_string()))?;
    }
    let text = std::fs::read_to_string(&cli.config).map_err(|source| CliError::Io { path: cli.config.clone(), source })?;
    let mut cfg = parse_config(&text, |k| std::env::var(k).ok())?;
    if let Some(out) = cli.out {
        cfg.output.directory = out;
    }
    if let Some(k) = cli.budget {
        cfg.adaptive.max_steps = k;
        cfg.uniform_steps = k;
    }
    let summary = execute(cli.mode, &cfg)?;
    for (k, v) in summary.lines {
        println!("{k} = {v}");
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match main_inner(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: kind={} message=\"{}\"", e.kind(), msg.replace('"', "'"));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
