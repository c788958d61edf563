use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;
use kgforge_cli::Cli;

/// Caps the global rayon pool when `KGFORGE_THREADS` is set.
fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("KGFORGE_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .with_context(|| format!("KGFORGE_THREADS must be a positive integer, got {raw:?}"))?;
    anyhow::ensure!(n > 0, "KGFORGE_THREADS must be at least 1");
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match configure_threads().and_then(|()| kgforge_cli::run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
