mod config;
mod error;
mod experiments;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use config::BatchConfig;
use error::{CliError, Result};

const EXIT_FAIL: u8 = 2;
const EXIT_CONFIG: u8 = 3;

#[derive(Parser)]
#[command(name = "geo", version, about = "Run gas-giant geometry experiments from a JSON config")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every experiment in a batch config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Worker threads; defaults to the number of cores.
        #[arg(long)]
        jobs: Option<usize>,
    },
}

fn seed_override() -> Result<Option<u64>> {
    match std::env::var("GEO_SEED") {
        Ok(s) => s.trim().parse().map(Some).map_err(|_| CliError::Config(format!("GEO_SEED = {s:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

fn run(config: &Path, jobs: Option<usize>) -> std::result::Result<bool, (u8, CliError)> {
    let cfg = BatchConfig::load(config).map_err(|e| (EXIT_CONFIG, e))?;
    let base = config.parent().unwrap_or(Path::new("."));
    let metrics = cfg.prepare(base).map_err(|e| (EXIT_CONFIG, e))?;
    let env_seed = seed_override().map_err(|e| (EXIT_CONFIG, e))?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.unwrap_or(0)).build().map_err(|e| (EXIT_CONFIG, CliError::Config(e.to_string())))?;
    let out_dir = base.join(&cfg.output_dir);
    let summaries: Vec<Result<report::Summary>> = pool.install(|| {
        cfg.experiments
            .par_iter()
            .zip(&metrics)
            .map(|(e, m)| {
                let seed = env_seed.or(e.seed).unwrap_or(cfg.seed);
                let tol = e.tolerance.unwrap_or_else(|| e.kind.default_tolerance());
                let outcome = experiments::run(&e.kind, m.as_ref(), tol, seed);
                report::write(&out_dir, &e.name, e.kind.name(), seed, &outcome)
            })
            .collect()
    });
    let mut all = true;
    for s in summaries {
        match s {
            Ok(s) => {
                println!("{} {} ({})", if s.pass { "PASS" } else { "FAIL" }, s.name, s.kind);
                if let Some(e) = &s.error {
                    println!("  error: {e}");
                }
                all &= s.pass;
            }
            Err(e) => {
                eprintln!("geo: {e}");
                all = false;
            }
        }
    }
    Ok(all)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, jobs } => match run(&config, jobs) {
            Ok(true) => ExitCode::SUCCESS,
            Ok(false) => ExitCode::from(EXIT_FAIL),
            Err((code, e)) => {
                eprintln!("geo: {e}");
                ExitCode::from(code)
            }
        },
    }
}
