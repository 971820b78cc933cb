use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use freeperiod_cli::{cmd_check, cmd_solve, cmd_verify, CliError, ProblemConfig, EXIT_HYPOTHESIS, EXIT_USAGE};

/// Periodic orbits of prescribed energy by a penalized free-period action.
///
/// The configuration is a single JSON document; every key is optional and
/// `--defaults` prints the fully populated default. Exit codes: 0 ok,
/// 2 hypothesis check failed, 3 solve failed, 4 verification failed,
/// 64 usage error.
#[derive(Parser, Debug)]
#[command(name = "freeperiod", version)]
struct Cli {
    /// Print the default configuration and exit.
    #[arg(long)]
    defaults: bool,
    /// Worker threads; all available cores when omitted.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Recorded in the summary; the pipeline itself is deterministic.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check regularity, growth, geometry and the linking homology.
    Check {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Find an orbit and write the orbit CSV and summary JSON.
    Solve {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Report progress on standard error.
        #[arg(long)]
        progress: bool,
    },
    /// Re-integrate a stored orbit CSV against its problem.
    Verify {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Defaults to the configured output.orbit_csv.
        #[arg(long)]
        orbit: Option<PathBuf>,
    },
}

fn emit(text: &str) {
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn load(path: &Option<PathBuf>) -> Result<ProblemConfig, CliError> {
    match path {
        Some(p) => ProblemConfig::load(p),
        None => Ok(ProblemConfig::default()),
    }
}

fn run(cli: Cli) -> Result<i32, CliError> {
    if cli.defaults {
        emit(&ProblemConfig::default().to_json());
        return Ok(0);
    }
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    match cli.command {
        None => Err(CliError::Usage("expected a subcommand: check, solve or verify".into())),
        Some(Command::Check { config }) => {
            let report = cmd_check(&load(&config)?)?;
            emit(&serde_json::to_string_pretty(&report).unwrap());
            Ok(if report.passed { 0 } else { EXIT_HYPOTHESIS })
        }
        Some(Command::Solve { config, progress }) => {
            let mut cfg = load(&config)?;
            cfg.solver.progress |= progress;
            let s = cmd_solve(&cfg, cli.seed)?;
            emit(&format!(
                "T = {:.10} c = {:.10} eps = {:.3e} -> {}",
                s.period,
                s.c,
                s.eps_final,
                cfg.output.summary_json.display()
            ));
            Ok(0)
        }
        Some(Command::Verify { config, orbit }) => {
            let cfg = load(&config)?;
            let path = orbit.unwrap_or_else(|| cfg.output.orbit_csv.clone());
            let check = cmd_verify(&cfg, &path)?;
            emit(&serde_json::to_string_pretty(&check).unwrap());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE as u8 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("freeperiod: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}
