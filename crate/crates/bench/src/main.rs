use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sketchogd_bench::runner::{export_spectrum, run_benchmark, run_bounds};
use sketchogd_bench::selftest::selftest;
use sketchogd_bench::BenchError;

#[derive(Parser)]
#[command(name = "bench", about = "Sketched OGD continual-learning benchmarks and bound checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured learner and seed; write trajectories, summary and manifest.
    Run { config: PathBuf },
    /// Monte Carlo check of the sketch error bounds; exits 3 on a violation.
    Bounds { config: PathBuf },
    /// Singular values and stable rank of a gradient matrix (CSV rows or binary dump).
    Spectrum { input: PathBuf, output: PathBuf },
    /// Quick built-in checks.
    Selftest,
}

fn configure_threads() -> Result<(), BenchError> {
    if let Ok(v) = std::env::var("SKETCHOGD_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| BenchError::Config(format!("SKETCHOGD_THREADS must be a positive integer, got `{v}`")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| BenchError::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn dispatch(cmd: Command) -> Result<(), BenchError> {
    configure_threads()?;
    match cmd {
        Command::Run { config } => {
            let out = run_benchmark(&config)?;
            for r in &out.records {
                eprintln!(
                    "{}: final_average {:.4} ({:.1}s)",
                    r.run_id(),
                    r.result.final_average,
                    r.result.wall_time.as_secs_f64()
                );
            }
            eprintln!("manifest: {}", out.manifest.display());
        }
        Command::Bounds { config } => {
            let out = run_bounds(&config)?;
            for (name, r) in &out.reports {
                let status = if r.within_bound() { "ok" } else { "VIOLATED" };
                eprintln!(
                    "{name} method{}: mean {:.4} ± {:.4}, bound {:.4} (γ* = {}) {status}",
                    r.method, r.empirical_mean, r.empirical_stderr, r.bound_value, r.optimal_gamma
                );
            }
            eprintln!("wrote {}", out.csv.display());
            let bad = out.violations();
            if !bad.is_empty() {
                return Err(BenchError::Violation(format!("{} bound(s) exceeded", bad.len())));
            }
        }
        Command::Spectrum { input, output } => export_spectrum(&input, &output)?,
        Command::Selftest => {
            let results = selftest();
            for (name, ok) in &results {
                println!("{} {name}", if *ok { "PASS" } else { "FAIL" });
            }
            if results.iter().any(|(_, ok)| !ok) {
                return Err(BenchError::Violation("selftest failed".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
