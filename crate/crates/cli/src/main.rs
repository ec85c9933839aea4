use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use freewtd_cli::commands::BENCH_MAX_SLOPE;
use freewtd_cli::{bench, engine_evaluator, natd, stats, verify, wtd, CliError, CliResult, RunConfig};
use freewtd_core::chain::Channel;

/// Waiting-time distributions of boundary-driven free-fermion chains.
#[derive(Parser)]
#[command(name = "freewtd", version)]
struct Cli {
    /// TOML run configuration; the built-in two-site default when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Waiting-time density P(t, to|from) on the time grid, as CSV.
    Wtd {
        /// Conditioning jump: 1-, 1+, L- or L+.
        #[arg(long, value_name = "CH", allow_hyphen_values = true)]
        from: Channel,
        /// Jump whose waiting time is measured.
        #[arg(long, value_name = "CH", allow_hyphen_values = true)]
        to: Channel,
    },
    /// Net activity time distribution of the steady state, as CSV.
    Natd,
    /// Channel probabilities, conditional moments and audits, as JSON.
    Stats {
        /// Report failed normalization audits as warnings instead of failing.
        #[arg(long)]
        allow_audit_failure: bool,
    },
    /// Check trace-determinant identities and the engine against the Fock-space oracle.
    Verify {
        #[arg(long, default_value_t = 0, value_name = "N")]
        seed: u64,
        /// Permit L = 5 (a 1024 x 1024 Liouvillian).
        #[arg(long)]
        allow_large_oracle: bool,
    },
    /// Time one density point for L = 10, 50, 100, 200.
    Bench,
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default_config(),
    };
    let out = cli.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    let files = match cli.command {
        Command::Wtd { from, to } => wtd(&cfg, to, from, &out)?,
        Command::Natd => natd(&cfg, &out)?,
        Command::Stats { allow_audit_failure } => {
            let (files, warnings) = stats(&cfg, &out, allow_audit_failure)?;
            for w in warnings {
                eprintln!("warning: normalization audit: {w}");
            }
            files
        }
        Command::Verify { seed, allow_large_oracle } => {
            let (outcome, path) = verify(&cfg, &out, seed, allow_large_oracle, &engine_evaluator)?;
            print!("{}", outcome.to_text());
            println!("report written to {}", path.display());
            if !outcome.passed {
                return Err(CliError::Audit("verification failed".into()));
            }
            return Ok(());
        }
        Command::Bench => {
            let (b, path) = bench(&cfg, &out)?;
            println!("L,seconds");
            for (l, s) in b.lengths.iter().zip(&b.seconds) {
                println!("{l},{s:.6e}");
            }
            println!("log-log slope {:.3}", b.slope);
            println!("written to {}", path.display());
            if b.slope > BENCH_MAX_SLOPE {
                return Err(CliError::Audit(format!("scaling slope {:.3} exceeds {BENCH_MAX_SLOPE}", b.slope)));
            }
            return Ok(());
        }
    };
    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // usage errors are validation failures (exit 1), not clap's default 2
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
