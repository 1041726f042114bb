//! `slerpshield` command-line front end.

mod attack;
mod common;
mod enroll;
mod eval;
mod matching;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use common::Failure;

#[derive(Parser)]
#[command(
    name = "slerpshield",
    version,
    about = "Protected face-template enrollment, matching and security evaluation"
)]
struct Cli {
    /// Worker threads for trials and scoring (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Base seed; falls back to SLERPSHIELD_SEED, then to OS entropy.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Protect templates and append them to a store.
    Enroll(enroll::EnrollArgs),
    /// Verify each query against the records of its claimed identity.
    Verify(matching::VerifyArgs),
    /// Rank every record against each query.
    Identify(matching::IdentifyArgs),
    /// Run the inversion attack or the Δθ experiment.
    Attack(attack::AttackArgs),
    /// Run evaluation suites and check them against their thresholds.
    Eval(eval::EvalArgs),
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Failure::usage("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Failure::usage(e.to_string()))?;
    }
    let seed = common::SeedChoice::resolve(cli.seed)?;
    match cli.command {
        Command::Enroll(a) => enroll::run(a, &seed),
        Command::Verify(a) => matching::verify(a),
        Command::Identify(a) => matching::identify(a),
        Command::Attack(a) => attack::run(a, &seed),
        Command::Eval(a) => eval::run(a, &seed),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            if !f.message.is_empty() {
                eprintln!("error: {}", f.message);
            }
            ExitCode::from(f.code)
        }
    }
}
