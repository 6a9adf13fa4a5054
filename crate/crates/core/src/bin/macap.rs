use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use macap::cli::{exit_code, run, Command};
use macap::scenario::parse_scenario;
use macap::Error;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Cmd {
    /// Effective capacity region trace over the λ grid.
    Region,
    /// Decoding-order boundary curve at `policy_lambda`.
    Boundary,
    /// Queue simulation at the effective capacity.
    Validate,
    /// Per-sample power allocation at `policy_lambda`.
    Policy,
}

#[derive(Debug, Parser)]
#[command(name = "macap", version, about = "Effective capacity regions of two-user fading MACs")]
struct Args {
    #[arg(value_enum)]
    command: Cmd,
    /// Scenario file (TOML).
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory; overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lambda_points: Option<usize>,
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("error[{}] in {}: {e}", e.category(), e.module());
    ExitCode::from(exit_code(e) as u8)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let text = match std::fs::read_to_string(&args.scenario) {
        Ok(t) => t,
        Err(e) => return fail(&Error::Io(format!("{}: {e}", args.scenario.display()))),
    };
    let mut scenario = match parse_scenario(&text) {
        Ok(s) => s,
        Err(e) => return fail(&e),
    };
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    if let Some(k) = args.lambda_points {
        if k < 2 {
            return fail(&Error::InvalidArgument(format!("--lambda-points must be >= 2, got {k}")));
        }
        scenario.lambda_points = k;
    }
    let out = args.out.unwrap_or_else(|| PathBuf::from(&scenario.output_dir));
    let command = match args.command {
        Cmd::Region => Command::Region,
        Cmd::Boundary => Command::Boundary,
        Cmd::Validate => Command::Validate,
        Cmd::Policy => Command::Policy,
    };
    match run(&scenario, command, &out) {
        Ok(outcome) => {
            for f in &outcome.files {
                println!("{}", f.display());
            }
            println!("{}", outcome.report.display());
            match outcome.error {
                None => ExitCode::SUCCESS,
                Some(e) => fail(&e),
            }
        }
        Err(e) => fail(&e),
    }
}
