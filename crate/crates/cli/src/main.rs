use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rlgu::experiment::{cmd_estimate, cmd_run, cmd_validate, estimate_csv, LoadedConfig, Overrides};
use rlgu::Error;

#[derive(Parser)]
#[command(name = "rlgu", version, about = "Policy gradient with general utilities and occupancy critics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the policy-gradient driver once per seed.
    Run(RunArgs),
    /// Measure critic error against the exact occupancy over a sample ladder.
    Estimate(RunArgs),
    /// Check an MDP file or an experiment config.
    Validate { path: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    config: PathBuf,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Replace the config's seed list with this single seed.
    #[arg(long)]
    seed_override: Option<u64>,
    /// Run seeds on separate workers.
    #[arg(long)]
    parallel_seeds: bool,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            output_dir: self.output_dir.clone(),
            seed: self.seed_override,
            parallel_seeds: self.parallel_seeds,
        }
    }
}

fn exit_code(err: &Error) -> ExitCode {
    match err {
        Error::Divergence { .. } => ExitCode::from(2),
        _ => ExitCode::from(1),
    }
}

fn run(args: &RunArgs) -> Result<(), Error> {
    let loaded = LoadedConfig::load(&args.config)?;
    let out = cmd_run(&loaded, &args.overrides())?;
    let s = &out.summary;
    println!(
        "final_F_mean={} final_F_std={} final_tv_mean={} seeds={}",
        s.final_f_mean,
        s.final_f_std,
        s.final_tv_mean,
        s.seeds.len()
    );
    Ok(())
}

fn estimate(args: &RunArgs) -> Result<(), Error> {
    let loaded = LoadedConfig::load(&args.config)?;
    let rows = cmd_estimate(&loaded, &args.overrides())?;
    print!("{}", estimate_csv(&rows));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run(args) => run(args),
        Command::Estimate(args) => estimate(args),
        Command::Validate { path } => match cmd_validate(path) {
            Ok(report) => {
                for line in report.lines() {
                    println!("{line}");
                }
                return if report.all_passed() {
                    ExitCode::SUCCESS
                } else {
                    ExitCode::from(1)
                };
            }
            Err(e) => Err(e),
        },
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
