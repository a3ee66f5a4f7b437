use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use shelab_cli::{load_config, run, validate_listing, Experiment, Format, RunOptions};

#[derive(Parser)]
#[command(name = "shelab", version, about = "Stochastic heat equation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides `ensemble.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    workers: Option<usize>,
    /// Overrides `output.dir`.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Overrides `output.format`.
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate paths and dump fields.
    Simulate(Common),
    /// Mild, weak and regularized residuals under refinement.
    Equivalence(Common),
    /// Estimate the time-regularity exponent kappa.
    Kappa(Common),
    /// Sewing-germ rate check.
    Sewing(Common),
    /// Besov-surrogate convergence of the mollified drift.
    Besov(Common),
    /// Distance between two coupled solutions under refinement.
    Uniqueness(Common),
    /// List derived quantities and violations without running.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (experiment, common) = match cli.command {
        Command::Validate { config } => return validate(&config),
        Command::Simulate(c) => (Experiment::Simulate, c),
        Command::Equivalence(c) => (Experiment::Equivalence, c),
        Command::Kappa(c) => (Experiment::Kappa, c),
        Command::Sewing(c) => (Experiment::Sewing, c),
        Command::Besov(c) => (Experiment::Besov, c),
        Command::Uniqueness(c) => (Experiment::Uniqueness, c),
    };
    let opts = RunOptions { seed: common.seed, workers: common.workers, out_dir: common.out_dir, format: common.format };
    let started = Instant::now();
    let result = load_config(&common.config, Some(experiment), &opts).and_then(|cfg| {
        let workers = opts
            .workers
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        run(experiment, &cfg, workers)
    });
    match result {
        Ok(outcome) => {
            for f in &outcome.files {
                println!("{}", f.display());
            }
            eprintln!(
                "{}: {} in {:.2}s",
                experiment.name(),
                if outcome.pass { "PASS" } else { "FAIL" },
                started.elapsed().as_secs_f64()
            );
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn validate(path: &PathBuf) -> ExitCode {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {}: {e}", path.display());
            return ExitCode::from(1);
        }
    };
    match validate_listing(&text, &path.display().to_string()) {
        Ok((violations, derived)) => {
            for d in &derived {
                println!("{d}");
            }
            for v in &violations {
                eprintln!("violation: {v}");
            }
            if violations.is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
