use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use asynczo::experiment::{run_experiment, ExperimentConfig};
use asynczo::scheduler::{rate_schedule_variant, RateScheduleVariant};
use asynczo::verify::{run_verification_suite, Selector, VerifyOptions};

#[derive(Parser)]
#[command(name = "asynczo", version, about = "Asynchronous zeroth-order optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a TOML config.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        record_every: Option<u64>,
    },
    /// Run numerical checks: smoothing, unbiasedness, sequence, moments or all.
    Verify {
        #[arg(default_value = "all")]
        check: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Negative control: halve L1 in the smoothing check (must fail).
        #[arg(long)]
        halve_l1: bool,
    },
    /// Print the step size and smoothing radius for a horizon.
    Schedule {
        #[arg(long)]
        l0: f64,
        #[arg(long)]
        n_bar: u64,
        #[arg(long)]
        p_min: f64,
        #[arg(long)]
        horizon: u64,
        /// Scale the step size by 1/sqrt(n_bar) instead of the radius by sqrt(n_bar).
        #[arg(long)]
        step_scaled: bool,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> asynczo::Result<ExitCode> {
    match cli.command {
        Command::Run { config, seed, jobs, out, record_every } => {
            let mut cfg = match config {
                Some(path) => ExperimentConfig::from_toml_file(&path)?,
                None => ExperimentConfig::benchmark_defaults("out"),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            if let Some(k) = record_every {
                cfg.record_every = k;
            }
            cfg.jobs = jobs;
            let summary = run_experiment(&cfg)?;
            print!("{}", summary.report);
            println!("output = {}", cfg.out_dir.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { check, seed, halve_l1 } => {
            let selector = Selector::parse(&check)?;
            let opts = VerifyOptions { seed, l1_scale: if halve_l1 { 0.5 } else { 1.0 }, ..Default::default() };
            let report = run_verification_suite(selector, &opts)?;
            print!("{}", report.render());
            Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Schedule { l0, n_bar, p_min, horizon, step_scaled } => {
            let variant =
                if step_scaled { RateScheduleVariant::StepScaled } else { RateScheduleVariant::SmoothingScaled };
            let (alpha, mu) = rate_schedule_variant(l0, n_bar, p_min, horizon, variant)?;
            println!("alpha = {alpha}\nmu = {mu}");
            Ok(ExitCode::SUCCESS)
        }
    }
}
