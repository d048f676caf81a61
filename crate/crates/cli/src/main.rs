use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use coverlab::harness::{self, ExperimentConfig, Fault, HarnessError};

/// Sequential finite-error membership tests: batch runs, verification and
/// reports.
#[derive(Parser)]
#[command(name = "coverlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one trial per seed and write trials.csv and summary.json.
    Run(Common),
    /// Check the exact invariants and print the LIL coverage table.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Inject a known defect (`radius`) to exercise the checks.
        #[arg(long)]
        fault: Option<Fault>,
    },
    /// Aggregate result files into a stabilization table.
    Report {
        /// trials.csv files or run directories.
        files: Vec<PathBuf>,
        /// Also write report.csv here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML). Built-in defaults if omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seeds, e.g. `1-50` or `3,7,11`.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    horizon: Option<u64>,
    /// Write per-decision identifier traces.
    #[arg(long)]
    trace: bool,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, HarnessError> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        if let Some(s) = &self.seeds {
            cfg.seeds = harness::parse_seed_list(s)?;
        }
        if let Some(h) = self.horizon {
            cfg.horizon = h;
        }
        cfg.trace |= self.trace;
        Ok(cfg)
    }
}

fn exit_code(e: &anyhow::Error) -> ExitCode {
    match e.downcast_ref::<HarnessError>() {
        Some(HarnessError::Config(_) | HarnessError::Usage(_)) => ExitCode::from(2),
        _ => ExitCode::FAILURE,
    }
}

fn run(cmd: Command) -> Result<ExitCode> {
    harness::init_threads_from_env();
    match cmd {
        Command::Run(common) => {
            let cfg = common.load()?;
            let out = harness::cmd_run(&cfg)?;
            let s = &out.summary;
            println!(
                "{} trials, {} stabilized correct ({:.4}), median last change {}, max mistakes {}",
                s.trials,
                s.stabilized_correct,
                s.fraction_stabilized_correct,
                s.median_last_change,
                s.max_mistakes
            );
            println!("results in {}", cfg.out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { common, fault } => {
            let cfg = common.load()?;
            let (report, table) = harness::cmd_verify(&cfg, fault)?;
            let text = report.to_text();
            print!("{text}");
            println!("last-violation times (seeds with last violation <= bound):");
            for (bound, count) in &table.cumulative {
                println!("  <= {bound:>8}: {count}");
            }
            if common.out.is_some() {
                fs::create_dir_all(&cfg.out).with_context(|| cfg.out.display().to_string())?;
                fs::write(cfg.out.join("verify.txt"), &text)?;
                fs::write(cfg.out.join("coverage.csv"), table.to_csv())?;
            }
            if report.passed() {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("verification failed: {}", report.failed_names().join(", "));
                Ok(ExitCode::FAILURE)
            }
        }
        Command::Report { files, out } => {
            let report = harness::cmd_report(&files)?;
            print!("{}", report.to_text());
            if let Some(dir) = out {
                fs::create_dir_all(&dir).with_context(|| dir.display().to_string())?;
                fs::write(dir.join("report.csv"), report.to_csv())?;
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
