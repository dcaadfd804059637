use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use streamsched::harness::{
    compare_report, run_experiment, write_reports, ExperimentConfig, ExperimentSummary,
    HarnessError, SchedulerKind,
};

/// Schedule stream processing topologies with learned and baseline
/// schedulers on a simulated cluster.
#[derive(Debug, Parser)]
#[command(name = "streamsched", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Pretrain (learning schedulers) and run online epochs for every seed.
    Run {
        /// JSON experiment config; flags below override its fields.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Catalog name or path to a scenario JSON file.
        #[arg(long)]
        scenario: Option<String>,
        /// round-robin, random, dqn or actor-critic.
        #[arg(long)]
        scheduler: Option<String>,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Output directory for metrics and checkpoints.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Normalize and smooth the reward traces of a finished run.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
    /// Relative reduction of run A's stabilized time against run B's.
    Compare { run_a: PathBuf, run_b: PathBuf },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 1 } else { 2 })
        }
    }
}

fn execute(command: Command) -> Result<(), HarnessError> {
    match command {
        Command::Run {
            config,
            scenario,
            scheduler,
            seeds,
            epochs,
            out,
        } => {
            let mut cfg = match config {
                Some(path) => ExperimentConfig::load(path)?,
                None => ExperimentConfig::default(),
            };
            if let Some(s) = scenario {
                cfg.scenario = s;
            }
            if let Some(s) = scheduler {
                cfg.scheduler = s.parse::<SchedulerKind>()?;
            }
            if let Some(s) = seeds {
                cfg.seeds = s;
            }
            if let Some(e) = epochs {
                cfg.agent.epochs = e;
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            let summary = run_experiment(&cfg)?;
            for run in &summary.runs {
                println!(
                    "seed {}: stabilized avg tuple time {:.4} ms",
                    run.seed,
                    run.stabilized_avg_time * 1e3
                );
            }
            println!(
                "{} on {}: {:.4} ms over {} seed(s), written to {}",
                summary.scheduler.name(),
                summary.scenario,
                summary.stabilized_avg_time * 1e3,
                summary.runs.len(),
                cfg.output_dir.display()
            );
        }
        Command::Report { out } => {
            let summary = write_reports(&out)?;
            println!(
                "{} on {} ({}): {:.4} ms",
                summary.scheduler.name(),
                summary.scenario,
                summary.stabilized_definition,
                summary.stabilized_avg_time * 1e3
            );
            for run in &summary.runs {
                println!(
                    "seed {}: {:.4} ms, report_seed{}.csv",
                    run.seed,
                    run.stabilized_avg_time * 1e3,
                    run.seed
                );
            }
        }
        Command::Compare { run_a, run_b } => {
            let a = ExperimentSummary::load(run_a.join("summary.json"))?;
            let b = ExperimentSummary::load(run_b.join("summary.json"))?;
            let c = compare_report(&a, &b)?;
            println!(
                "{} vs {} on {}: {:.4} ms vs {:.4} ms, improvement {:.1}%",
                c.scheduler_a.name(),
                c.scheduler_b.name(),
                c.scenario,
                c.time_a * 1e3,
                c.time_b * 1e3,
                c.improvement * 100.0
            );
        }
    }
    Ok(())
}
