use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use forkmerge_core::tasks::generate_family;
use forkmerge_lab::config::ExperimentConfig;
use forkmerge_lab::report::{report_dir, ReportError};
use forkmerge_lab::{csv_io, run_experiment, sweeps, ThreadPool};

#[derive(Parser)]
#[command(
    name = "forkmerge",
    version,
    about = "Fork/merge auxiliary-task training experiments"
)]
struct Cli {
    /// Worker threads for branch training (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a generated task family as CSV files.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Data seed; defaults to `data_seed`, then the first entry of `seeds`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the configured method for every seed.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides FORKMERGE_OUT_DIR and `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Analysis sweeps relating task weighting to GCS and CSD.
    Sweep {
        kind: SweepKind,
        #[arg(long)]
        config: PathBuf,
        /// CSV file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate a run directory into summary tables.
    Report {
        dir: PathBuf,
        /// Skip the delta_m column, which needs STL records.
        #[arg(long)]
        no_delta_m: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepKind {
    TgGcs,
    CsdLambda,
}

enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

fn usage<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Usage(e.into())
}

fn runtime<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Runtime(e.into())
}

fn load(path: &Path) -> Result<ExperimentConfig, Failure> {
    ExperimentConfig::load(path).map_err(usage)
}

fn pool(threads: usize) -> Result<ThreadPool, Failure> {
    ThreadPool::new(threads)
        .context("cannot start thread pool")
        .map_err(runtime)
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::GenData { config, out, seed } => {
            let cfg = load(&config)?;
            let seed = seed.or(cfg.data_seed).unwrap_or(cfg.seeds[0]);
            let family = generate_family(&cfg.family(seed)).map_err(runtime)?;
            csv_io::write_family(&out, &family).map_err(runtime)?;
            eprintln!("wrote {} tasks to {}", family.n_tasks(), out.display());
        }
        Command::Run { config, out } => {
            let cfg = load(&config)?;
            let dir = out.unwrap_or_else(|| cfg.resolved_output_dir());
            let output = run_experiment(&cfg, &pool(cli.threads)?, &dir).map_err(runtime)?;
            for r in &output.records {
                let tg = r.tg.map_or_else(String::new, |t| format!(" tg {t:+.2}"));
                eprintln!("{} seed {}: {} {:.4}{}", r.method, r.seed, r.metric, r.value, tg);
            }
            eprintln!("results in {}", dir.display());
        }
        Command::Sweep { kind, config, out } => {
            let cfg = load(&config)?;
            let pool = pool(cli.threads)?;
            match kind {
                SweepKind::TgGcs => {
                    let rows = sweeps::tg_gcs(&cfg, &pool).map_err(runtime)?;
                    sweeps::write_rows(&out, &rows).map_err(runtime)?;
                }
                SweepKind::CsdLambda => {
                    let rows = sweeps::csd_lambda(&cfg, &pool).map_err(runtime)?;
                    sweeps::write_rows(&out, &rows).map_err(runtime)?;
                }
            }
            eprintln!("wrote {}", out.display());
        }
        Command::Report { dir, no_delta_m } => match report_dir(&dir, !no_delta_m) {
            Ok(summary) => {
                for m in &summary {
                    let dm = m.delta_m.map_or_else(String::new, |d| format!("  delta_m {d:+.2}%"));
                    for t in &m.tasks {
                        eprintln!(
                            "{} task {}: {} {:.4} ± {:.4} (n={}){}",
                            m.method, t.task_id, t.metric, t.mean, t.std, t.n, dm
                        );
                    }
                }
            }
            Err(e @ (ReportError::NotAResultsDir(_) | ReportError::NoRecords | ReportError::NoBaseline)) => {
                return Err(usage(e))
            }
            Err(e) => return Err(runtime(e)),
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
