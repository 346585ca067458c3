//! `fedtrade` command line: generate federations, run experiments, sweep
//! method grids over seeds and render report tables.

pub mod config_io;
pub mod data;
pub mod error;
pub mod generate;
pub mod report;
pub mod run;
pub mod sweep;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

pub use error::{exit, CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "fedtrade", version, about = "Harmonization vs personalization on synthetic federations")]
pub struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a federation and persist it (manifest.json + raw arrays).
    Generate {
        /// Federation spec or experiment config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Target directory; defaults to a cache dir under $FEDTRADE_DATA_DIR.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one experiment: results.csv, results.json, rounds.jsonl, manifest.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated seeds overriding the config's; several seeds go to out/seed-<s>.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Run a cells x methods grid over seeds and summarise.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Reuse runs whose manifest matches their config hash.
        #[arg(long)]
        resume: bool,
    },
    /// Render summaries as plain-text and Markdown tables.
    Report {
        /// summary.json / summary.csv files or sweep directories.
        paths: Vec<PathBuf>,
        /// Also write report.txt and report.md here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Experiment config whose harmonization is shown as sample panels (needs --out).
        #[arg(long)]
        panels: Option<PathBuf>,
    },
}

fn with_jobs<T>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> CliResult<T>
where
    T: Send,
{
    match jobs {
        None => Ok(f()),
        Some(0) => Err(CliError::config("--jobs must be at least 1")),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::new(exit::INTERNAL, e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

fn dispatch(cli: Cli) -> CliResult<i32> {
    let jobs = cli.jobs;
    match cli.command {
        Command::Generate { config, out } => {
            let dir = generate::cmd_generate(&config, out.as_deref())?;
            println!("{}", dir.display());
            Ok(exit::OK)
        }
        Command::Run { config, out, seeds } => {
            let manifests = with_jobs(jobs, || run::cmd_run(&config, &out, seeds.as_deref()))??;
            for m in manifests {
                println!("{} seed {} -> {}", m.method, m.config.seed, m.config_hash);
            }
            Ok(exit::OK)
        }
        Command::Sweep {
            config,
            out,
            seeds,
            resume,
        } => {
            let outcome = with_jobs(jobs, || sweep::cmd_sweep(&config, &out, seeds.as_deref(), resume))??;
            println!(
                "{} runs executed, {} reused, {} failed; summary in {}",
                outcome.executed,
                outcome.reused,
                outcome.summary.failures.len(),
                out.join("summary.csv").display()
            );
            for f in &outcome.summary.failures {
                eprintln!("failed: {} / {} / seed {}: {}", f.cell, f.method, f.seed, f.error);
            }
            Ok(sweep::sweep_exit_code(&outcome.summary))
        }
        Command::Report { paths, out, panels } => {
            let rendered = report::cmd_report(&paths, out.as_deref())?;
            print!("{}", rendered.text);
            if let Some(cfg) = panels {
                let dir: &Path = out.as_deref().ok_or_else(|| CliError::config("--panels needs --out"))?;
                for p in report::emit_panels(&cfg, dir)? {
                    println!("panel {}", p.display());
                }
            }
            Ok(exit::OK)
        }
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit::CONFIG } else { exit::OK };
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}
