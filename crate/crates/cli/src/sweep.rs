use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use fedtrade_core::engine::{run_suite, ExperimentConfig, SuiteJob, SuiteSummary};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config_io::{deep_merge, from_value, read_json, write_json, write_text};
use crate::error::{exit, CliError, CliResult};
use crate::run::{completed_run, execute, unix_now, write_run_dir};

/// One heterogeneity cell of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSpec {
    pub name: String,
    pub delta_style: f64,
    pub delta_content: f64,
    /// Merged into `base` for this cell only (e.g. task, image size).
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub overrides: Value,
}

/// Grid of cells x methods, each run for every seed. `base` and
/// `methods` entries are partial experiment configs merged in that order
/// (cell overrides in between).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub base: Value,
    pub cells: Vec<CellSpec>,
    pub methods: Vec<Value>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

impl SweepConfig {
    pub fn jobs(&self) -> CliResult<Vec<SuiteJob>> {
        if self.cells.is_empty() || self.methods.is_empty() {
            return Err(CliError::config("sweep grid is empty: need at least one cell and one method"));
        }
        let mut jobs = Vec::new();
        for (i, cell) in self.cells.iter().enumerate() {
            for (j, method) in self.methods.iter().enumerate() {
                let mut v = self.base.clone();
                if !cell.overrides.is_null() {
                    deep_merge(&mut v, &cell.overrides);
                }
                deep_merge(
                    &mut v,
                    &serde_json::json!({"federation": {"delta_style": cell.delta_style, "delta_content": cell.delta_content}}),
                );
                deep_merge(&mut v, method);
                let config: ExperimentConfig = from_value(v, &format!("cells[{i}] `{}`, methods[{j}]", cell.name))?;
                config.validate().map_err(|e| CliError::config(format!("cells[{i}] `{}`, methods[{j}]: {e}", cell.name)))?;
                jobs.push(SuiteJob {
                    cell: cell.name.clone(),
                    config,
                });
            }
        }
        let mut labels: Vec<(&str, String)> = jobs.iter().map(|j| (j.cell.as_str(), j.config.method_label())).collect();
        labels.sort();
        if let Some(w) = labels.windows(2).find(|w| w[0] == w[1]) {
            return Err(CliError::config(format!("cell `{}` lists method `{}` twice", w[0].0, w[0].1)));
        }
        Ok(jobs)
    }
}

/// Where the run of `config` (seed included) lives inside a sweep.
pub fn run_dir(out: &Path, config: &ExperimentConfig) -> PathBuf {
    out.join("runs").join(config.config_hash())
}

pub struct SweepOutcome {
    pub summary: SuiteSummary,
    pub executed: usize,
    pub reused: usize,
}

/// `sweep`: every (cell, method, seed) run into `out/runs/<config hash>`,
/// then `summary.csv` and `summary.json`. With `resume`, runs whose
/// directory already holds a matching manifest are read back instead of
/// recomputed.
pub fn cmd_sweep(config_path: &Path, out: &Path, seeds: Option<&[u64]>, resume: bool) -> CliResult<SweepOutcome> {
    let sweep: SweepConfig = read_json(config_path)?;
    let seeds: Vec<u64> = seeds.map(<[u64]>::to_vec).unwrap_or_else(|| sweep.seeds.clone());
    let jobs = sweep.jobs()?;
    if seeds.len() < 3 {
        eprintln!("warning: {} seed(s); trade-off comparisons need at least 3 to be meaningful", seeds.len());
    }
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let total = jobs.len() * seeds.len();
    let done = AtomicUsize::new(0);
    let executed = AtomicUsize::new(0);
    let reused = AtomicUsize::new(0);
    let summary = run_suite(&jobs, &seeds, |config| {
        let dir = run_dir(out, config);
        let label = config.method_label();
        let table = match completed_run(&dir, config).filter(|_| resume) {
            Some(t) => {
                reused.fetch_add(1, Ordering::Relaxed);
                t
            }
            None => {
                let started = unix_now();
                let (output, dataset) = execute(config)?;
                write_run_dir(&dir, config, &output, dataset.as_deref(), started)?;
                executed.fetch_add(1, Ordering::Relaxed);
                output.table
            }
        };
        let n = done.fetch_add(1, Ordering::Relaxed) + 1;
        eprintln!("[{n}/{total}] {label} seed {}", config.seed);
        Ok::<_, CliError>(table)
    })?;
    write_text(&out.join("summary.csv"), &summary.to_csv())?;
    write_json(&out.join("summary.json"), &summary)?;
    Ok(SweepOutcome {
        summary,
        executed: executed.into_inner(),
        reused: reused.into_inner(),
    })
}

/// Exit code of a finished sweep: partial failure when any run failed.
pub fn sweep_exit_code(summary: &SuiteSummary) -> i32 {
    if summary.failures.is_empty() {
        exit::OK
    } else {
        exit::PARTIAL_SWEEP
    }
}
