use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::config::{check_budget_parity, BaselineKind, ExperimentConfig};
use crate::engine::results::{ResultTable, POOLED};
use crate::error::{FedError, Result};
use crate::harmonize::HarmonizeKind;
use crate::strategies::StrategyKind;
use crate::synthdata::Task;

/// One (cell, method) pair; the seed is filled in per run.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteJob {
    pub cell: String,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodFamily {
    Harmonization,
    Personalization,
    /// The vanilla FedAvg model tested per client.
    FedavgLocal,
    Other,
}

pub fn method_family(config: &ExperimentConfig) -> MethodFamily {
    match (&config.strategy, config.baseline, &config.harmonize) {
        (Some(StrategyKind::Fedavg), None, HarmonizeKind::None) | (None, Some(BaselineKind::FedavgLocal), HarmonizeKind::None) => {
            MethodFamily::FedavgLocal
        }
        (Some(StrategyKind::Fedavg), None, _) => MethodFamily::Harmonization,
        (Some(s), None, HarmonizeKind::None) if s.is_personalized() => MethodFamily::Personalization,
        _ => MethodFamily::Other,
    }
}

fn primary_metric(config: &ExperimentConfig) -> &'static str {
    match config.federation.task {
        Task::Segmentation => "dice",
        Task::Classification => "kappa",
    }
}

/// Primary metric of one (cell, method, seed) run, averaged over clients
/// (or the pooled value for globally tested methods).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub cell: String,
    pub method: String,
    pub family: MethodFamily,
    pub seed: u64,
    pub value: f64,
    pub per_client: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryEntry {
    pub cell: String,
    pub method: String,
    /// Client id, `pooled`, or `mean` (client average).
    pub client: String,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Best {
    pub method: String,
    pub mean: f64,
}

/// Directional comparison of the method families in one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub cell: String,
    pub metric: String,
    pub best_harmonization: Option<Best>,
    pub best_personalization: Option<Best>,
    pub fedavg_local: Option<f64>,
    /// best harmonization minus best personalization
    pub harmonization_minus_personalization: Option<f64>,
    pub harmonization_minus_fedavg: Option<f64>,
    pub personalization_minus_fedavg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub cell: String,
    pub method: String,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SuiteSummary {
    pub entries: Vec<SummaryEntry>,
    pub records: Vec<SeedRecord>,
    pub comparisons: Vec<Comparison>,
    pub failures: Vec<Failure>,
}

/// Mean and sample standard deviation (`n - 1`; 0 for one value).
pub fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl SuiteSummary {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["cell", "method", "client", "metric", "mean", "std", "seeds"])
            .expect("in-memory write");
        for e in &self.entries {
            w.write_record([
                e.cell.as_str(),
                e.method.as_str(),
                e.client.as_str(),
                e.metric.as_str(),
                &e.mean.to_string(),
                &e.std.to_string(),
                &e.seeds.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }

    pub fn mean_of(&self, cell: &str, method: &str) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.cell == cell && e.method == method && (e.client == "mean" || e.client == POOLED))
            .map(|e| e.mean)
    }
}

fn record_from_table(job: &SuiteJob, seed: u64, table: &ResultTable) -> Result<SeedRecord> {
    let method = job.config.method_label();
    let metric = primary_metric(&job.config);
    let per_client = table.local_values(&method, metric);
    let value = if per_client.is_empty() {
        table
            .value(&method, POOLED, metric)
            .ok_or_else(|| FedError::manifest("results", format!("no `{metric}` cells for `{method}`")))?
    } else {
        per_client.iter().sum::<f64>() / per_client.len() as f64
    };
    Ok(SeedRecord {
        cell: job.cell.clone(),
        method,
        family: method_family(&job.config),
        seed,
        value,
        per_client,
    })
}

/// Summarises per-seed records: per (cell, method) client means, per-client
/// columns, and the directional comparisons.
pub fn summarize(jobs: &[SuiteJob], records: Vec<SeedRecord>, failures: Vec<Failure>) -> SuiteSummary {
    let mut entries = Vec::new();
    let mut comparisons = Vec::new();
    let mut cells: Vec<&str> = Vec::new();
    for j in jobs {
        if !cells.contains(&j.cell.as_str()) {
            cells.push(&j.cell);
        }
    }
    for cell in cells {
        let mut fam_best: [(Option<Best>, MethodFamily); 2] =
            [(None, MethodFamily::Harmonization), (None, MethodFamily::Personalization)];
        let mut fedavg_local = None;
        let mut metric = String::new();
        for job in jobs.iter().filter(|j| j.cell == cell) {
            let method = job.config.method_label();
            metric = primary_metric(&job.config).to_string();
            let recs: Vec<&SeedRecord> = records.iter().filter(|r| r.cell == cell && r.method == method).collect();
            if recs.is_empty() {
                continue;
            }
            let values: Vec<f64> = recs.iter().map(|r| r.value).collect();
            let (mean, std) = mean_and_std(&values);
            let client_label = if recs[0].per_client.is_empty() { POOLED } else { "mean" };
            entries.push(SummaryEntry {
                cell: cell.to_string(),
                method: method.clone(),
                client: client_label.to_string(),
                metric: metric.clone(),
                mean,
                std,
                seeds: values.len(),
            });
            for k in 0..recs[0].per_client.len() {
                let col: Vec<f64> = recs.iter().filter_map(|r| r.per_client.get(k).copied()).collect();
                let (m, s) = mean_and_std(&col);
                entries.push(SummaryEntry {
                    cell: cell.to_string(),
                    method: method.clone(),
                    client: k.to_string(),
                    metric: metric.clone(),
                    mean: m,
                    std: s,
                    seeds: col.len(),
                });
            }
            let family = method_family(&job.config);
            if family == MethodFamily::FedavgLocal && client_label == "mean" {
                fedavg_local = Some(mean);
            }
            for (best, fam) in fam_best.iter_mut() {
                if *fam == family && best.as_ref().is_none_or(|b| mean > b.mean) {
                    *best = Some(Best {
                        method: method.clone(),
                        mean,
                    });
                }
            }
        }
        let [(harm, _), (pers, _)] = fam_best;
        let diff = |a: Option<f64>, b: Option<f64>| a.zip(b).map(|(x, y)| x - y);
        let h = harm.as_ref().map(|b| b.mean);
        let p = pers.as_ref().map(|b| b.mean);
        comparisons.push(Comparison {
            cell: cell.to_string(),
            metric,
            harmonization_minus_personalization: diff(h, p),
            harmonization_minus_fedavg: diff(h, fedavg_local),
            personalization_minus_fedavg: diff(p, fedavg_local),
            best_harmonization: harm,
            best_personalization: pers,
            fedavg_local,
        });
    }
    SuiteSummary {
        entries,
        records,
        comparisons,
        failures,
    }
}

/// [`run_suite`] with the at-least-three-seeds requirement of a
/// trade-off comparison.
pub fn run_tradeoff_suite<F, E>(jobs: &[SuiteJob], seeds: &[u64], runner: F) -> Result<SuiteSummary>
where
    F: Fn(&ExperimentConfig) -> std::result::Result<ResultTable, E> + Sync,
    E: std::fmt::Display,
{
    if seeds.len() < 3 {
        return Err(FedError::config("seeds", format!("a suite needs at least 3 seeds, got {}", seeds.len())));
    }
    run_suite(jobs, seeds, runner)
}

/// Runs every job for every seed through `runner` (which may cache) and
/// summarises. Failed runs are reported, not fatal.
pub fn run_suite<F, E>(jobs: &[SuiteJob], seeds: &[u64], runner: F) -> Result<SuiteSummary>
where
    F: Fn(&ExperimentConfig) -> std::result::Result<ResultTable, E> + Sync,
    E: std::fmt::Display,
{
    if seeds.is_empty() {
        return Err(FedError::config("seeds", "no seeds given"));
    }
    let configs: Vec<&ExperimentConfig> = jobs.iter().map(|j| &j.config).collect();
    check_budget_parity(&configs)?;
    for j in jobs {
        j.config.validate()?;
    }
    let work: Vec<(usize, u64)> = (0..jobs.len()).flat_map(|j| seeds.iter().map(move |&s| (j, s))).collect();
    let outcomes: Vec<std::result::Result<SeedRecord, String>> = work
        .par_iter()
        .map(|&(j, seed)| {
            let job = &jobs[j];
            let config = ExperimentConfig {
                seed,
                ..job.config.clone()
            };
            runner(&config)
                .map_err(|e| e.to_string())
                .and_then(|t| record_from_table(job, seed, &t).map_err(|e| e.to_string()))
        })
        .collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (&(j, seed), out) in work.iter().zip(outcomes) {
        match out {
            Ok(r) => records.push(r),
            Err(e) => failures.push(Failure {
                cell: jobs[j].cell.clone(),
                method: jobs[j].config.method_label(),
                seed,
                error: e,
            }),
        }
    }
    Ok(summarize(jobs, records, failures))
}
