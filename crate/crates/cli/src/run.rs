use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use fedtrade_core::engine::{rounds_to_jsonl, run_experiment_on, ExperimentConfig, ResultTable, RunOutput};
use fedtrade_core::harmonize::PluginRegistry;
use fedtrade_core::TOOL_VERSION;
use serde::{Deserialize, Serialize};

use crate::config_io::{read_json, read_text, write_json, write_text};
use crate::data::obtain_federation;
use crate::error::{CliError, CliResult};

/// Version of the `results.csv` / `rounds.jsonl` layouts.
pub const RESULTS_SCHEMA_VERSION: u32 = 1;
pub const RUN_MANIFEST: &str = "manifest.json";
pub const RUN_OUTPUTS: [&str; 3] = ["results.csv", "results.json", "rounds.jsonl"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub tool_version: String,
    /// SHA-256 of the canonical config, seed included.
    pub config_hash: String,
    pub method: String,
    pub seeds: Vec<u64>,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    pub config: ExperimentConfig,
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Runs one experiment and returns its output plus the dataset directory
/// used, if any.
pub fn execute(config: &ExperimentConfig) -> CliResult<(RunOutput, Option<PathBuf>)> {
    config.validate()?;
    let (fed, dir) = obtain_federation(&config.federation_spec())?;
    let out = run_experiment_on(config, fed, &PluginRegistry::default())?;
    Ok((out, dir))
}

/// Writes the result files, then the manifest (last, so a manifest marks
/// a complete directory).
pub fn write_run_dir(
    dir: &Path,
    config: &ExperimentConfig,
    out: &RunOutput,
    dataset: Option<&Path>,
    started_unix: u64,
) -> CliResult<RunManifest> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let _ = fs::remove_file(dir.join(RUN_MANIFEST));
    write_text(&dir.join("results.csv"), &out.table.to_csv())?;
    write_text(&dir.join("results.json"), &(out.table.to_json() + "\n"))?;
    write_text(&dir.join("rounds.jsonl"), &rounds_to_jsonl(&out.rounds))?;
    let manifest = RunManifest {
        schema_version: RESULTS_SCHEMA_VERSION,
        tool_version: TOOL_VERSION.to_string(),
        config_hash: config.config_hash(),
        method: out.method.clone(),
        seeds: vec![config.seed],
        started_unix,
        finished_unix: unix_now(),
        outputs: RUN_OUTPUTS.iter().map(|s| s.to_string()).collect(),
        dataset: dataset.map(|d| d.display().to_string()),
        config: config.clone(),
    };
    write_json(&dir.join(RUN_MANIFEST), &manifest)?;
    Ok(manifest)
}

/// The results table of a completed run directory whose manifest matches
/// `config`, if there is one.
pub fn completed_run(dir: &Path, config: &ExperimentConfig) -> Option<ResultTable> {
    let manifest: RunManifest = read_json(&dir.join(RUN_MANIFEST)).ok()?;
    if manifest.config_hash != config.config_hash() || manifest.schema_version != RESULTS_SCHEMA_VERSION {
        return None;
    }
    if RUN_OUTPUTS.iter().any(|f| !dir.join(f).exists()) {
        return None;
    }
    ResultTable::from_csv(&read_text(&dir.join("results.csv")).ok()?).ok()
}

/// `run`: one experiment per seed. With a single seed the files land in
/// `out` directly, otherwise in `out/seed-<s>`.
pub fn cmd_run(config_path: &Path, out: &Path, seeds: Option<&[u64]>) -> CliResult<Vec<RunManifest>> {
    let config: ExperimentConfig = read_json(config_path)?;
    let seeds: Vec<u64> = seeds.map(<[u64]>::to_vec).unwrap_or_else(|| vec![config.seed]);
    let mut manifests = Vec::new();
    for &seed in &seeds {
        let cfg = ExperimentConfig { seed, ..config.clone() };
        let dir = if seeds.len() == 1 { out.to_path_buf() } else { out.join(format!("seed-{seed}")) };
        let started = unix_now();
        let (output, dataset) = execute(&cfg)?;
        manifests.push(write_run_dir(&dir, &cfg, &output, dataset.as_deref(), started)?);
    }
    Ok(manifests)
}
