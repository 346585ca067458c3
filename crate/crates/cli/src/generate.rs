use std::path::{Path, PathBuf};

use fedtrade_core::engine::ExperimentConfig;
use fedtrade_core::synthdata::{make_federation, FederationSpec};
use serde_json::Value;

use crate::config_io::{parse_json, read_text};
use crate::data::{data_root, dataset_dir, persist_in_place, DATA_DIR_ENV};
use crate::error::{CliError, CliResult};

/// Reads either a bare federation spec or a full experiment config (whose
/// `seed` becomes the master seed).
pub fn read_federation_spec(path: &Path) -> CliResult<FederationSpec> {
    let text = read_text(path)?;
    let origin = path.display().to_string();
    let value: Value = parse_json(&text, &origin)?;
    let spec = if value.get("federation").is_some() {
        parse_json::<ExperimentConfig>(&text, &origin)?.federation_spec()
    } else {
        parse_json::<FederationSpec>(&text, &origin)?
    };
    spec.validate()?;
    Ok(spec)
}

/// `generate`: renders the federation and persists it. Without `out` the
/// dataset goes to its cache location under the dataset root.
pub fn cmd_generate(config_path: &Path, out: Option<&Path>) -> CliResult<PathBuf> {
    let spec = read_federation_spec(config_path)?;
    let dir = match (out, data_root()) {
        (Some(o), _) => o.to_path_buf(),
        (None, Some(root)) => dataset_dir(&root, &spec),
        (None, None) => {
            return Err(CliError::config(format!("no --out given and {DATA_DIR_ENV} is not set")));
        }
    };
    let fed = make_federation(&spec)?;
    persist_in_place(&fed, &dir)?;
    Ok(dir)
}
