use std::fs;
use std::path::{Path, PathBuf};

use fedtrade_core::synthdata::{load_federation, make_federation, persist_federation, Federation, FederationSpec, MANIFEST_FILE};

use crate::error::{CliError, CliResult};

/// Environment variable naming the default dataset root.
pub const DATA_DIR_ENV: &str = "FEDTRADE_DATA_DIR";

pub fn data_root() -> Option<PathBuf> {
    std::env::var_os(DATA_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from)
}

/// Cache location of a federation under a dataset root.
pub fn dataset_dir(root: &Path, spec: &FederationSpec) -> PathBuf {
    root.join(format!("fed-{}", &spec.content_hash()[..16]))
}

/// Writes a federation into `dir`, which must be empty, absent, or hold a
/// previous federation (its files are overwritten; the manifest goes
/// first so a partial rewrite never looks complete).
pub fn persist_in_place(fed: &Federation, dir: &Path) -> CliResult<()> {
    if let Ok(mut entries) = fs::read_dir(dir) {
        if !dir.join(MANIFEST_FILE).exists() && entries.next().is_some() {
            return Err(CliError::config(format!(
                "{}: refusing to write into a non-empty directory that holds no federation",
                dir.display()
            )));
        }
    }
    let manifest = dir.join(MANIFEST_FILE);
    if manifest.exists() {
        fs::remove_file(&manifest).map_err(|e| CliError::io(&manifest, e))?;
    }
    persist_federation(fed, dir)?;
    Ok(())
}

/// Writes a federation into a cache directory: files go to a sibling
/// temporary directory that is renamed into place, and a directory that
/// is already complete is kept.
pub fn persist_cached(fed: &Federation, dir: &Path) -> CliResult<()> {
    if dir.join(MANIFEST_FILE).exists() {
        return Ok(());
    }
    let parent = dir.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    let tmp = tempfile::Builder::new()
        .prefix(".partial-")
        .tempdir_in(parent)
        .map_err(|e| CliError::io(parent, e))?;
    persist_federation(fed, tmp.path())?;
    match fs::rename(tmp.path(), dir) {
        Ok(()) => {
            let _ = tmp.keep();
            Ok(())
        }
        // Another writer finished first; its files are identical.
        Err(_) if dir.join(MANIFEST_FILE).exists() => Ok(()),
        Err(e) => Err(CliError::io(dir, e)),
    }
}

/// Loads the federation from the dataset root when cached there,
/// otherwise generates it (and caches it when a root is configured).
pub fn obtain_federation(spec: &FederationSpec) -> CliResult<(Federation, Option<PathBuf>)> {
    let Some(root) = data_root() else {
        return Ok((make_federation(spec)?, None));
    };
    let dir = dataset_dir(&root, spec);
    if dir.join(MANIFEST_FILE).exists() {
        let fed = load_federation(&dir)?;
        if &fed.spec != spec {
            return Err(CliError::new(
                crate::error::exit::IO,
                format!("{}: cached federation does not match the requested spec", dir.display()),
            ));
        }
        return Ok((fed, Some(dir)));
    }
    let fed = make_federation(spec)?;
    persist_cached(&fed, &dir)?;
    Ok((fed, Some(dir)))
}
