use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{FedError, Result};
use crate::numerics::Tensor;
use crate::synthdata::federation::{ClientDataset, Federation, FederationSpec, Targets, Task};
use crate::synthdata::profile::ShiftProfile;

pub const MANIFEST_FILE: &str = "manifest.json";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClientEntry {
    client_id: usize,
    images_shape: Vec<usize>,
    targets_shape: Vec<usize>,
    test: Vec<usize>,
    train: Vec<usize>,
    val: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    master_seed: u64,
    spec: FederationSpec,
    shift_profile: ShiftProfile,
    clients: Vec<ClientEntry>,
}

fn images_file(k: usize) -> String {
    format!("client_{k}_images.f64")
}

fn targets_file(k: usize) -> String {
    format!("client_{k}_targets.f64")
}

fn write_f64(path: &Path, data: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(data.len() * 8);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| FedError::io(path, e))
}

fn read_f64(path: &Path, expected: usize, field: &str) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| FedError::io(path, e))?;
    if bytes.len() != expected * 8 {
        return Err(FedError::manifest(
            field,
            format!("{} holds {} bytes, expected {}", path.display(), bytes.len(), expected * 8),
        ));
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

/// Writes `manifest.json` plus two raw little-endian f64 files per client.
pub fn persist_federation(fed: &Federation, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| FedError::io(dir, e))?;
    let mut entries = Vec::new();
    for c in &fed.clients {
        let (targets, shape) = match &c.targets {
            Targets::Masks(m) => (m.data().to_vec(), m.shape().to_vec()),
            Targets::Labels(l) => (l.iter().map(|&v| v as f64).collect(), vec![l.len()]),
        };
        write_f64(&dir.join(images_file(c.client_id)), c.images.data())?;
        write_f64(&dir.join(targets_file(c.client_id)), &targets)?;
        entries.push(ClientEntry {
            client_id: c.client_id,
            images_shape: c.images.shape().to_vec(),
            targets_shape: shape,
            test: c.test.clone(),
            train: c.train.clone(),
            val: c.val.clone(),
        });
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        master_seed: fed.spec.master_seed,
        spec: fed.spec.clone(),
        shift_profile: fed.profile.clone(),
        clients: entries,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    fs::write(&path, text).map_err(|e| FedError::io(&path, e))
}

fn check_indices(entry: &ClientEntry, n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    for (name, list) in [("test", &entry.test), ("train", &entry.train), ("val", &entry.val)] {
        for &i in list {
            if i >= n || seen[i] {
                return Err(FedError::manifest(
                    format!("clients[{}].{name}", entry.client_id),
                    format!("index {i} is out of range or repeated"),
                ));
            }
            seen[i] = true;
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(FedError::manifest(
            format!("clients[{}]", entry.client_id),
            "splits do not cover every sample",
        ));
    }
    Ok(())
}

pub fn load_federation(dir: &Path) -> Result<Federation> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| FedError::io(&path, e))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| FedError::manifest("<root>", e.to_string()))?;
    let manifest: Manifest = serde_path_to_error::deserialize(value).map_err(|e| {
        let field = e.path().to_string();
        FedError::manifest(if field == "." { "<root>".to_string() } else { field }, e.into_inner().to_string())
    })?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(FedError::manifest(
            "format_version",
            format!("unsupported version {}", manifest.format_version),
        ));
    }
    if manifest.master_seed != manifest.spec.master_seed {
        return Err(FedError::manifest("master_seed", "disagrees with spec.master_seed"));
    }
    if manifest.clients.len() != manifest.spec.clients() {
        return Err(FedError::manifest("clients", "count disagrees with spec.samples_per_client"));
    }
    let spec = &manifest.spec;
    let mut clients = Vec::new();
    for (k, entry) in manifest.clients.iter().enumerate() {
        let n = spec.samples_per_client[k];
        let want_images = vec![n, spec.channels, spec.height, spec.width];
        if entry.client_id != k {
            return Err(FedError::manifest(format!("clients[{k}].client_id"), "clients must be listed in order"));
        }
        if entry.images_shape != want_images {
            return Err(FedError::manifest(
                format!("clients[{k}].images_shape"),
                format!("{:?} does not match spec {:?}", entry.images_shape, want_images),
            ));
        }
        let want_targets = match spec.task {
            Task::Segmentation => vec![n, spec.height, spec.width],
            Task::Classification => vec![n],
        };
        if entry.targets_shape != want_targets {
            return Err(FedError::manifest(
                format!("clients[{k}].targets_shape"),
                format!("{:?} does not match spec {:?}", entry.targets_shape, want_targets),
            ));
        }
        check_indices(entry, n)?;
        let images = read_f64(&dir.join(images_file(k)), want_images.iter().product(), &format!("clients[{k}].images_shape"))?;
        let raw = read_f64(&dir.join(targets_file(k)), want_targets.iter().product(), &format!("clients[{k}].targets_shape"))?;
        let images = Tensor::new(want_images, images).map_err(|e| FedError::manifest(format!("clients[{k}].images"), e.to_string()))?;
        let targets = match spec.task {
            Task::Segmentation => Targets::Masks(
                Tensor::new(want_targets, raw).map_err(|e| FedError::manifest(format!("clients[{k}].targets"), e.to_string()))?,
            ),
            Task::Classification => {
                if raw.iter().any(|&v| v < 0.0 || v.fract() != 0.0 || v as usize >= spec.classes) {
                    return Err(FedError::manifest(format!("clients[{k}].targets"), "labels must be class indices"));
                }
                Targets::Labels(raw.into_iter().map(|v| v as usize).collect())
            }
        };
        clients.push(ClientDataset {
            client_id: k,
            images,
            targets,
            test: entry.test.clone(),
            train: entry.train.clone(),
            val: entry.val.clone(),
        });
    }
    Ok(Federation {
        spec: manifest.spec,
        profile: manifest.shift_profile,
        clients,
    })
}
