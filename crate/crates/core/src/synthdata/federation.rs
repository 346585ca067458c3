use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{FedError, Result};
use crate::model::Batch;
use crate::numerics::{RngStream, Tensor};
use crate::synthdata::profile::ShiftProfile;
use crate::synthdata::render::{render_cls_clean, render_seg_clean, style_transform};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Segmentation,
    Classification,
}

/// Everything needed to regenerate a federation bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederationSpec {
    pub task: Task,
    /// Total samples per client (test + train + validation).
    pub samples_per_client: Vec<usize>,
    /// Explicit test-split sizes; defaults to `floor(N / 10)` per client.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_counts: Option<Vec<usize>>,
    pub height: usize,
    pub width: usize,
    #[serde(default = "default_channels")]
    pub channels: usize,
    /// Number of classes (classification) or 2 (segmentation).
    #[serde(default = "default_classes")]
    pub classes: usize,
    pub delta_style: f64,
    pub delta_content: f64,
    #[serde(default)]
    pub master_seed: u64,
}

fn default_channels() -> usize {
    1
}

fn default_classes() -> usize {
    2
}

impl FederationSpec {
    pub fn clients(&self) -> usize {
        self.samples_per_client.len()
    }

    /// SHA-256 (hex) of the canonical JSON form; names cached datasets.
    pub fn content_hash(&self) -> String {
        let text = serde_json::to_string(self).expect("spec serialises");
        crate::engine::hex(Sha256::digest(text.as_bytes()).as_slice())
    }

    pub fn profile(&self) -> ShiftProfile {
        ShiftProfile::new(self.delta_style, self.delta_content, self.clients(), self.classes)
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples_per_client.is_empty() {
            return Err(FedError::config("federation.samples_per_client", "need at least one client"));
        }
        for (name, d) in [("federation.delta_style", self.delta_style), ("federation.delta_content", self.delta_content)] {
            if !(0.0..=1.0).contains(&d) {
                return Err(FedError::config(name, format!("{d} is outside [0, 1]")));
            }
        }
        if self.height < 4 || self.width < 4 || self.channels == 0 {
            return Err(FedError::config("federation.height", "images must be at least 4x4 with one channel"));
        }
        if self.classes < 2 || (self.task == Task::Segmentation && self.classes != 2) {
            return Err(FedError::config("federation.classes", "segmentation is binary; classification needs >= 2 classes"));
        }
        if let Some(t) = &self.test_counts {
            if t.len() != self.clients() {
                return Err(FedError::config("federation.test_counts", "one entry per client required"));
            }
        }
        for k in 0..self.clients() {
            let (test, train, val) = split_sizes(self.samples_per_client[k], self.test_count(k));
            if test == 0 || train == 0 || val == 0 {
                return Err(FedError::config(
                    "federation.samples_per_client",
                    format!(
                        "client {k}: {} samples give empty splits (test {test}, train {train}, val {val})",
                        self.samples_per_client[k]
                    ),
                ));
            }
        }
        Ok(())
    }

    fn test_count(&self, k: usize) -> usize {
        match &self.test_counts {
            Some(t) => t[k],
            None => self.samples_per_client[k] / 10,
        }
    }
}

/// `(test, train, val)` sizes: train takes `floor(85%)` of what remains
/// after the test split.
pub fn split_sizes(total: usize, test: usize) -> (usize, usize, usize) {
    let rem = total.saturating_sub(test);
    let train = rem * 85 / 100;
    (test.min(total), train, rem - train)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    /// Binary masks `[N, H, W]` with values in {0, 1}.
    Masks(Tensor),
    Labels(Vec<usize>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Masks(m) => m.shape()[0],
            Targets::Labels(l) => l.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Per-position class indices for the given samples.
    pub fn gather(&self, indices: &[usize]) -> Vec<usize> {
        match self {
            Targets::Labels(l) => indices.iter().map(|&i| l[i]).collect(),
            Targets::Masks(m) => {
                let per = m.numel() / m.shape()[0];
                indices
                    .iter()
                    .flat_map(|&i| m.data()[i * per..(i + 1) * per].iter().map(|&v| usize::from(v > 0.5)))
                    .collect()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset {
    pub client_id: usize,
    /// `[N, C, H, W]`, values in `[0, 1]`.
    pub images: Tensor,
    pub targets: Targets,
    pub test: Vec<usize>,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

impl ClientDataset {
    pub fn len(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn indices(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn image(&self, i: usize) -> Tensor {
        self.images.slice0(i)
    }

    pub fn batch(&self, indices: &[usize]) -> Batch {
        Batch {
            inputs: self.images.gather0(indices),
            targets: self.targets.gather(indices),
        }
    }

    pub fn split_batch(&self, split: Split) -> Batch {
        self.batch(self.indices(split))
    }
}

/// A generated federation: the spec it came from, the induced shift
/// profile and one dataset per client.
#[derive(Debug, Clone, PartialEq)]
pub struct Federation {
    pub spec: FederationSpec,
    pub profile: ShiftProfile,
    pub clients: Vec<ClientDataset>,
}

impl Federation {
    /// Aggregation weights `p_k = n_train_k / sum_j n_train_j`.
    pub fn weights(&self) -> Vec<f64> {
        let total: usize = self.clients.iter().map(|c| c.train.len()).sum();
        self.clients.iter().map(|c| c.train.len() as f64 / total as f64).collect()
    }
}

/// Deterministic split of `0..total`: the test set depends only on the
/// seed, the client and the sizes; train/val partition the remainder.
/// Each list is sorted ascending.
pub fn split_indices(master_seed: u64, client: usize, total: usize, test: usize) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let (test, train, _) = split_sizes(total, test);
    let perm = RngStream::new(master_seed, client as u64, 0, "split:test").permutation(total);
    let mut test_idx = perm[..test].to_vec();
    let mut rest = perm[test..].to_vec();
    rest.sort_unstable();
    RngStream::new(master_seed, client as u64, 0, "split:trainval").shuffle(&mut rest);
    let mut train_idx = rest[..train].to_vec();
    let mut val_idx = rest[train..].to_vec();
    test_idx.sort_unstable();
    train_idx.sort_unstable();
    val_idx.sort_unstable();
    (test_idx, train_idx, val_idx)
}

fn render_sample(spec: &FederationSpec, profile: &ShiftProfile, k: usize, i: usize) -> (Vec<f64>, Vec<f64>) {
    let mut content_rng = RngStream::new(spec.master_seed, k as u64, i as u64, "content");
    let mut style_rng = RngStream::new(spec.master_seed, k as u64, i as u64, "style");
    let content = &profile.content[k];
    let (h, w) = (spec.height, spec.width);
    match spec.task {
        Task::Segmentation => {
            let (clean, mask) = render_seg_clean(content, h, w, &mut content_rng);
            let img = style_transform(&clean, spec.channels, &profile.style[k], &mut style_rng);
            (img.into_data(), mask.into_iter().map(|m| if m { 1.0 } else { 0.0 }).collect())
        }
        Task::Classification => {
            let label = content_rng.categorical(&content.class_prior);
            let clean = render_cls_clean(label, content, h, w, &mut content_rng);
            let img = style_transform(&clean, spec.channels, &profile.style[k], &mut style_rng);
            (img.into_data(), vec![label as f64])
        }
    }
}

/// Renders client `k`'s dataset. Every sample draws content and style from
/// its own streams, so samples are independent of evaluation order.
pub fn make_client(spec: &FederationSpec, profile: &ShiftProfile, k: usize) -> ClientDataset {
    let n = spec.samples_per_client[k];
    let rendered: Vec<(Vec<f64>, Vec<f64>)> = (0..n).into_par_iter().map(|i| render_sample(spec, profile, k, i)).collect();
    let (c, h, w) = (spec.channels, spec.height, spec.width);
    let mut images = Vec::with_capacity(n * c * h * w);
    let mut targets = Vec::with_capacity(n * h * w);
    for (img, t) in rendered {
        images.extend(img);
        targets.extend(t);
    }
    let targets = match spec.task {
        Task::Segmentation => Targets::Masks(Tensor::from_parts(vec![n, h, w], targets)),
        Task::Classification => Targets::Labels(targets.into_iter().map(|v| v as usize).collect()),
    };
    let (test, train, val) = split_indices(spec.master_seed, k, n, spec.test_count(k));
    ClientDataset {
        client_id: k,
        images: Tensor::from_parts(vec![n, c, h, w], images),
        targets,
        test,
        train,
        val,
    }
}

pub fn make_federation(spec: &FederationSpec) -> Result<Federation> {
    spec.validate()?;
    let profile = spec.profile();
    let clients = (0..spec.clients()).map(|k| make_client(spec, &profile, k)).collect();
    Ok(Federation {
        spec: spec.clone(),
        profile,
        clients,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes_examples() {
        assert_eq!(split_sizes(1000, 100), (100, 765, 135));
        let totals = [1000, 196, 380, 612];
        let tests = [100, 19, 38, 60];
        let trains: Vec<usize> = totals.iter().zip(&tests).map(|(&n, &t)| split_sizes(n, t).1).collect();
        assert_eq!(trains, vec![765, 150, 290, 469]);
    }

    #[test]
    fn splits_partition_indices() {
        let (te, tr, va) = split_indices(5, 2, 137, 13);
        let mut all: Vec<usize> = te.iter().chain(&tr).chain(&va).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..137).collect::<Vec<_>>());
        assert_eq!((te.len(), tr.len(), va.len()), (13, 105, 19));
    }
}
