use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};
use crate::numerics::{RngStream, Tensor};
use crate::synthdata::Federation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefMode {
    /// Single representative image.
    Sri,
    /// Average representative image.
    Ari,
}

/// How references are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReferenceOptions {
    /// Client whose training image serves as the single reference.
    pub client: usize,
    /// Images averaged per client for the average reference.
    pub per_client: usize,
}

impl Default for ReferenceOptions {
    fn default() -> Self {
        ReferenceOptions { client: 0, per_client: 1 }
    }
}

/// Reference images drawn from training splits only.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceBank {
    pub mode: RefMode,
    pub source_client: usize,
    pub sri_image: Tensor,
    pub ari_image: Tensor,
    /// Representatives per client (`per_client` each), in client order.
    pub representatives: Vec<Vec<Tensor>>,
}

impl ReferenceBank {
    pub fn reference(&self) -> &Tensor {
        match self.mode {
            RefMode::Sri => &self.sri_image,
            RefMode::Ari => &self.ari_image,
        }
    }

    pub fn with_mode(mut self, mode: RefMode) -> Self {
        self.mode = mode;
        self
    }
}

/// Client `k` draws its representatives from stream `(k, 0, "reference")`;
/// the single reference is the first image drawn for the source client.
pub fn build_reference_bank(
    fed: &Federation,
    mode: RefMode,
    options: &ReferenceOptions,
) -> Result<ReferenceBank> {
    if options.client >= fed.clients.len() {
        return Err(FedError::config(
            "reference.client",
            format!("client {} does not exist ({} clients)", options.client, fed.clients.len()),
        ));
    }
    if options.per_client == 0 {
        return Err(FedError::config("reference.per_client", "must be at least 1"));
    }
    let master_seed = fed.spec.master_seed;
    let mut representatives = Vec::with_capacity(fed.clients.len());
    for c in &fed.clients {
        if c.train.is_empty() {
            return Err(FedError::Empty(format!("train split of client {}", c.client_id)));
        }
        let mut rng = RngStream::new(master_seed, c.client_id as u64, 0, "reference");
        let reps = (0..options.per_client)
            .map(|_| c.image(c.train[rng.below(c.train.len())]))
            .collect::<Vec<_>>();
        representatives.push(reps);
    }
    let sri_image = representatives[options.client][0].clone();
    let count = (fed.clients.len() * options.per_client) as f64;
    let mut acc = vec![0.0; sri_image.numel()];
    for t in representatives.iter().flatten() {
        for (a, v) in acc.iter_mut().zip(t.data()) {
            *a += v;
        }
    }
    let ari_image = Tensor::from_parts(sri_image.shape().to_vec(), acc.into_iter().map(|v| v / count).collect());
    Ok(ReferenceBank {
        mode,
        source_client: options.client,
        sri_image,
        ari_image,
        representatives,
    })
}
