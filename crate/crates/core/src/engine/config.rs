use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{FedError, Result};
use crate::harmonize::{AugmentParams, HarmonizeKind, ReferenceOptions};
use crate::metrics::{Averaging, SegReduction};
use crate::model::{Arch, LossKind, ModelSpec};
use crate::strategies::{LocalConfig, StrategyKind};
use crate::synthdata::{FederationSpec, Task};

/// Reference protocols that need no strategy choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    /// Each client trains alone and is tested on its own data.
    LocalCentralized,
    /// One model on pooled training data, tested on pooled test data.
    CentralGlobal,
    /// One model on pooled training data, tested per client.
    CentralLocal,
    /// FedAvg model tested on pooled test data.
    FedavgGlobal,
    /// FedAvg model tested per client.
    FedavgLocal,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 5] = [
        BaselineKind::LocalCentralized,
        BaselineKind::CentralGlobal,
        BaselineKind::CentralLocal,
        BaselineKind::FedavgGlobal,
        BaselineKind::FedavgLocal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::LocalCentralized => "local_centralized",
            BaselineKind::CentralGlobal => "central_global",
            BaselineKind::CentralLocal => "central_local",
            BaselineKind::FedavgGlobal => "fedavg_global",
            BaselineKind::FedavgLocal => "fedavg_local",
        }
    }

    pub fn globally_tested(self) -> bool {
        matches!(self, BaselineKind::CentralGlobal | BaselineKind::FedavgGlobal)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub arch: Arch,
    #[serde(default = "default_hidden")]
    pub hidden: [usize; 2],
    /// Defaults to `bce_logits` for two classes, else `softmax_ce`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<LossKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hook_layer: Option<String>,
}

fn default_hidden() -> [usize; 2] {
    [32, 32]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub seg_reduction: SegReduction,
    pub averaging: Averaging,
    /// Also test a shared model on pooled data (strategy runs only).
    pub global: bool,
    /// Score every client's validation split after each round.
    pub round_metrics: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            seg_reduction: SegReduction::ImageMean,
            averaging: Averaging::Macro,
            global: false,
            round_metrics: true,
        }
    }
}

/// One experiment: a federation, a model, one method and a schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Federation layout; its `master_seed` is replaced by `seed`.
    pub federation: FederationSpec,
    pub model: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<StrategyKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<BaselineKind>,
    #[serde(default)]
    pub harmonize: HarmonizeKind,
    #[serde(default)]
    pub reference: ReferenceOptions,
    #[serde(default)]
    pub augment: AugmentParams,
    /// Allows harmonization together with a personalised strategy.
    #[serde(default)]
    pub combine: bool,
    pub rounds: usize,
    #[serde(default = "default_epochs")]
    pub local_epochs: usize,
    pub lr: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub eval: EvalConfig,
    /// A run is reported as diverged once any parameter (or running
    /// statistic) is non-finite or exceeds this magnitude.
    #[serde(default = "default_divergence_bound")]
    pub divergence_bound: f64,
}

fn default_divergence_bound() -> f64 {
    1e6
}

fn default_epochs() -> usize {
    1
}

fn default_batch() -> usize {
    32
}

impl ExperimentConfig {
    pub fn federation_spec(&self) -> FederationSpec {
        FederationSpec {
            master_seed: self.seed,
            ..self.federation.clone()
        }
    }

    pub fn local(&self) -> LocalConfig {
        LocalConfig {
            epochs: self.local_epochs,
            lr: self.lr,
            batch_size: self.batch_size,
        }
    }

    pub fn model_spec(&self) -> ModelSpec {
        let f = &self.federation;
        let loss = self.model.loss.unwrap_or(if f.classes == 2 {
            LossKind::BceLogits
        } else {
            LossKind::SoftmaxCe
        });
        let outputs = match loss {
            LossKind::BceLogits => 1,
            LossKind::SoftmaxCe => f.classes,
        };
        let default_hook = match self.model.arch {
            Arch::Logreg => "input",
            Arch::MlpBn => "fc1",
            Arch::TinyConvseg => "enc1",
        };
        let hook = match &self.harmonize {
            HarmonizeKind::MixstyleFeature { layer_tag: Some(t), .. } => t.clone(),
            _ => self.model.hook_layer.clone().unwrap_or_else(|| default_hook.to_string()),
        };
        ModelSpec {
            arch: self.model.arch,
            channels: f.channels,
            height: f.height,
            width: f.width,
            outputs,
            hidden: self.model.hidden,
            loss,
            hook_layer: hook,
        }
    }

    /// Row label: the baseline, the harmonization method (on FedAvg), the
    /// strategy, or `strategy+harmonization` when combined.
    pub fn method_label(&self) -> String {
        if let Some(b) = self.baseline {
            return match self.harmonize {
                HarmonizeKind::None => b.name().to_string(),
                ref h => format!("{}+{}", b.name(), h.label()),
            };
        }
        let s = self.strategy.as_ref().map(StrategyKind::name).unwrap_or("none");
        match (&self.harmonize, s) {
            (HarmonizeKind::None, s) => s.to_string(),
            (h, "fedavg") => h.label(),
            (h, s) => format!("{s}+{}", h.label()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.federation.validate()?;
        match (&self.strategy, self.baseline) {
            (None, None) => {
                return Err(FedError::config("strategy", "set either `strategy` or `baseline`"));
            }
            (Some(_), Some(_)) => {
                return Err(FedError::config("baseline", "`strategy` and `baseline` are mutually exclusive"));
            }
            (Some(s), None) => s.validate()?,
            _ => {}
        }
        self.harmonize.validate()?;
        if let Some(s) = &self.strategy {
            if s.is_personalized() && self.harmonize != HarmonizeKind::None && !self.combine {
                return Err(FedError::config(
                    "combine",
                    format!(
                        "harmonization `{}` with personalised strategy `{}` requires `combine: true`",
                        self.harmonize.label(),
                        s.name()
                    ),
                ));
            }
        }
        if self.rounds == 0 {
            return Err(FedError::config("rounds", "must be at least 1"));
        }
        if self.local_epochs == 0 {
            return Err(FedError::config("local_epochs", "must be at least 1"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(FedError::config("lr", format!("{} must be a finite non-negative number", self.lr)));
        }
        if !(self.divergence_bound > 0.0) {
            return Err(FedError::config("divergence_bound", format!("{} must be positive", self.divergence_bound)));
        }
        if self.batch_size == 0 {
            return Err(FedError::config("batch_size", "must be at least 1"));
        }
        let task_arch_ok = match self.federation.task {
            Task::Segmentation => self.model.arch == Arch::TinyConvseg,
            Task::Classification => self.model.arch != Arch::TinyConvseg,
        };
        if !task_arch_ok {
            return Err(FedError::config(
                "model.arch",
                format!("{:?} does not fit a {:?} task", self.model.arch, self.federation.task),
            ));
        }
        self.model_spec().validate()
    }

    /// SHA-256 over the canonical JSON serialisation.
    pub fn config_hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serialises");
        hex(Sha256::digest(text.as_bytes()).as_slice())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Communication budgets (rounds, local epochs) must agree across a suite.
pub fn check_budget_parity(configs: &[&ExperimentConfig]) -> Result<()> {
    let Some(first) = configs.first() else {
        return Ok(());
    };
    for c in configs {
        if c.rounds != first.rounds || c.local_epochs != first.local_epochs {
            return Err(FedError::config(
                "rounds",
                format!(
                    "mixed communication budgets in one suite: R={}, E={} vs R={}, E={} ({})",
                    first.rounds,
                    first.local_epochs,
                    c.rounds,
                    c.local_epochs,
                    c.method_label()
                ),
            ));
        }
    }
    Ok(())
}
