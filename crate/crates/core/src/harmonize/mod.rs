//! Client-side input transformations that pull every client's appearance
//! towards a shared reference.

mod augment;
mod bank;
mod emit;
mod mixstyle;
mod ops;
mod plugin;

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};
use crate::model::Batch;
use crate::numerics::{RngStream, Tensor};
use crate::synthdata::{ClientDataset, Federation};

pub use augment::{apply_augment, augment_batch, hflip, rot90, vflip, AugmentParams};
pub use bank::{build_reference_bank, RefMode, ReferenceBank, ReferenceOptions};
pub use emit::{write_difference_panel, write_pgm};
pub use mixstyle::{apply_mixstyle_input, apply_mixstyle_input_with, feature_mixstyle_hook, FeatureMixStyle};
pub(crate) use mixstyle::mix_features;
pub use ops::{amplified_difference, apply_adain, apply_fda, apply_hist_match, fda_half_width, fda_unclipped};
pub use plugin::{apply_plugin, HarmonizerPlugin, NoopPlugin, PluginRegistry};

/// Floor on standard deviations in statistic-transfer operations.
pub const STD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", try_from = "RawKind")]
pub enum HarmonizeKind {
    #[default]
    None,
    Augment,
    HistSri,
    HistAri,
    FdaSri {
        beta: f64,
    },
    MixstyleInput {
        alpha: f64,
    },
    MixstyleFeature {
        alpha: f64,
        /// Overrides the model's hook layer when set.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        layer_tag: Option<String>,
    },
    Adain,
    Plugin {
        name: String,
    },
}

/// Flat form used for parsing, so that a knob given to the wrong kind is
/// rejected instead of ignored.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawKind {
    kind: String,
    beta: Option<f64>,
    alpha: Option<f64>,
    layer_tag: Option<String>,
    name: Option<String>,
}

impl TryFrom<RawKind> for HarmonizeKind {
    type Error = String;

    fn try_from(raw: RawKind) -> std::result::Result<Self, String> {
        let given = [
            ("beta", raw.beta.is_some()),
            ("alpha", raw.alpha.is_some()),
            ("layer_tag", raw.layer_tag.is_some()),
            ("name", raw.name.is_some()),
        ];
        let allowed: &[&str] = match raw.kind.as_str() {
            "fda_sri" => &["beta"],
            "mixstyle_input" => &["alpha"],
            "mixstyle_feature" => &["alpha", "layer_tag"],
            "plugin" => &["name"],
            k if Self::KINDS.contains(&k) => &[],
            k => return Err(format!("unknown harmonize kind `{k}`, expected one of {:?}", Self::KINDS)),
        };
        if let Some((field, _)) = given.iter().find(|(f, set)| *set && !allowed.contains(f)) {
            return Err(format!("field `{field}` does not apply to harmonize kind `{}`", raw.kind));
        }
        let missing = |f: &str| format!("harmonize kind `{}` needs `{f}`", raw.kind);
        Ok(match raw.kind.as_str() {
            "none" => HarmonizeKind::None,
            "augment" => HarmonizeKind::Augment,
            "hist_sri" => HarmonizeKind::HistSri,
            "hist_ari" => HarmonizeKind::HistAri,
            "adain" => HarmonizeKind::Adain,
            "fda_sri" => HarmonizeKind::FdaSri {
                beta: raw.beta.ok_or_else(|| missing("beta"))?,
            },
            "mixstyle_input" => HarmonizeKind::MixstyleInput {
                alpha: raw.alpha.ok_or_else(|| missing("alpha"))?,
            },
            "mixstyle_feature" => HarmonizeKind::MixstyleFeature {
                alpha: raw.alpha.ok_or_else(|| missing("alpha"))?,
                layer_tag: raw.layer_tag,
            },
            _ => HarmonizeKind::Plugin {
                name: raw.name.ok_or_else(|| missing("name"))?,
            },
        })
    }
}

impl HarmonizeKind {
    pub const KINDS: [&'static str; 9] = [
        "none",
        "augment",
        "hist_sri",
        "hist_ari",
        "fda_sri",
        "mixstyle_input",
        "mixstyle_feature",
        "adain",
        "plugin",
    ];

    /// Row label used in result tables.
    pub fn label(&self) -> String {
        match self {
            HarmonizeKind::None => "none".into(),
            HarmonizeKind::Augment => "augment".into(),
            HarmonizeKind::HistSri => "hist_sri".into(),
            HarmonizeKind::HistAri => "hist_ari".into(),
            HarmonizeKind::FdaSri { .. } => "fda_sri".into(),
            HarmonizeKind::MixstyleInput { .. } => "mixstyle_input".into(),
            HarmonizeKind::MixstyleFeature { .. } => "mixstyle_feature".into(),
            HarmonizeKind::Adain => "adain".into(),
            HarmonizeKind::Plugin { name } => format!("plugin:{name}"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            HarmonizeKind::FdaSri { beta } if !(0.0..=0.5).contains(beta) => {
                Err(FedError::config("harmonize.beta", format!("{beta} is outside [0, 0.5]")))
            }
            HarmonizeKind::MixstyleInput { alpha } | HarmonizeKind::MixstyleFeature { alpha, .. }
                if !(*alpha > 0.0 && alpha.is_finite()) =>
            {
                Err(FedError::config("harmonize.alpha", format!("{alpha} must be positive")))
            }
            _ => Ok(()),
        }
    }

    fn reference_mode(&self) -> Option<RefMode> {
        match self {
            HarmonizeKind::HistAri => Some(RefMode::Ari),
            HarmonizeKind::HistSri | HarmonizeKind::FdaSri { .. } | HarmonizeKind::Adain => Some(RefMode::Sri),
            HarmonizeKind::MixstyleInput { .. } => Some(RefMode::Ari),
            _ => None,
        }
    }
}

/// A harmonization method bound to a federation: the reference bank it
/// needs, plus any plugin.
#[derive(Clone)]
pub struct Harmonizer {
    pub kind: HarmonizeKind,
    bank: Option<ReferenceBank>,
    plugin: Option<Arc<dyn HarmonizerPlugin>>,
    augment: AugmentParams,
}

impl Harmonizer {
    pub fn identity() -> Self {
        Harmonizer {
            kind: HarmonizeKind::None,
            bank: None,
            plugin: None,
            augment: AugmentParams::disabled(),
        }
    }

    pub fn new(
        kind: &HarmonizeKind,
        fed: &Federation,
        reference: &ReferenceOptions,
        augment: &AugmentParams,
        registry: &PluginRegistry,
    ) -> Result<Self> {
        kind.validate()?;
        let bank = match kind.reference_mode() {
            Some(mode) => Some(build_reference_bank(fed, mode, reference)?),
            None => None,
        };
        let plugin = match kind {
            HarmonizeKind::Plugin { name } => Some(registry.get(name)?),
            _ => None,
        };
        Ok(Harmonizer {
            kind: kind.clone(),
            bank,
            plugin,
            augment: augment.clone(),
        })
    }

    pub fn bank(&self) -> Option<&ReferenceBank> {
        self.bank.as_ref()
    }

    /// Deterministic per-image transform `T_k`, applied to every split.
    /// Stochastic training-time methods are the identity here.
    pub fn transform_image(&self, x: &Tensor, client: usize) -> Result<Tensor> {
        let reference = || self.bank.as_ref().expect("bank built for this kind").reference();
        match &self.kind {
            HarmonizeKind::HistSri | HarmonizeKind::HistAri => apply_hist_match(x, reference()),
            HarmonizeKind::FdaSri { beta } => apply_fda(x, reference(), *beta),
            HarmonizeKind::Adain => apply_adain(x, reference()),
            HarmonizeKind::Plugin { .. } => apply_plugin(self.plugin.as_deref().expect("plugin resolved"), x, client),
            _ => Ok(x.clone()),
        }
    }

    pub fn is_static(&self) -> bool {
        matches!(
            self.kind,
            HarmonizeKind::HistSri
                | HarmonizeKind::HistAri
                | HarmonizeKind::FdaSri { .. }
                | HarmonizeKind::Adain
                | HarmonizeKind::Plugin { .. }
        )
    }

    /// Applies `T_k` to all of a client's images; targets are untouched.
    pub fn transform_dataset(&self, ds: &ClientDataset) -> Result<ClientDataset> {
        if !self.is_static() {
            return Ok(ds.clone());
        }
        let images: Vec<Tensor> = (0..ds.len())
            .into_par_iter()
            .map(|i| self.transform_image(&ds.image(i), ds.client_id))
            .collect::<Result<_>>()?;
        Ok(ClientDataset {
            images: Tensor::stack(&images)?,
            ..ds.clone()
        })
    }

    /// Training-time randomisation of a minibatch (augmentation, input
    /// MixStyle against a random client's representative).
    pub fn train_batch(&self, batch: Batch, dense_targets: bool, rng: &mut RngStream) -> Batch {
        match &self.kind {
            HarmonizeKind::Augment => augment_batch(&batch, dense_targets, &self.augment, rng),
            HarmonizeKind::MixstyleInput { alpha } => {
                let bank = self.bank.as_ref().expect("bank built for mixstyle");
                let images: Vec<Tensor> = (0..batch.len())
                    .map(|i| {
                        let reps = &bank.representatives[rng.below(bank.representatives.len())];
                        let peer = &reps[rng.below(reps.len())];
                        apply_mixstyle_input(&batch.inputs.slice0(i), peer, *alpha, rng)
                    })
                    .collect();
                Batch {
                    inputs: Tensor::stack(&images).expect("equal shapes"),
                    targets: batch.targets,
                }
            }
            _ => batch,
        }
    }

    /// `(alpha, layer override)` when feature-level MixStyle is active.
    pub fn feature_mixstyle(&self) -> Option<(f64, Option<&str>)> {
        match &self.kind {
            HarmonizeKind::MixstyleFeature { alpha, layer_tag } => Some((*alpha, layer_tag.as_deref())),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_parses_from_json() {
        let k: HarmonizeKind = serde_json::from_str(r#"{"kind":"fda_sri","beta":0.1}"#).unwrap();
        assert_eq!(k, HarmonizeKind::FdaSri { beta: 0.1 });
        assert!(serde_json::from_str::<HarmonizeKind>(r#"{"kind":"adain","beta":0.1}"#).is_err());
        assert!(HarmonizeKind::FdaSri { beta: 0.7 }.validate().is_err());
        assert!(HarmonizeKind::MixstyleInput { alpha: 0.0 }.validate().is_err());
    }
}
