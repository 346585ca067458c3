use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};

fn d_mu() -> f64 {
    0.01
}
fn d_eta() -> f64 {
    0.1
}
fn d_beta1() -> f64 {
    0.9
}
fn d_beta2() -> f64 {
    0.99
}
fn d_tau() -> f64 {
    1e-3
}
fn d_head_epochs() -> usize {
    1
}
fn d_pfedme_lambda() -> f64 {
    15.0
}
fn d_inner_steps() -> usize {
    5
}
fn d_inner_lr() -> f64 {
    0.05
}
fn d_ditto_lambda() -> f64 {
    0.1
}
fn d_post_epochs() -> usize {
    5
}

/// Federated optimisation / personalisation algorithm and its knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", try_from = "RawStrategy")]
pub enum StrategyKind {
    Fedavg,
    Fedprox {
        mu: f64,
    },
    Scaffold,
    Fedadam {
        eta: f64,
        beta1: f64,
        beta2: f64,
        tau: f64,
    },
    Fedper,
    Fedrep {
        head_epochs: usize,
    },
    Fedbn,
    Pfedme {
        lambda: f64,
        inner_steps: usize,
        inner_lr: f64,
    },
    Ditto {
        lambda: f64,
    },
    Finetune {
        post_epochs: usize,
    },
}

/// Flat parsing form: knobs that do not belong to the named strategy are
/// errors rather than silently ignored.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStrategy {
    name: String,
    mu: Option<f64>,
    eta: Option<f64>,
    beta1: Option<f64>,
    beta2: Option<f64>,
    tau: Option<f64>,
    head_epochs: Option<usize>,
    lambda: Option<f64>,
    inner_steps: Option<usize>,
    inner_lr: Option<f64>,
    post_epochs: Option<usize>,
}

impl TryFrom<RawStrategy> for StrategyKind {
    type Error = String;

    fn try_from(r: RawStrategy) -> std::result::Result<Self, String> {
        let given = [
            ("mu", r.mu.is_some()),
            ("eta", r.eta.is_some()),
            ("beta1", r.beta1.is_some()),
            ("beta2", r.beta2.is_some()),
            ("tau", r.tau.is_some()),
            ("head_epochs", r.head_epochs.is_some()),
            ("lambda", r.lambda.is_some()),
            ("inner_steps", r.inner_steps.is_some()),
            ("inner_lr", r.inner_lr.is_some()),
            ("post_epochs", r.post_epochs.is_some()),
        ];
        let (kind, allowed): (StrategyKind, &[&str]) = match r.name.as_str() {
            "fedavg" => (StrategyKind::Fedavg, &[]),
            "fedprox" => (StrategyKind::Fedprox { mu: r.mu.unwrap_or_else(d_mu) }, &["mu"]),
            "scaffold" => (StrategyKind::Scaffold, &[]),
            "fedadam" => (
                StrategyKind::Fedadam {
                    eta: r.eta.unwrap_or_else(d_eta),
                    beta1: r.beta1.unwrap_or_else(d_beta1),
                    beta2: r.beta2.unwrap_or_else(d_beta2),
                    tau: r.tau.unwrap_or_else(d_tau),
                },
                &["eta", "beta1", "beta2", "tau"],
            ),
            "fedper" => (StrategyKind::Fedper, &[]),
            "fedrep" => (
                StrategyKind::Fedrep {
                    head_epochs: r.head_epochs.unwrap_or_else(d_head_epochs),
                },
                &["head_epochs"],
            ),
            "fedbn" => (StrategyKind::Fedbn, &[]),
            "pfedme" => (
                StrategyKind::Pfedme {
                    lambda: r.lambda.unwrap_or_else(d_pfedme_lambda),
                    inner_steps: r.inner_steps.unwrap_or_else(d_inner_steps),
                    inner_lr: r.inner_lr.unwrap_or_else(d_inner_lr),
                },
                &["lambda", "inner_steps", "inner_lr"],
            ),
            "ditto" => (
                StrategyKind::Ditto {
                    lambda: r.lambda.unwrap_or_else(d_ditto_lambda),
                },
                &["lambda"],
            ),
            "finetune" => (
                StrategyKind::Finetune {
                    post_epochs: r.post_epochs.unwrap_or_else(d_post_epochs),
                },
                &["post_epochs"],
            ),
            other => return Err(format!("unknown strategy `{other}`, expected one of {:?}", Self::NAMES)),
        };
        if let Some((field, _)) = given.iter().find(|(f, set)| *set && !allowed.contains(f)) {
            return Err(format!("field `{field}` does not apply to strategy `{}`", r.name));
        }
        Ok(kind)
    }
}

impl StrategyKind {
    pub const NAMES: [&'static str; 10] = [
        "fedavg", "fedprox", "scaffold", "fedadam", "fedper", "fedrep", "fedbn", "pfedme", "ditto", "finetune",
    ];

    pub fn name(&self) -> &'static str {
        match self {
            StrategyKind::Fedavg => "fedavg",
            StrategyKind::Fedprox { .. } => "fedprox",
            StrategyKind::Scaffold => "scaffold",
            StrategyKind::Fedadam { .. } => "fedadam",
            StrategyKind::Fedper => "fedper",
            StrategyKind::Fedrep { .. } => "fedrep",
            StrategyKind::Fedbn => "fedbn",
            StrategyKind::Pfedme { .. } => "pfedme",
            StrategyKind::Ditto { .. } => "ditto",
            StrategyKind::Finetune { .. } => "finetune",
        }
    }

    pub fn fedadam_default() -> Self {
        StrategyKind::Fedadam {
            eta: d_eta(),
            beta1: d_beta1(),
            beta2: d_beta2(),
            tau: d_tau(),
        }
    }

    /// Whether evaluation uses a per-client model rather than the global one.
    pub fn is_personalized(&self) -> bool {
        !matches!(
            self,
            StrategyKind::Fedavg | StrategyKind::Fedprox { .. } | StrategyKind::Scaffold | StrategyKind::Fedadam { .. }
        )
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(FedError::config(format!("strategy.{field}"), msg));
        match *self {
            StrategyKind::Fedprox { mu } if !(mu >= 0.0 && mu.is_finite()) => bad("mu", format!("{mu} must be >= 0")),
            StrategyKind::Fedadam { eta, beta1, beta2, tau } => {
                if !(eta > 0.0) {
                    bad("eta", format!("{eta} must be > 0"))
                } else if !(0.0..1.0).contains(&beta1) {
                    bad("beta1", format!("{beta1} must lie in [0, 1)"))
                } else if !(0.0..1.0).contains(&beta2) {
                    bad("beta2", format!("{beta2} must lie in [0, 1)"))
                } else if !(tau > 0.0) {
                    bad("tau", format!("{tau} must be > 0"))
                } else {
                    Ok(())
                }
            }
            StrategyKind::Pfedme { lambda, inner_steps, inner_lr } => {
                if !(lambda >= 0.0 && lambda.is_finite()) {
                    bad("lambda", format!("{lambda} must be >= 0"))
                } else if inner_steps == 0 {
                    bad("inner_steps", "must be >= 1".into())
                } else if !(inner_lr > 0.0) {
                    bad("inner_lr", format!("{inner_lr} must be > 0"))
                } else {
                    Ok(())
                }
            }
            StrategyKind::Ditto { lambda } if !(lambda >= 0.0 && lambda.is_finite()) => {
                bad("lambda", format!("{lambda} must be >= 0"))
            }
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_name_lists_valid_kinds() {
        let err = serde_json::from_str::<StrategyKind>(r#"{"name":"fedsgd"}"#).unwrap_err().to_string();
        assert!(err.contains("fedavg") && err.contains("finetune"), "{err}");
    }

    #[test]
    fn knobs_of_other_strategies_are_rejected() {
        let err = serde_json::from_str::<StrategyKind>(r#"{"name":"fedavg","mu":0.1}"#).unwrap_err().to_string();
        assert!(err.contains("mu"), "{err}");
    }

    #[test]
    fn defaults_fill_missing_knobs() {
        let k: StrategyKind = serde_json::from_str(r#"{"name":"fedadam"}"#).unwrap();
        assert_eq!(k, StrategyKind::fedadam_default());
    }
}
