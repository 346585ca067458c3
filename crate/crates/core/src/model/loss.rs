use serde::{Deserialize, Serialize};

use crate::model::layers::{sigmoid, softplus};

/// Task loss, reduced by the mean over scored elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Binary cross-entropy on a single logit per position.
    BceLogits,
    /// Softmax cross-entropy over the output channels at each position.
    SoftmaxCe,
}

/// Loss and its gradient w.r.t. logits laid out as `[B, O, P]`;
/// `targets` holds one class index per `(b, p)` in row-major order.
pub(crate) fn loss_and_dlogits(
    kind: LossKind,
    logits: &[f64],
    batch: usize,
    outputs: usize,
    positions: usize,
    targets: &[usize],
) -> (f64, Vec<f64>) {
    let count = (batch * positions) as f64;
    let mut grad = vec![0.0; logits.len()];
    let mut total = 0.0;
    match kind {
        LossKind::BceLogits => {
            for b in 0..batch {
                for p in 0..positions {
                    let i = b * positions + p;
                    let z = logits[i];
                    let y = targets[i] as f64;
                    total += softplus(z) - y * z;
                    grad[i] = (sigmoid(z) - y) / count;
                }
            }
        }
        LossKind::SoftmaxCe => {
            let mut probs = vec![0.0; outputs];
            for b in 0..batch {
                for p in 0..positions {
                    let at = |o: usize| (b * outputs + o) * positions + p;
                    let max = (0..outputs).map(|o| logits[at(o)]).fold(f64::MIN, f64::max);
                    let mut denom = 0.0;
                    for (o, pr) in probs.iter_mut().enumerate() {
                        *pr = (logits[at(o)] - max).exp();
                        denom += *pr;
                    }
                    let y = targets[b * positions + p];
                    total += denom.ln() - (logits[at(y)] - max);
                    for (o, pr) in probs.iter().enumerate() {
                        let indicator = if o == y { 1.0 } else { 0.0 };
                        grad[at(o)] = (pr / denom - indicator) / count;
                    }
                }
            }
        }
    }
    (total / count, grad)
}

/// Hard labels per position from `[B, O, P]` logits.
pub(crate) fn predictions(
    kind: LossKind,
    logits: &[f64],
    batch: usize,
    outputs: usize,
    positions: usize,
) -> Vec<usize> {
    let mut out = Vec::with_capacity(batch * positions);
    for b in 0..batch {
        for p in 0..positions {
            let label = match kind {
                LossKind::BceLogits => usize::from(logits[b * positions + p] > 0.0),
                LossKind::SoftmaxCe => {
                    let mut best = 0;
                    for o in 1..outputs {
                        if logits[(b * outputs + o) * positions + p]
                            > logits[(b * outputs + best) * positions + p]
                        {
                            best = o;
                        }
                    }
                    best
                }
            };
            out.push(label);
        }
    }
    out
}
