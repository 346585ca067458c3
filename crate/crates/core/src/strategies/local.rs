use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};
use crate::model::{sgd_step_in_place, ParamSet, Partition};
use crate::numerics::{RngStream, Tensor};

/// Loss and gradient of one minibatch, plus refreshed normalisation
/// statistics when the model tracks them.
pub struct StepOut {
    pub loss: f64,
    pub grad: ParamSet,
    pub running_stats: Option<ParamSet>,
}

/// A client's training objective over its `train_len()` training samples.
pub trait Objective: Sync {
    fn train_len(&self) -> usize;
    /// `batch` holds positions `0..train_len()`. Any training-time
    /// randomness is drawn from `rng`.
    fn loss_grad(&self, theta: &ParamSet, batch: &[usize], rng: &mut RngStream) -> Result<StepOut>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

/// Where a local run is happening, for error reports.
#[derive(Debug, Clone, Copy)]
pub struct Ctx {
    pub round: usize,
    pub client: usize,
}

impl Ctx {
    pub(crate) fn diverged(&self, message: impl Into<String>) -> FedError {
        FedError::Divergence {
            round: self.round,
            client: Some(self.client),
            message: message.into(),
        }
    }
}

pub struct LocalRun {
    pub theta: ParamSet,
    pub steps: usize,
    pub mean_loss: f64,
}

/// Shuffled minibatches for one epoch. A trailing batch of a single sample
/// is dropped unless it is the only one (batch statistics need two).
pub fn epoch_batches(n: usize, batch_size: usize, rng: &mut RngStream) -> Vec<Vec<usize>> {
    let perm = rng.permutation(n);
    let mut out: Vec<Vec<usize>> = perm.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() < 2) {
        out.pop();
    }
    out
}

/// Adds `coef * (theta - anchor)` to every entry present in `grad`.
pub fn add_pull(grad: &mut ParamSet, theta: &ParamSet, anchor: &ParamSet, coef: f64) -> Result<()> {
    let names: Vec<String> = grad.names().map(str::to_string).collect();
    for name in names {
        let t = theta.get(&name).ok_or_else(|| FedError::KeyMismatch(name.clone()))?;
        let a = anchor.get(&name).ok_or_else(|| FedError::KeyMismatch(name.clone()))?;
        let g = grad.get_mut(&name).expect("listed");
        for ((gv, tv), av) in g.data_mut().iter_mut().zip(t.data()).zip(a.data()) {
            *gv += coef * (tv - av);
        }
    }
    Ok(())
}

/// Mini-batch SGD from `theta0`. Only entries whose tag is in `update` move;
/// `hook` may adjust each gradient before the step.
#[allow(clippy::too_many_arguments)]
pub fn local_sgd<H>(
    obj: &dyn Objective,
    theta0: &ParamSet,
    epochs: usize,
    cfg: &LocalConfig,
    update: &[Partition],
    rng: &mut RngStream,
    ctx: Ctx,
    mut hook: H,
) -> Result<LocalRun>
where
    H: FnMut(&ParamSet, &mut ParamSet) -> Result<()>,
{
    let n = obj.train_len();
    if n == 0 {
        return Err(FedError::Empty(format!("train split of client {}", ctx.client)));
    }
    let mut theta = theta0.clone();
    let mut steps = 0;
    let mut loss_sum = 0.0;
    for _ in 0..epochs {
        for batch in epoch_batches(n, cfg.batch_size, rng) {
            let out = obj.loss_grad(&theta, &batch, rng)?;
            if !out.loss.is_finite() {
                return Err(ctx.diverged(format!("non-finite loss after {steps} local steps")));
            }
            let mut grad = out.grad.filter(update);
            hook(&theta, &mut grad)?;
            sgd_step_in_place(&mut theta, &grad, cfg.lr)?;
            if let Some(stats) = out.running_stats {
                theta.overwrite_with(&stats);
            }
            if let Some(name) = theta.first_non_finite() {
                return Err(ctx.diverged(format!("parameter `{name}` became non-finite")));
            }
            loss_sum += out.loss;
            steps += 1;
        }
    }
    Ok(LocalRun {
        theta,
        steps,
        mean_loss: if steps > 0 { loss_sum / steps as f64 } else { f64::NAN },
    })
}

/// `f(theta) = sum_i (theta_i - a_i)^2` on a single body parameter `w`;
/// every minibatch sees the full objective.
pub struct QuadraticObjective {
    pub target: Vec<f64>,
    pub samples: usize,
}

impl QuadraticObjective {
    pub fn params(values: Vec<f64>) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("w", Partition::Body, Tensor::from_vec(values));
        p
    }

    pub fn loss(&self, theta: &ParamSet) -> f64 {
        let w = theta.get("w").expect("quadratic parameter");
        w.data().iter().zip(&self.target).map(|(x, a)| (x - a) * (x - a)).sum()
    }
}

impl Objective for QuadraticObjective {
    fn train_len(&self) -> usize {
        self.samples
    }

    fn loss_grad(&self, theta: &ParamSet, _batch: &[usize], _rng: &mut RngStream) -> Result<StepOut> {
        let w = theta.get("w").ok_or_else(|| FedError::KeyMismatch("w".into()))?;
        let g: Vec<f64> = w.data().iter().zip(&self.target).map(|(x, a)| 2.0 * (x - a)).collect();
        let mut grad = ParamSet::new();
        grad.insert("w", Partition::Body, Tensor::from_vec(g));
        Ok(StepOut {
            loss: self.loss(theta),
            grad,
            running_stats: None,
        })
    }
}
