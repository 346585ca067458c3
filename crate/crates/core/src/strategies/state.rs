use rayon::prelude::*;

use crate::error::{FedError, Result};
use crate::model::{param_diff, ParamSet, Partition};
use crate::numerics::RngStream;
use crate::strategies::aggregate::{fedadam_update, server_aggregate_fedavg, AdamMoments, Contribution};
use crate::strategies::kind::StrategyKind;
use crate::strategies::local::{add_pull, local_sgd, Ctx, LocalConfig, LocalRun, Objective};

/// Tags that take gradient steps in ordinary local training.
pub const TRAINABLE: [Partition; 3] = [Partition::Body, Partition::Head, Partition::NormAffine];
const NORM: [Partition; 2] = [Partition::NormAffine, Partition::NormStats];

/// Stream for client `k`'s local work in round `r` (rounds count from 1).
pub fn train_stream(seed: u64, client: usize, round: usize) -> RngStream {
    RngStream::new(seed, client as u64, round as u64, "train")
}

fn finetune_stream(seed: u64, client: usize) -> RngStream {
    RngStream::new(seed, client as u64, 0, "finetune")
}

/// SCAFFOLD control variates over the trainable entries.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlVariates {
    pub server: ParamSet,
    pub clients: Vec<ParamSet>,
}

/// Models used for evaluation after training.
#[derive(Debug, Clone, PartialEq)]
pub enum EvalModels {
    /// One shared model, testable locally and globally.
    Global(ParamSet),
    /// One model per client, tested on that client's data.
    PerClient(Vec<ParamSet>),
    /// Fine-tuned per-client models; only locally testable.
    LocallyTested(Vec<ParamSet>),
}

impl EvalModels {
    pub fn for_client(&self, k: usize) -> &ParamSet {
        match self {
            EvalModels::Global(t) => t,
            EvalModels::PerClient(v) | EvalModels::LocallyTested(v) => &v[k],
        }
    }

    /// The shared model, if there is one.
    pub fn global(&self) -> Option<&ParamSet> {
        match self {
            EvalModels::Global(t) => Some(t),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundStats {
    pub round: usize,
    /// Weight-averaged mean minibatch loss of the clients' local training.
    pub train_loss: f64,
    /// `||theta_global_new - theta_global_old||`.
    pub delta_norm: f64,
}

struct ClientOut {
    contribution: ParamSet,
    personal: Option<ParamSet>,
    control: Option<ParamSet>,
    loss: f64,
}

/// Server and client state of one federated run.
#[derive(Debug, Clone)]
pub struct StrategyState {
    pub kind: StrategyKind,
    pub round: usize,
    pub global: ParamSet,
    /// Per-client models (local parts for layer-wise methods, personal
    /// models for bi-level methods). Start as copies of the initial model.
    pub personal: Vec<ParamSet>,
    pub control: Option<ControlVariates>,
    pub moments: Option<AdamMoments>,
    pub finetuned: Option<Vec<ParamSet>>,
}

impl StrategyState {
    pub fn new(kind: StrategyKind, theta0: ParamSet, clients: usize) -> Result<Self> {
        kind.validate()?;
        match kind {
            StrategyKind::Fedbn if !theta0.has_tag(Partition::NormAffine) && !theta0.has_tag(Partition::NormStats) => {
                return Err(FedError::config("strategy.name", "fedbn needs a model with normalisation layers"));
            }
            StrategyKind::Fedper | StrategyKind::Fedrep { .. } if !theta0.has_tag(Partition::Head) => {
                return Err(FedError::config(
                    "strategy.name",
                    format!("{} needs a model with a head partition", kind.name()),
                ));
            }
            StrategyKind::Fedper | StrategyKind::Fedrep { .. } if theta0.complement(&[Partition::Head]).is_empty() => {
                return Err(FedError::config(
                    "strategy.name",
                    format!("{} needs a shared body; the model is all head", kind.name()),
                ));
            }
            _ => {}
        }
        let control = matches!(kind, StrategyKind::Scaffold).then(|| {
            let zero = theta0.trainable().zeros_like();
            ControlVariates {
                server: zero.clone(),
                clients: vec![zero; clients],
            }
        });
        let moments = matches!(kind, StrategyKind::Fedadam { .. }).then(|| AdamMoments::zeros_like(&theta0.trainable()));
        Ok(StrategyState {
            kind,
            round: 0,
            personal: vec![theta0.clone(); clients],
            global: theta0,
            control,
            moments,
            finetuned: None,
        })
    }

    fn clients(&self) -> usize {
        self.personal.len()
    }

    /// Starting point of client `k`: its own copy with the shared part
    /// replaced by the current global values.
    fn merged_start(&self, k: usize, local_tags: &[Partition]) -> ParamSet {
        let mut start = self.personal[k].clone();
        start.overwrite_with(&self.global.complement(local_tags));
        start
    }

    fn client_update(&self, k: usize, obj: &dyn Objective, local: &LocalConfig, seed: u64) -> Result<ClientOut> {
        let round = self.round;
        let ctx = Ctx { round, client: k };
        let mut rng = train_stream(seed, k, round);
        let epochs = local.epochs;
        let plain = |run: LocalRun| ClientOut {
            contribution: run.theta,
            personal: None,
            control: None,
            loss: run.mean_loss,
        };
        match &self.kind {
            StrategyKind::Fedavg | StrategyKind::Fedadam { .. } | StrategyKind::Finetune { .. } => {
                local_sgd(obj, &self.global, epochs, local, &TRAINABLE, &mut rng, ctx, |_, _| Ok(())).map(plain)
            }
            StrategyKind::Fedprox { mu } => {
                let anchor = &self.global;
                local_sgd(obj, anchor, epochs, local, &TRAINABLE, &mut rng, ctx, |theta, grad| {
                    add_pull(grad, theta, anchor, *mu)
                })
                .map(plain)
            }
            StrategyKind::Scaffold => {
                let cv = self.control.as_ref().expect("scaffold state");
                let correction = param_diff(&cv.server, &cv.clients[k])?;
                let run = local_sgd(obj, &self.global, epochs, local, &TRAINABLE, &mut rng, ctx, |_, grad| {
                    grad.add_scaled(1.0, &correction)
                })?;
                let denom = run.steps as f64 * local.lr;
                if denom == 0.0 {
                    return Err(FedError::config("lr", "scaffold needs a positive number of steps and learning rate"));
                }
                // c_k' = c_k - c + (theta_global - y) / (S lr)
                let mut c_new = param_diff(&cv.clients[k], &cv.server)?;
                let drift = param_diff(&self.global.trainable(), &run.theta.trainable())?;
                c_new.add_scaled(1.0 / denom, &drift)?;
                Ok(ClientOut {
                    contribution: run.theta,
                    personal: None,
                    control: Some(c_new),
                    loss: run.mean_loss,
                })
            }
            StrategyKind::Fedper => {
                let start = self.merged_start(k, &[Partition::Head]);
                let run = local_sgd(obj, &start, epochs, local, &TRAINABLE, &mut rng, ctx, |_, _| Ok(()))?;
                Ok(ClientOut {
                    personal: Some(run.theta.clone()),
                    contribution: run.theta,
                    control: None,
                    loss: run.mean_loss,
                })
            }
            StrategyKind::Fedrep { head_epochs } => {
                let start = self.merged_start(k, &[Partition::Head]);
                let head = local_sgd(obj, &start, *head_epochs, local, &[Partition::Head], &mut rng, ctx, |_, _| Ok(()))?;
                let body = [Partition::Body, Partition::NormAffine];
                let run = local_sgd(obj, &head.theta, epochs, local, &body, &mut rng, ctx, |_, _| Ok(()))?;
                Ok(ClientOut {
                    personal: Some(run.theta.clone()),
                    contribution: run.theta,
                    control: None,
                    loss: run.mean_loss,
                })
            }
            StrategyKind::Fedbn => {
                let start = self.merged_start(k, &NORM);
                let run = local_sgd(obj, &start, epochs, local, &TRAINABLE, &mut rng, ctx, |_, _| Ok(()))?;
                Ok(ClientOut {
                    personal: Some(run.theta.clone()),
                    contribution: run.theta,
                    control: None,
                    loss: run.mean_loss,
                })
            }
            StrategyKind::Ditto { lambda } => {
                let global_track = local_sgd(obj, &self.global, epochs, local, &TRAINABLE, &mut rng, ctx, |_, _| Ok(()))?;
                let mut personal_rng = train_stream(seed, k, round);
                let anchor = &self.global;
                let personal = local_sgd(obj, &self.personal[k], epochs, local, &TRAINABLE, &mut personal_rng, ctx, |v, grad| {
                    add_pull(grad, v, anchor, *lambda)
                })?;
                Ok(ClientOut {
                    contribution: global_track.theta,
                    personal: Some(personal.theta),
                    control: None,
                    loss: global_track.mean_loss,
                })
            }
            StrategyKind::Pfedme {
                lambda,
                inner_steps,
                inner_lr,
            } => {
                let (w, theta, loss) =
                    pfedme_local(obj, &self.global, *lambda, *inner_steps, *inner_lr, local, &mut rng, ctx)?;
                Ok(ClientOut {
                    contribution: w,
                    personal: Some(theta),
                    control: None,
                    loss,
                })
            }
        }
    }

    /// One communication round with every client participating.
    pub fn run_round(&mut self, objs: &[&dyn Objective], weights: &[f64], local: &LocalConfig, seed: u64) -> Result<RoundStats> {
        if objs.len() != self.clients() || weights.len() != self.clients() {
            return Err(FedError::Shape(format!(
                "{} objectives and {} weights for {} clients",
                objs.len(),
                weights.len(),
                self.clients()
            )));
        }
        self.round += 1;
        let outs: Vec<Result<ClientOut>> = (0..self.clients())
            .into_par_iter()
            .map(|k| self.client_update(k, objs[k], local, seed))
            .collect();
        let mut results = Vec::with_capacity(outs.len());
        for (k, out) in outs.into_iter().enumerate() {
            match out {
                Ok(o) => results.push(o),
                Err(e) if e.is_divergence() => return Err(e),
                Err(e) => {
                    return Err(FedError::InClient {
                        round: self.round,
                        client: k,
                        source: Box::new(e),
                    })
                }
            }
        }
        let old = self.global.clone();
        self.server_step(&results, weights)?;
        if let Some(name) = self.global.first_non_finite() {
            return Err(FedError::Divergence {
                round: self.round,
                client: None,
                message: format!("global parameter `{name}` became non-finite"),
            });
        }
        let train_loss = results.iter().zip(weights).map(|(o, p)| p * o.loss).sum();
        Ok(RoundStats {
            round: self.round,
            train_loss,
            delta_norm: param_diff(&self.global, &old)?.norm_sq().sqrt(),
        })
    }

    fn aggregate(results: &[ClientOut], weights: &[f64], pick: impl Fn(&ParamSet) -> ParamSet) -> Result<ParamSet> {
        let parts: Vec<ParamSet> = results.iter().map(|o| pick(&o.contribution)).collect();
        let contribs: Vec<Contribution<'_>> = parts
            .iter()
            .zip(weights)
            .enumerate()
            .map(|(client, (params, &weight))| Contribution { client, weight, params })
            .collect();
        server_aggregate_fedavg(&contribs)
    }

    fn server_step(&mut self, results: &[ClientOut], weights: &[f64]) -> Result<()> {
        match self.kind.clone() {
            StrategyKind::Fedavg
            | StrategyKind::Fedprox { .. }
            | StrategyKind::Finetune { .. }
            | StrategyKind::Ditto { .. }
            | StrategyKind::Pfedme { .. } => {
                self.global = Self::aggregate(results, weights, Clone::clone)?;
            }
            StrategyKind::Scaffold => {
                self.global = Self::aggregate(results, weights, Clone::clone)?;
                let cv = self.control.as_mut().expect("scaffold state");
                let deltas: Vec<ParamSet> = results
                    .iter()
                    .zip(&cv.clients)
                    .map(|(o, old)| param_diff(o.control.as_ref().expect("scaffold client"), old))
                    .collect::<Result<_>>()?;
                let contribs: Vec<Contribution<'_>> = deltas
                    .iter()
                    .zip(weights)
                    .enumerate()
                    .map(|(client, (params, &weight))| Contribution { client, weight, params })
                    .collect();
                let mean_delta = server_aggregate_fedavg(&contribs)?;
                cv.server.add_scaled(1.0, &mean_delta)?;
                for (slot, o) in cv.clients.iter_mut().zip(results) {
                    *slot = o.control.clone().expect("scaffold client");
                }
            }
            StrategyKind::Fedadam { eta, beta1, beta2, tau } => {
                let avg = Self::aggregate(results, weights, Clone::clone)?;
                let delta = param_diff(&avg.trainable(), &self.global.trainable())?;
                let moments = self.moments.as_mut().expect("fedadam state");
                fedadam_update(&mut self.global, moments, &delta, eta, beta1, beta2, tau)?;
                self.global.overwrite_with(&avg.filter(&[Partition::NormStats]));
            }
            StrategyKind::Fedper | StrategyKind::Fedrep { .. } => {
                let shared = Self::aggregate(results, weights, |p| p.complement(&[Partition::Head]))?;
                self.global.overwrite_with(&shared);
            }
            StrategyKind::Fedbn => {
                let shared = Self::aggregate(results, weights, |p| p.complement(&NORM))?;
                self.global.overwrite_with(&shared);
            }
        }
        for (slot, o) in self.personal.iter_mut().zip(results) {
            if let Some(p) = &o.personal {
                *slot = p.clone();
            }
        }
        Ok(())
    }

    /// Post-training work (local fine-tuning).
    pub fn finalize(&mut self, objs: &[&dyn Objective], local: &LocalConfig, seed: u64) -> Result<()> {
        if let StrategyKind::Finetune { post_epochs } = self.kind {
            let round = self.round + 1;
            let tuned: Vec<Result<ParamSet>> = (0..self.clients())
                .into_par_iter()
                .map(|k| {
                    let mut rng = finetune_stream(seed, k);
                    local_finetune(&self.global, objs[k], post_epochs, local, &mut rng, Ctx { round, client: k })
                })
                .collect();
            self.finetuned = Some(tuned.into_iter().collect::<Result<_>>()?);
        }
        Ok(())
    }

    pub fn eval_models(&self) -> Result<EvalModels> {
        let k_range = 0..self.clients();
        Ok(match &self.kind {
            StrategyKind::Fedavg | StrategyKind::Fedprox { .. } | StrategyKind::Scaffold | StrategyKind::Fedadam { .. } => {
                EvalModels::Global(self.global.clone())
            }
            StrategyKind::Fedper | StrategyKind::Fedrep { .. } => {
                EvalModels::PerClient(k_range.map(|k| self.merged_start(k, &[Partition::Head])).collect())
            }
            StrategyKind::Fedbn => EvalModels::PerClient(k_range.map(|k| self.merged_start(k, &NORM)).collect()),
            StrategyKind::Ditto { .. } | StrategyKind::Pfedme { .. } => EvalModels::PerClient(self.personal.clone()),
            StrategyKind::Finetune { .. } => EvalModels::LocallyTested(
                self.finetuned
                    .clone()
                    .ok_or_else(|| FedError::config("strategy", "finetune models requested before finalize"))?,
            ),
        })
    }
}

/// `post_epochs` of plain SGD from the global model on one client.
pub fn local_finetune(
    global: &ParamSet,
    obj: &dyn Objective,
    post_epochs: usize,
    local: &LocalConfig,
    rng: &mut RngStream,
    ctx: Ctx,
) -> Result<ParamSet> {
    Ok(local_sgd(obj, global, post_epochs, local, &TRAINABLE, rng, ctx, |_, _| Ok(()))?.theta)
}

/// Moreau-envelope local solve: per minibatch, `inner_steps` steps on
/// `f_k(theta) + lambda/2 ||theta - w||^2`, then
/// `w <- w - lr lambda (w - theta)`. Returns `(w, theta, mean loss)`.
#[allow(clippy::too_many_arguments)]
pub fn pfedme_local(
    obj: &dyn Objective,
    global: &ParamSet,
    lambda: f64,
    inner_steps: usize,
    inner_lr: f64,
    local: &LocalConfig,
    rng: &mut RngStream,
    ctx: Ctx,
) -> Result<(ParamSet, ParamSet, f64)> {
    use crate::strategies::local::epoch_batches;
    let n = obj.train_len();
    if n == 0 {
        return Err(FedError::Empty(format!("train split of client {}", ctx.client)));
    }
    let mut w = global.clone();
    let mut theta = global.clone();
    let (mut loss_sum, mut batches) = (0.0, 0usize);
    for _ in 0..local.epochs {
        for batch in epoch_batches(n, local.batch_size, rng) {
            let mut last = 0.0;
            for _ in 0..inner_steps {
                let out = obj.loss_grad(&theta, &batch, rng)?;
                if !out.loss.is_finite() {
                    return Err(ctx.diverged("non-finite loss in personal solve"));
                }
                last = out.loss;
                let mut grad = out.grad.filter(&TRAINABLE);
                add_pull(&mut grad, &theta, &w, lambda)?;
                theta.add_scaled(-inner_lr, &grad)?;
                if let Some(stats) = out.running_stats {
                    theta.overwrite_with(&stats);
                }
            }
            let pull = param_diff(&w.trainable(), &theta.trainable())?;
            w.add_scaled(-local.lr * lambda, &pull)?;
            w.overwrite_with(&theta.filter(&[Partition::NormStats]));
            if let Some(name) = theta.first_non_finite().or(w.first_non_finite()) {
                return Err(ctx.diverged(format!("parameter `{name}` became non-finite")));
            }
            loss_sum += last;
            batches += 1;
        }
    }
    Ok((w, theta, loss_sum / batches.max(1) as f64))
}
