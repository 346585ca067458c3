use rayon::prelude::*;

use crate::engine::config::{BaselineKind, ExperimentConfig};
use crate::engine::eval::{evaluate_globally, evaluate_locally, MetricSuite};
use crate::engine::objective::ModelObjective;
use crate::engine::results::{ResultTable, RoundRecord, POOLED};
use crate::error::{FedError, Result};
use crate::harmonize::{Harmonizer, PluginRegistry};
use crate::model::{init_params, param_diff, ModelSpec, ParamSet};
use crate::numerics::{RngStream, SERVER};
use crate::strategies::{local_sgd, train_stream, Ctx, EvalModels, Objective, StrategyKind, StrategyState, TRAINABLE};
use crate::synthdata::{make_federation, ClientDataset, Federation, Split};

/// A federation with the experiment's harmonization applied, plus
/// everything derived from the config that training needs.
pub struct Prepared {
    pub federation: Federation,
    /// Client datasets after the deterministic transform `T_k`.
    pub clients: Vec<ClientDataset>,
    pub harmonizer: Harmonizer,
    pub spec: ModelSpec,
    pub suite: MetricSuite,
    pub weights: Vec<f64>,
}

impl Prepared {
    pub fn new(config: &ExperimentConfig, federation: Federation, registry: &PluginRegistry) -> Result<Self> {
        config.validate()?;
        if federation.spec != config.federation_spec() {
            return Err(FedError::config("federation", "federation on disk does not match the config"));
        }
        let harmonizer = Harmonizer::new(&config.harmonize, &federation, &config.reference, &config.augment, registry)?;
        let clients = federation
            .clients
            .iter()
            .map(|c| harmonizer.transform_dataset(c))
            .collect::<Result<Vec<_>>>()?;
        let suite = MetricSuite {
            task: federation.spec.task,
            classes: federation.spec.classes,
            seg_reduction: config.eval.seg_reduction,
            averaging: config.eval.averaging,
        };
        Ok(Prepared {
            weights: federation.weights(),
            federation,
            clients,
            harmonizer,
            spec: config.model_spec(),
            suite,
        })
    }

    pub fn objectives(&self) -> Vec<ModelObjective<'_>> {
        (0..self.clients.len())
            .map(|k| ModelObjective::client(&self.spec, &self.clients, k, &self.harmonizer))
            .collect()
    }

    fn weighted_train_loss(&self, models: &EvalModels) -> Result<f64> {
        let objs = self.objectives();
        let losses: Vec<Result<f64>> = objs
            .par_iter()
            .enumerate()
            .map(|(k, o)| o.eval_loss(models.for_client(k)))
            .collect();
        let mut total = 0.0;
        for (l, p) in losses.into_iter().zip(&self.weights) {
            total += p * l?;
        }
        Ok(total)
    }

    fn val_metrics(&self, config: &ExperimentConfig, models: &EvalModels) -> Result<Vec<f64>> {
        if !config.eval.round_metrics {
            return Ok(Vec::new());
        }
        let rows = evaluate_locally(&self.spec, models, &self.clients, &self.suite, Split::Val)?;
        Ok(rows.iter().map(|r| r[0].1).collect())
    }

    fn record(&self, config: &ExperimentConfig, round: usize, models: &EvalModels, delta_norm: f64) -> Result<RoundRecord> {
        check_divergence(models, round, config.divergence_bound)?;
        let global_loss = self.weighted_train_loss(models)?;
        if !global_loss.is_finite() {
            return Err(FedError::Divergence {
                round,
                client: None,
                message: format!("training loss is {global_loss}"),
            });
        }
        Ok(RoundRecord {
            round,
            global_loss,
            delta_norm,
            per_client_val_metric: self.val_metrics(config, models)?,
        })
    }
}

/// Fails when any model holds a non-finite value or one beyond `bound`.
pub fn check_divergence(models: &EvalModels, round: usize, bound: f64) -> Result<()> {
    let (list, per_client): (Vec<&ParamSet>, bool) = match models {
        EvalModels::Global(t) => (vec![t], false),
        EvalModels::PerClient(v) | EvalModels::LocallyTested(v) => (v.iter().collect(), true),
    };
    for (k, theta) in list.into_iter().enumerate() {
        let client = per_client.then_some(k);
        let which = if per_client { "parameter" } else { "global parameter" };
        if let Some(name) = theta.first_non_finite() {
            return Err(FedError::Divergence {
                round,
                client,
                message: format!("{which} `{name}` became non-finite"),
            });
        }
        if let Some((name, v)) = theta.max_abs().filter(|&(_, v)| v > bound) {
            return Err(FedError::Divergence {
                round,
                client,
                message: format!("{which} `{name}` reached magnitude {v:.3e} (bound {bound:e})"),
            });
        }
    }
    Ok(())
}

/// Everything a finished run produces.
pub struct RunOutput {
    pub method: String,
    pub table: ResultTable,
    pub rounds: Vec<RoundRecord>,
    pub models: EvalModels,
    pub state: Option<StrategyState>,
}

fn round_models(state: &StrategyState) -> Result<EvalModels> {
    match state.kind {
        StrategyKind::Finetune { .. } => Ok(EvalModels::Global(state.global.clone())),
        _ => state.eval_models(),
    }
}

/// `R` rounds of the configured strategy from the shared initial model.
pub fn run_federated(
    config: &ExperimentConfig,
    kind: &StrategyKind,
    prep: &Prepared,
) -> Result<(StrategyState, Vec<RoundRecord>)> {
    let theta0 = init_params(&prep.spec, config.seed);
    let mut state = StrategyState::new(kind.clone(), theta0, prep.clients.len())?;
    let objs = prep.objectives();
    let dyn_objs: Vec<&dyn Objective> = objs.iter().map(|o| o as &dyn Objective).collect();
    let local = config.local();
    let mut log = Vec::with_capacity(config.rounds);
    for _ in 0..config.rounds {
        let stats = state.run_round(&dyn_objs, &prep.weights, &local, config.seed)?;
        log.push(prep.record(config, stats.round, &round_models(&state)?, stats.delta_norm)?);
    }
    state.finalize(&dyn_objs, &local, config.seed)?;
    Ok((state, log))
}

/// Each client trains alone for the same `R x E` schedule and streams a
/// federated client would use.
pub fn train_local_centralized(config: &ExperimentConfig, prep: &Prepared) -> Result<(Vec<ParamSet>, Vec<RoundRecord>)> {
    let theta0 = init_params(&prep.spec, config.seed);
    let objs = prep.objectives();
    let local = config.local();
    let mut models = vec![theta0; prep.clients.len()];
    let mut log = Vec::with_capacity(config.rounds);
    for round in 1..=config.rounds {
        let next: Vec<Result<ParamSet>> = objs
            .par_iter()
            .enumerate()
            .map(|(k, obj)| {
                let mut rng = train_stream(config.seed, k, round);
                local_sgd(obj, &models[k], local.epochs, &local, &TRAINABLE, &mut rng, Ctx { round, client: k }, |_, _| Ok(()))
                    .map(|r| r.theta)
            })
            .collect();
        let next: Vec<ParamSet> = next.into_iter().collect::<Result<_>>()?;
        let mut delta_sq = 0.0;
        for (a, b) in next.iter().zip(&models) {
            delta_sq += param_diff(a, b)?.norm_sq();
        }
        models = next;
        let em = EvalModels::PerClient(models.clone());
        log.push(prep.record(config, round, &em, delta_sq.sqrt())?);
    }
    Ok((models, log))
}

/// One model trained on the concatenated training splits.
pub fn train_centralized(config: &ExperimentConfig, prep: &Prepared) -> Result<(ParamSet, Vec<RoundRecord>)> {
    let mut theta = init_params(&prep.spec, config.seed);
    let pooled = ModelObjective::pooled(&prep.spec, &prep.clients, &prep.harmonizer);
    let local = config.local();
    let mut log = Vec::with_capacity(config.rounds);
    for round in 1..=config.rounds {
        let mut rng = RngStream::new(config.seed, SERVER, round as u64, "train");
        let run = local_sgd(&pooled, &theta, local.epochs, &local, &TRAINABLE, &mut rng, Ctx { round, client: 0 }, |_, _| Ok(()))
            .map_err(|e| match e {
                FedError::Divergence { round, message, .. } => FedError::Divergence {
                    round,
                    client: None,
                    message,
                },
                other => other,
            })?;
        let delta = param_diff(&run.theta, &theta)?.norm_sq().sqrt();
        theta = run.theta;
        log.push(prep.record(config, round, &EvalModels::Global(theta.clone()), delta)?);
    }
    Ok((theta, log))
}

pub fn run_baseline(kind: BaselineKind, config: &ExperimentConfig, prep: &Prepared) -> Result<RunOutput> {
    let method = config.method_label();
    let (models, rounds, state) = match kind {
        BaselineKind::LocalCentralized => {
            let (m, log) = train_local_centralized(config, prep)?;
            (EvalModels::PerClient(m), log, None)
        }
        BaselineKind::CentralGlobal | BaselineKind::CentralLocal => {
            let (m, log) = train_centralized(config, prep)?;
            (EvalModels::Global(m), log, None)
        }
        BaselineKind::FedavgGlobal | BaselineKind::FedavgLocal => {
            let (state, log) = run_federated(config, &StrategyKind::Fedavg, prep)?;
            (state.eval_models()?, log, Some(state))
        }
    };
    let mut table = ResultTable::default();
    if kind.globally_tested() {
        let theta = models.global().expect("pooled baselines train one model");
        let row = evaluate_globally(&prep.spec, theta, &prep.clients, &prep.suite, Split::Test)?;
        table.push_metrics(&method, POOLED, &row);
    } else {
        let rows = evaluate_locally(&prep.spec, &models, &prep.clients, &prep.suite, Split::Test)?;
        table.push_local(&method, &rows);
    }
    Ok(RunOutput {
        method,
        table,
        rounds,
        models,
        state,
    })
}

/// Runs the configured method on an existing federation.
pub fn run_experiment_on(config: &ExperimentConfig, federation: Federation, registry: &PluginRegistry) -> Result<RunOutput> {
    let prep = Prepared::new(config, federation, registry)?;
    if let Some(b) = config.baseline {
        return run_baseline(b, config, &prep);
    }
    let kind = config.strategy.as_ref().expect("validated");
    let method = config.method_label();
    let (state, rounds) = run_federated(config, kind, &prep)?;
    let models = state.eval_models()?;
    let mut table = ResultTable::default();
    let rows = evaluate_locally(&prep.spec, &models, &prep.clients, &prep.suite, Split::Test)?;
    table.push_local(&method, &rows);
    if config.eval.global {
        if let Some(theta) = models.global() {
            let row = evaluate_globally(&prep.spec, theta, &prep.clients, &prep.suite, Split::Test)?;
            table.push_metrics(&method, POOLED, &row);
        }
    }
    Ok(RunOutput {
        method,
        table,
        rounds,
        models,
        state: Some(state),
    })
}

/// Generates the federation from the config and runs it.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutput> {
    config.validate()?;
    let federation = make_federation(&config.federation_spec())?;
    run_experiment_on(config, federation, &PluginRegistry::default())
}
