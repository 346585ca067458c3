use crate::error::Result;
use crate::harmonize::{FeatureMixStyle, Harmonizer};
use crate::model::{loss_and_grad, Batch, Hooks, Mode, ModelSpec, ParamSet};
use crate::numerics::{RngStream, Tensor};
use crate::strategies::{Objective, StepOut};
use crate::synthdata::{ClientDataset, Targets};

/// Gathers `(dataset, sample)` pairs into one batch.
pub fn gather_batch(datasets: &[ClientDataset], samples: &[(usize, usize)]) -> Batch {
    if let Some(&(d0, _)) = samples.first() {
        if samples.iter().all(|&(d, _)| d == d0) {
            let idx: Vec<usize> = samples.iter().map(|&(_, i)| i).collect();
            return datasets[d0].batch(&idx);
        }
    }
    let images: Vec<Tensor> = samples.iter().map(|&(d, i)| datasets[d].image(i)).collect();
    let targets = samples.iter().flat_map(|&(d, i)| datasets[d].targets.gather(&[i])).collect();
    Batch {
        inputs: Tensor::stack(&images).expect("datasets share image shape"),
        targets,
    }
}

/// Training objective of a model on a fixed list of samples from one or
/// more (already harmonized) datasets.
pub struct ModelObjective<'a> {
    pub spec: &'a ModelSpec,
    pub datasets: &'a [ClientDataset],
    pub samples: Vec<(usize, usize)>,
    pub harmonizer: &'a Harmonizer,
}

impl<'a> ModelObjective<'a> {
    /// Client `k`'s training split.
    pub fn client(spec: &'a ModelSpec, datasets: &'a [ClientDataset], k: usize, harmonizer: &'a Harmonizer) -> Self {
        ModelObjective {
            spec,
            datasets,
            samples: datasets[k].train.iter().map(|&i| (k, i)).collect(),
            harmonizer,
        }
    }

    /// Concatenated training splits of every client, in client order.
    pub fn pooled(spec: &'a ModelSpec, datasets: &'a [ClientDataset], harmonizer: &'a Harmonizer) -> Self {
        ModelObjective {
            spec,
            datasets,
            samples: datasets
                .iter()
                .enumerate()
                .flat_map(|(k, d)| d.train.iter().map(move |&i| (k, i)))
                .collect(),
            harmonizer,
        }
    }

    /// Mean evaluation-mode loss over all samples.
    pub fn eval_loss(&self, theta: &ParamSet) -> Result<f64> {
        let mut total = 0.0;
        for chunk in self.samples.chunks(256) {
            let batch = gather_batch(self.datasets, chunk);
            total += crate::model::loss_value(self.spec, theta, &batch, Mode::Eval)? * chunk.len() as f64;
        }
        Ok(total / self.samples.len() as f64)
    }
}

impl Objective for ModelObjective<'_> {
    fn train_len(&self) -> usize {
        self.samples.len()
    }

    fn loss_grad(&self, theta: &ParamSet, batch: &[usize], rng: &mut RngStream) -> Result<StepOut> {
        let picked: Vec<(usize, usize)> = batch.iter().map(|&p| self.samples[p]).collect();
        let dense = matches!(self.datasets[0].targets, Targets::Masks(_));
        let b = self.harmonizer.train_batch(gather_batch(self.datasets, &picked), dense, rng);
        let out = match self.harmonizer.feature_mixstyle() {
            Some((alpha, _)) => {
                let mut hooks = Hooks {
                    feature_mixstyle: Some(FeatureMixStyle {
                        alpha,
                        rng,
                        force_lambda: None,
                    }),
                };
                loss_and_grad(self.spec, theta, &b, Mode::Train, &mut hooks)?
            }
            None => loss_and_grad(self.spec, theta, &b, Mode::Train, &mut Hooks::none())?,
        };
        Ok(StepOut {
            loss: out.loss,
            grad: out.grad,
            running_stats: out.running_stats,
        })
    }
}
