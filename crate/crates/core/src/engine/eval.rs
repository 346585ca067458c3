use crate::error::{FedError, Result};
use crate::metrics::{cls_metrics, micro_pool, Averaging, ClsMetrics, Confusion, SegMetrics, SegReduction};
use crate::metrics::seg_metrics_images;
use crate::model::{predict, ModelSpec, ParamSet};
use crate::strategies::EvalModels;
use crate::synthdata::{ClientDataset, Split, Task};

/// Named metric values; the first entry is the primary metric.
pub type MetricRow = Vec<(&'static str, f64)>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSuite {
    pub task: Task,
    pub classes: usize,
    pub seg_reduction: SegReduction,
    pub averaging: Averaging,
}

impl MetricSuite {
    pub fn primary(&self) -> &'static str {
        match self.task {
            Task::Segmentation => "dice",
            Task::Classification => "kappa",
        }
    }

    fn seg_row(m: SegMetrics) -> MetricRow {
        SegMetrics::NAMES.iter().copied().zip(m.values()).collect()
    }

    fn cls_row(m: ClsMetrics) -> MetricRow {
        ClsMetrics::NAMES.iter().copied().zip(m.values()).collect()
    }

    /// Scores predictions against targets; segmentation inputs hold
    /// `pixels` positions per image.
    pub fn score(&self, pred: &[usize], truth: &[usize], pixels: usize) -> Result<MetricRow> {
        match self.task {
            Task::Segmentation => Ok(Self::seg_row(seg_metrics_images(pred, truth, pixels, self.seg_reduction)?)),
            Task::Classification => Ok(Self::cls_row(cls_metrics(pred, truth, self.classes, self.averaging)?)),
        }
    }
}

/// Evaluation-mode predictions for one split, with the targets.
pub fn predict_split(spec: &ModelSpec, theta: &ParamSet, ds: &ClientDataset, split: Split) -> Result<(Vec<usize>, Vec<usize>)> {
    let idx = ds.indices(split);
    if idx.is_empty() {
        return Err(FedError::Empty(format!("{split:?} split of client {}", ds.client_id)));
    }
    let mut pred = Vec::new();
    for chunk in idx.chunks(256) {
        pred.extend(predict(spec, theta, &ds.images.gather0(chunk))?);
    }
    Ok((pred, ds.targets.gather(idx)))
}

/// Client `k`'s model on client `k`'s split, for every client.
pub fn evaluate_locally(
    spec: &ModelSpec,
    models: &EvalModels,
    clients: &[ClientDataset],
    suite: &MetricSuite,
    split: Split,
) -> Result<Vec<MetricRow>> {
    clients
        .iter()
        .enumerate()
        .map(|(k, ds)| {
            let (pred, truth) = predict_split(spec, models.for_client(k), ds, split)?;
            suite.score(&pred, &truth, spec.positions())
        })
        .collect()
}

/// One shared model on the concatenation of every client's split (client
/// order). Classification pools confusion counts; segmentation applies the
/// configured reduction to the concatenated images.
pub fn evaluate_globally(
    spec: &ModelSpec,
    theta: &ParamSet,
    clients: &[ClientDataset],
    suite: &MetricSuite,
    split: Split,
) -> Result<MetricRow> {
    let mut preds = Vec::new();
    let mut truths = Vec::new();
    let mut confusions = Vec::new();
    for ds in clients {
        let (p, t) = predict_split(spec, theta, ds, split)?;
        if suite.task == Task::Classification {
            confusions.push(Confusion::from_labels(&p, &t, suite.classes)?);
        }
        preds.extend(p);
        truths.extend(t);
    }
    match suite.task {
        Task::Classification => Ok(MetricSuite::cls_row(ClsMetrics::from_confusion(&micro_pool(&confusions)?, suite.averaging))),
        Task::Segmentation => suite.score(&preds, &truths, spec.positions()),
    }
}
