//! Dice-family segmentation metrics and kappa-family classification metrics.

use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};

/// `classes x classes` confusion counts, rows = truth, columns = prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub classes: usize,
    pub counts: Vec<u64>,
}

impl Confusion {
    pub fn zeros(classes: usize) -> Self {
        Confusion {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_labels(pred: &[usize], truth: &[usize], classes: usize) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(FedError::Shape(format!("{} predictions vs {} labels", pred.len(), truth.len())));
        }
        let mut c = Confusion::zeros(classes);
        for (&p, &t) in pred.iter().zip(truth) {
            if p >= classes || t >= classes {
                return Err(FedError::Shape(format!("label out of range for {classes} classes")));
            }
            c.counts[t * classes + p] += 1;
        }
        Ok(c)
    }

    /// Binary counts with `tn, fp, fn, tp` in that row-major order.
    pub fn binary(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Confusion {
            classes: 2,
            counts: vec![tn, fp, fn_, tp],
        }
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn tp(&self) -> u64 {
        self.get(1, 1)
    }

    pub fn fp(&self) -> u64 {
        self.get(0, 1)
    }

    pub fn fn_(&self) -> u64 {
        self.get(1, 0)
    }

    pub fn tn(&self) -> u64 {
        self.get(0, 0)
    }

    fn class_counts(&self, k: usize) -> (u64, u64, u64, u64) {
        let tp = self.get(k, k);
        let row: u64 = (0..self.classes).map(|p| self.get(k, p)).sum();
        let col: u64 = (0..self.classes).map(|t| self.get(t, k)).sum();
        let fp = col - tp;
        let fn_ = row - tp;
        (tp, fp, fn_, self.total() - tp - fp - fn_)
    }

    pub fn accuracy(&self) -> f64 {
        let correct: u64 = (0..self.classes).map(|k| self.get(k, k)).sum();
        ratio(correct, self.total(), 0)
    }
}

/// `num / den`, or the convention for an empty denominator: 1 when no
/// error of the complementary kind occurred, else 0.
fn ratio(num: u64, den: u64, other_errors: u64) -> f64 {
    if den == 0 {
        if other_errors == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        num as f64 / den as f64
    }
}

/// Elementwise sum of confusion matrices.
pub fn micro_pool(items: &[Confusion]) -> Result<Confusion> {
    let first = items.first().ok_or_else(|| FedError::Empty("micro_pool of nothing".into()))?;
    let mut out = Confusion::zeros(first.classes);
    for c in items {
        if c.classes != first.classes {
            return Err(FedError::Shape(format!("{} vs {} classes", c.classes, first.classes)));
        }
        for (o, v) in out.counts.iter_mut().zip(&c.counts) {
            *o += v;
        }
    }
    Ok(out)
}

/// Cohen's kappa. When chance agreement is 1, returns 1 for perfect
/// agreement and 0 otherwise.
pub fn kappa_edge_policy(c: &Confusion) -> f64 {
    let n = c.total() as f64;
    if n == 0.0 {
        return 0.0;
    }
    let p_o = c.accuracy();
    let p_e: f64 = (0..c.classes)
        .map(|k| {
            let row: u64 = (0..c.classes).map(|p| c.get(k, p)).sum();
            let col: u64 = (0..c.classes).map(|t| c.get(t, k)).sum();
            (row as f64 / n) * (col as f64 / n)
        })
        .sum();
    if (1.0 - p_e).abs() < 1e-15 {
        if p_o == 1.0 {
            1.0
        } else {
            0.0
        }
    } else {
        (p_o - p_e) / (1.0 - p_e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegMetrics {
    pub dice: f64,
    pub iou: f64,
    pub pixel_acc: f64,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
}

impl SegMetrics {
    pub const NAMES: [&'static str; 6] = ["dice", "iou", "pixel_acc", "precision", "recall", "specificity"];

    pub fn from_confusion(c: &Confusion) -> Self {
        let (tp, fp, fn_, tn) = (c.tp(), c.fp(), c.fn_(), c.tn());
        SegMetrics {
            dice: ratio(2 * tp, 2 * tp + fp + fn_, 0),
            iou: ratio(tp, tp + fp + fn_, 0),
            pixel_acc: c.accuracy(),
            precision: ratio(tp, tp + fp, fn_),
            recall: ratio(tp, tp + fn_, fp),
            specificity: ratio(tn, tn + fp, fn_),
        }
    }

    pub fn values(&self) -> [f64; 6] {
        [self.dice, self.iou, self.pixel_acc, self.precision, self.recall, self.specificity]
    }

    fn from_values(v: [f64; 6]) -> Self {
        SegMetrics {
            dice: v[0],
            iou: v[1],
            pixel_acc: v[2],
            precision: v[3],
            recall: v[4],
            specificity: v[5],
        }
    }
}

/// Metrics of one binary mask pair (any values > 0 count as foreground).
pub fn seg_metrics(pred: &[usize], truth: &[usize]) -> Result<SegMetrics> {
    let p: Vec<usize> = pred.iter().map(|&v| usize::from(v > 0)).collect();
    let t: Vec<usize> = truth.iter().map(|&v| usize::from(v > 0)).collect();
    Ok(SegMetrics::from_confusion(&Confusion::from_labels(&p, &t, 2)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SegReduction {
    /// Metrics per image, then the mean over images.
    #[default]
    ImageMean,
    /// Metrics of the pooled pixel counts.
    Pooled,
}

/// Scores `images` consecutive masks of `pixels` positions each.
pub fn seg_metrics_images(pred: &[usize], truth: &[usize], pixels: usize, reduction: SegReduction) -> Result<SegMetrics> {
    if pred.len() != truth.len() || pixels == 0 || pred.len() % pixels != 0 || pred.is_empty() {
        return Err(FedError::Shape(format!(
            "{} predicted vs {} true pixels in images of {pixels}",
            pred.len(),
            truth.len()
        )));
    }
    match reduction {
        SegReduction::Pooled => seg_metrics(pred, truth),
        SegReduction::ImageMean => {
            let images = pred.len() / pixels;
            let mut acc = [0.0; 6];
            for (p, t) in pred.chunks(pixels).zip(truth.chunks(pixels)) {
                for (a, v) in acc.iter_mut().zip(seg_metrics(p, t)?.values()) {
                    *a += v;
                }
            }
            Ok(SegMetrics::from_values(acc.map(|v| v / images as f64)))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    #[default]
    Macro,
    Micro,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClsMetrics {
    pub kappa: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub specificity: f64,
}

impl ClsMetrics {
    pub const NAMES: [&'static str; 6] = ["kappa", "accuracy", "precision", "recall", "f1", "specificity"];

    pub fn values(&self) -> [f64; 6] {
        [self.kappa, self.accuracy, self.precision, self.recall, self.f1, self.specificity]
    }

    pub fn from_confusion(c: &Confusion, averaging: Averaging) -> Self {
        let f1 = |p: f64, r: f64| if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        let (precision, recall, f1v, specificity) = if c.classes == 2 {
            let (tp, fp, fn_, tn) = (c.tp(), c.fp(), c.fn_(), c.tn());
            let p = ratio(tp, tp + fp, fn_);
            let r = ratio(tp, tp + fn_, fp);
            (p, r, f1(p, r), ratio(tn, tn + fp, fn_))
        } else {
            match averaging {
                Averaging::Macro => {
                    let mut acc = [0.0; 4];
                    for k in 0..c.classes {
                        let (tp, fp, fn_, tn) = c.class_counts(k);
                        let p = ratio(tp, tp + fp, fn_);
                        let r = ratio(tp, tp + fn_, fp);
                        for (a, v) in acc.iter_mut().zip([p, r, f1(p, r), ratio(tn, tn + fp, fn_)]) {
                            *a += v;
                        }
                    }
                    let l = c.classes as f64;
                    (acc[0] / l, acc[1] / l, acc[2] / l, acc[3] / l)
                }
                Averaging::Micro => {
                    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
                    for k in 0..c.classes {
                        let (a, b, d, e) = c.class_counts(k);
                        tp += a;
                        fp += b;
                        fn_ += d;
                        tn += e;
                    }
                    let p = ratio(tp, tp + fp, fn_);
                    let r = ratio(tp, tp + fn_, fp);
                    (p, r, f1(p, r), ratio(tn, tn + fp, fn_))
                }
            }
        };
        ClsMetrics {
            kappa: kappa_edge_policy(c),
            accuracy: c.accuracy(),
            precision,
            recall,
            f1: f1v,
            specificity,
        }
    }
}

pub fn cls_metrics(pred: &[usize], truth: &[usize], classes: usize, averaging: Averaging) -> Result<ClsMetrics> {
    if pred.is_empty() {
        return Err(FedError::Empty("cls_metrics labels".into()));
    }
    Ok(ClsMetrics::from_confusion(&Confusion::from_labels(pred, truth, classes)?, averaging))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dice_iou_example() {
        // |A| = 6, |B| = 4, overlap 3
        let pred = [1, 1, 1, 1, 1, 1, 0, 0];
        let truth = [1, 1, 1, 0, 0, 0, 1, 0];
        let m = seg_metrics(&pred, &truth).unwrap();
        assert!((m.dice - 0.6).abs() < 1e-15);
        assert!((m.iou - 3.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn kappa_example() {
        let c = Confusion {
            classes: 2,
            counts: vec![40, 10, 5, 45],
        };
        assert!((kappa_edge_policy(&c) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn kappa_edges() {
        assert_eq!(kappa_edge_policy(&Confusion::binary(0, 0, 0, 10)), 1.0);
        let wrong = Confusion {
            classes: 2,
            counts: vec![0, 10, 0, 0],
        };
        assert_eq!(kappa_edge_policy(&wrong), 0.0);
    }

    #[test]
    fn empty_masks_score_one() {
        let m = seg_metrics(&[0, 0, 0], &[0, 0, 0]).unwrap();
        assert_eq!(m.values(), [1.0; 6]);
    }
}
