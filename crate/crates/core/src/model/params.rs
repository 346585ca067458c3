use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};
use crate::numerics::Tensor;

/// Role of a parameter tensor, used by layer-wise personalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    Body,
    Head,
    NormAffine,
    /// Running mean/variance of normalisation layers; state, never trained.
    NormStats,
}

impl Partition {
    pub const ALL: [Partition; 4] = [
        Partition::Body,
        Partition::Head,
        Partition::NormAffine,
        Partition::NormStats,
    ];

    pub fn is_trainable(self) -> bool {
        self != Partition::NormStats
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub tag: Partition,
    pub value: Tensor,
}

/// Named parameter tensors with partition tags, iterated in lexicographic
/// name order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    entries: BTreeMap<String, Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tag: Partition, value: Tensor) {
        self.entries.insert(name.into(), Param { tag, value });
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name).map(|p| &p.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name).map(|p| &mut p.value)
    }

    pub fn tag(&self, name: &str) -> Option<Partition> {
        self.entries.get(name).map(|p| p.tag)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Partition, &Tensor)> {
        self.entries
            .iter()
            .map(|(k, p)| (k.as_str(), p.tag, &p.value))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, Partition, &mut Tensor)> {
        self.entries
            .iter_mut()
            .map(|(k, p)| (k.as_str(), p.tag, &mut p.value))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.entries.values().map(|p| p.value.numel()).sum()
    }

    pub fn has_tag(&self, tag: Partition) -> bool {
        self.entries.values().any(|p| p.tag == tag)
    }

    /// Entries whose tag is in `tags`.
    pub fn filter(&self, tags: &[Partition]) -> ParamSet {
        ParamSet {
            entries: self
                .entries
                .iter()
                .filter(|(_, p)| tags.contains(&p.tag))
                .map(|(k, p)| (k.clone(), p.clone()))
                .collect(),
        }
    }

    /// Entries whose tag is not in `tags`.
    pub fn complement(&self, tags: &[Partition]) -> ParamSet {
        ParamSet {
            entries: self
                .entries
                .iter()
                .filter(|(_, p)| !tags.contains(&p.tag))
                .map(|(k, p)| (k.clone(), p.clone()))
                .collect(),
        }
    }

    pub fn trainable(&self) -> ParamSet {
        ParamSet {
            entries: self
                .entries
                .iter()
                .filter(|(_, p)| p.tag.is_trainable())
                .map(|(k, p)| (k.clone(), p.clone()))
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> ParamSet {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|(k, p)| {
                    (
                        k.clone(),
                        Param {
                            tag: p.tag,
                            value: Tensor::zeros(p.value.shape()),
                        },
                    )
                })
                .collect(),
        }
    }

    /// Overwrites (or adds) every entry of `other` into `self`.
    pub fn overwrite_with(&mut self, other: &ParamSet) {
        for (k, p) in &other.entries {
            self.entries.insert(k.clone(), p.clone());
        }
    }

    /// Keys and shapes of `other` must match `self` exactly.
    pub fn check_compatible(&self, other: &ParamSet) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(FedError::KeyMismatch(format!(
                "{} entries vs {}",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for ((ka, pa), (kb, pb)) in self.entries.iter().zip(&other.entries) {
            if ka != kb {
                return Err(FedError::KeyMismatch(format!("`{ka}` vs `{kb}`")));
            }
            if pa.value.shape() != pb.value.shape() {
                return Err(FedError::KeyMismatch(format!(
                    "`{ka}` has shape {:?} vs {:?}",
                    pa.value.shape(),
                    pb.value.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn norm_sq(&self) -> f64 {
        self.entries
            .values()
            .flat_map(|p| p.value.data())
            .map(|v| v * v)
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.entries.values().all(|p| p.value.is_finite())
    }

    /// Entry holding the largest absolute value, with that value.
    pub fn max_abs(&self) -> Option<(&str, f64)> {
        self.entries
            .iter()
            .map(|(k, p)| (k.as_str(), p.value.data().iter().fold(0.0f64, |m, v| m.max(v.abs()))))
            .max_by(|a, b| a.1.total_cmp(&b.1))
    }

    /// First non-finite entry name, if any.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.entries
            .iter()
            .find(|(_, p)| !p.value.is_finite())
            .map(|(k, _)| k.as_str())
    }

    /// `self += a * other` over the keys of `other` (which must exist here).
    pub fn add_scaled(&mut self, a: f64, other: &ParamSet) -> Result<()> {
        for (k, p) in &other.entries {
            let dst = self
                .entries
                .get_mut(k)
                .ok_or_else(|| FedError::KeyMismatch(format!("`{k}` missing")))?;
            if dst.value.shape() != p.value.shape() {
                return Err(FedError::KeyMismatch(format!("`{k}` shape differs")));
            }
            for (d, s) in dst.value.data_mut().iter_mut().zip(p.value.data()) {
                *d += a * s;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, a: f64) {
        for p in self.entries.values_mut() {
            for v in p.value.data_mut() {
                *v *= a;
            }
        }
    }

    pub fn dot(&self, other: &ParamSet) -> Result<f64> {
        self.check_compatible(other)?;
        Ok(self
            .entries
            .values()
            .zip(other.entries.values())
            .map(|(a, b)| {
                a.value
                    .data()
                    .iter()
                    .zip(b.value.data())
                    .map(|(x, y)| x * y)
                    .sum::<f64>()
            })
            .sum())
    }

    /// Concatenated values in iteration order.
    pub fn flatten(&self) -> Vec<f64> {
        self.entries
            .values()
            .flat_map(|p| p.value.data().iter().copied())
            .collect()
    }
}

/// Sub-map of the entries tagged with one of `tags`.
pub fn partition_filter(theta: &ParamSet, tags: &[Partition]) -> ParamSet {
    theta.filter(tags)
}

/// Element-wise `a * first + b * second`; tags come from `first`.
pub fn param_axpy(a: f64, first: &ParamSet, b: f64, second: &ParamSet) -> Result<ParamSet> {
    first.check_compatible(second)?;
    let mut out = first.clone();
    for ((_, dst), (_, src)) in out.entries.iter_mut().zip(&second.entries) {
        for (d, s) in dst.value.data_mut().iter_mut().zip(src.value.data()) {
            *d = a * *d + b * s;
        }
    }
    Ok(out)
}

/// `first - second`.
pub fn param_diff(first: &ParamSet, second: &ParamSet) -> Result<ParamSet> {
    param_axpy(1.0, first, -1.0, second)
}

pub fn param_norm_sq(theta: &ParamSet) -> f64 {
    theta.norm_sq()
}

/// `theta - lr * grad` on the trainable entries named in `grad`.
pub fn sgd_step(theta: &ParamSet, grad: &ParamSet, lr: f64) -> Result<ParamSet> {
    let mut out = theta.clone();
    sgd_step_in_place(&mut out, grad, lr)?;
    Ok(out)
}

pub fn sgd_step_in_place(theta: &mut ParamSet, grad: &ParamSet, lr: f64) -> Result<()> {
    for k in grad.entries.keys() {
        match theta.entries.get(k) {
            Some(p) if !p.tag.is_trainable() => {
                return Err(FedError::KeyMismatch(format!(
                    "`{k}` holds running statistics and cannot take a gradient step"
                )))
            }
            Some(_) => {}
            None => return Err(FedError::KeyMismatch(format!("gradient key `{k}` not in model"))),
        }
    }
    theta.add_scaled(-lr, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("fc1.weight", Partition::Body, Tensor::from_vec(vec![1.0, 2.0]));
        p.insert("bn1.gamma", Partition::NormAffine, Tensor::from_vec(vec![1.0]));
        p.insert("bn1.running_mean", Partition::NormStats, Tensor::from_vec(vec![0.0]));
        p.insert("head.weight", Partition::Head, Tensor::from_vec(vec![-1.0]));
        p
    }

    #[test]
    fn sgd_arithmetic() {
        let mut p = ParamSet::new();
        p.insert("w", Partition::Body, Tensor::from_vec(vec![1.0]));
        let mut g = ParamSet::new();
        g.insert("w", Partition::Body, Tensor::from_vec(vec![2.0]));
        let out = sgd_step(&p, &g, 0.1).unwrap();
        assert!((out.get("w").unwrap().data()[0] - 0.8).abs() < 1e-15);
        assert_eq!(sgd_step(&p, &g, 0.0).unwrap(), p);
    }

    #[test]
    fn sgd_rejects_stats_and_unknown_keys() {
        let p = sample();
        let mut g = ParamSet::new();
        g.insert("bn1.running_mean", Partition::NormStats, Tensor::from_vec(vec![1.0]));
        assert!(sgd_step(&p, &g, 0.1).is_err());
        let mut g2 = ParamSet::new();
        g2.insert("nope", Partition::Body, Tensor::from_vec(vec![1.0]));
        assert!(sgd_step(&p, &g2, 0.1).is_err());
    }

    #[test]
    fn partitions_cover_everything() {
        let p = sample();
        assert_eq!(partition_filter(&p, &Partition::ALL), p);
        let total: usize = Partition::ALL
            .iter()
            .map(|t| partition_filter(&p, &[*t]).len())
            .sum();
        assert_eq!(total, p.len());
        let mut rebuilt = p.complement(&[Partition::Head]);
        rebuilt.overwrite_with(&p.filter(&[Partition::Head]));
        assert_eq!(rebuilt, p);
    }

    #[test]
    fn axpy_identities() {
        let p = sample();
        assert_eq!(param_axpy(1.0, &p, 0.0, &p).unwrap(), p);
        assert_eq!(param_axpy(0.5, &p, 0.5, &p).unwrap(), p);
        assert_eq!(param_norm_sq(&param_diff(&p, &p).unwrap()), 0.0);
        let mut other = p.clone();
        other.insert("extra", Partition::Body, Tensor::from_vec(vec![0.0]));
        assert!(param_axpy(1.0, &p, 1.0, &other).is_err());
    }
}
