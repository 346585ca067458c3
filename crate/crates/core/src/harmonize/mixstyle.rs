use crate::harmonize::STD_FLOOR;
use crate::numerics::{mean_std, tensor_stats, MeanStd, RngStream, StatAxis, Tensor};

/// Style statistics transfer: re-normalises `x` from its own statistics to
/// the target statistics, channel by channel (channel-first layout).
pub(crate) fn transfer_stats(x: &Tensor, own: &[MeanStd], target: &[MeanStd]) -> Tensor {
    let channels = own.len();
    let inner = x.numel() / channels;
    let mut out = x.data().to_vec();
    for (c, chunk) in out.chunks_mut(inner).enumerate() {
        let scale = target[c].std / own[c].std.max(STD_FLOOR);
        let shift = target[c].mean - own[c].mean;
        // Written as a correction to `v` so that transferring a tensor's own
        // statistics returns it bit for bit.
        for v in chunk {
            *v += (scale - 1.0) * (*v - own[c].mean) + shift;
        }
    }
    Tensor::from_parts(x.shape().to_vec(), out)
}

/// Input-level MixStyle: per-channel statistics of `x` are interpolated
/// towards those of `peer` with `lambda ~ Beta(alpha, alpha)`.
pub fn apply_mixstyle_input(x: &Tensor, peer: &Tensor, alpha: f64, rng: &mut RngStream) -> Tensor {
    let lambda = rng.beta(alpha);
    apply_mixstyle_input_with(x, peer, lambda)
}

/// Input-level MixStyle with a fixed mixing weight.
pub fn apply_mixstyle_input_with(x: &Tensor, peer: &Tensor, lambda: f64) -> Tensor {
    let own = tensor_stats(x, StatAxis::PerChannel);
    let other = tensor_stats(peer, StatAxis::PerChannel);
    let mixed: Vec<MeanStd> = own
        .iter()
        .zip(&other)
        .map(|(a, b)| MeanStd {
            mean: lambda * a.mean + (1.0 - lambda) * b.mean,
            std: lambda * a.std + (1.0 - lambda) * b.std,
        })
        .collect();
    transfer_stats(x, &own, &mixed)
}

/// Feature-level MixStyle settings, active only in training forwards.
pub struct FeatureMixStyle<'a> {
    pub alpha: f64,
    pub rng: &'a mut RngStream,
    /// Fixes every instance's mixing weight instead of sampling it.
    pub force_lambda: Option<f64>,
}

/// Result of mixing a `[B, C, P]` activation buffer. `scale` holds the
/// per-group factor `sigma_mix / sigma_own` used by the backward pass
/// (statistics are treated as constants).
pub(crate) struct MixedFeatures {
    pub values: Vec<f64>,
    pub scale: Vec<f64>,
    pub group_len: usize,
}

/// Statistics groups: one per (instance, channel) over positions, or one
/// per instance when there is a single position (dense features).
pub(crate) fn mix_features(
    x: &[f64],
    batch: usize,
    channels: usize,
    positions: usize,
    hook: &mut FeatureMixStyle<'_>,
) -> MixedFeatures {
    let group_len = if positions > 1 { positions } else { channels };
    let groups_per_instance = x.len() / batch / group_len;
    if batch < 2 {
        return MixedFeatures {
            values: x.to_vec(),
            scale: vec![1.0; x.len() / group_len],
            group_len,
        };
    }
    let stats: Vec<MeanStd> = x.chunks(group_len).map(mean_std).collect();
    let perm = hook.rng.permutation(batch);
    let lambdas: Vec<f64> = (0..batch)
        .map(|_| match hook.force_lambda {
            Some(l) => l,
            None => hook.rng.beta(hook.alpha),
        })
        .collect();
    let mut values = vec![0.0; x.len()];
    let mut scale = vec![0.0; stats.len()];
    for b in 0..batch {
        let lam = lambdas[b];
        for g in 0..groups_per_instance {
            let own = stats[b * groups_per_instance + g];
            let other = stats[perm[b] * groups_per_instance + g];
            let mu = lam * own.mean + (1.0 - lam) * other.mean;
            let sd = lam * own.std + (1.0 - lam) * other.std;
            let s = sd / own.std.max(STD_FLOOR);
            let gi = b * groups_per_instance + g;
            scale[gi] = s;
            let r = gi * group_len..(gi + 1) * group_len;
            for i in r {
                values[i] = x[i] + (s - 1.0) * (x[i] - own.mean) + (mu - own.mean);
            }
        }
    }
    MixedFeatures {
        values,
        scale,
        group_len,
    }
}

/// Feature-level MixStyle on a `[B, C, ...]` (or `[B, C]`) tensor.
/// Batches of fewer than two instances pass through unchanged.
pub fn feature_mixstyle_hook(features: &Tensor, alpha: f64, rng: &mut RngStream) -> Tensor {
    let shape = features.shape();
    let batch = shape[0];
    let channels = if shape.len() > 1 { shape[1] } else { 1 };
    let positions = features.numel() / batch / channels;
    let mut hook = FeatureMixStyle {
        alpha,
        rng,
        force_lambda: None,
    };
    let mixed = mix_features(features.data(), batch, channels, positions, &mut hook);
    Tensor::from_parts(shape.to_vec(), mixed.values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_example() {
        let x = Tensor::new(vec![1, 2], vec![0.0, 2.0]).unwrap();
        // peer with mean 5, population std 3
        let peer = Tensor::new(vec![1, 2], vec![2.0, 8.0]).unwrap();
        let out = apply_mixstyle_input_with(&x, &peer, 0.0);
        assert!((out.data()[0] - 2.0).abs() < 1e-12);
        assert!((out.data()[1] - 8.0).abs() < 1e-12);
        assert_eq!(apply_mixstyle_input_with(&x, &peer, 1.0), x);
    }

    #[test]
    fn single_instance_batch_is_identity() {
        let f = Tensor::new(vec![1, 2, 3], vec![1., 2., 3., 4., 5., 7.]).unwrap();
        let mut rng = RngStream::new(1, 0, 0, "t");
        assert_eq!(feature_mixstyle_hook(&f, 0.1, &mut rng), f);
    }
}
