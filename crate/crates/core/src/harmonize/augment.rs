use serde::{Deserialize, Serialize};

use crate::model::Batch;
use crate::numerics::{RngStream, Tensor};

/// Geometric and intensity augmentation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentParams {
    pub p_hflip: f64,
    pub p_vflip: f64,
    /// Probability of a rotation by 90, 180 or 270 degrees (square images).
    pub p_rot90: f64,
    pub p_brightness: f64,
    /// Additive brightness offset drawn from `U(-b, b)`.
    pub brightness: f64,
    pub p_contrast: f64,
    /// Contrast factor drawn from `U(1 - c, 1 + c)` around the image mean.
    pub contrast: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        AugmentParams {
            p_hflip: 0.5,
            p_vflip: 0.5,
            p_rot90: 0.5,
            p_brightness: 0.5,
            brightness: 0.1,
            p_contrast: 0.5,
            contrast: 0.2,
        }
    }
}

impl AugmentParams {
    pub fn disabled() -> Self {
        AugmentParams {
            p_hflip: 0.0,
            p_vflip: 0.0,
            p_rot90: 0.0,
            p_brightness: 0.0,
            brightness: 0.0,
            p_contrast: 0.0,
            contrast: 0.0,
        }
    }
}

/// Planes of `h x w` values stored back to back.
fn remap(data: &[f64], h: usize, w: usize, f: impl Fn(usize, usize) -> (usize, usize)) -> Vec<f64> {
    let plane = h * w;
    let mut out = vec![0.0; data.len()];
    for (src, dst) in data.chunks(plane).zip(out.chunks_mut(plane)) {
        for y in 0..h {
            for x in 0..w {
                let (sy, sx) = f(y, x);
                dst[y * w + x] = src[sy * w + sx];
            }
        }
    }
    out
}

pub fn hflip(data: &[f64], h: usize, w: usize) -> Vec<f64> {
    remap(data, h, w, |y, x| (y, w - 1 - x))
}

pub fn vflip(data: &[f64], h: usize, w: usize) -> Vec<f64> {
    remap(data, h, w, |y, x| (h - 1 - y, x))
}

/// Quarter turn of square planes.
pub fn rot90(data: &[f64], n: usize) -> Vec<f64> {
    remap(data, n, n, |y, x| (x, n - 1 - y))
}

fn plane_dims(shape: &[usize]) -> (usize, usize) {
    let n = shape.len();
    (shape[n - 2], shape[n - 1])
}

/// Augments one `[C, H, W]` image and, if given, its `[H, W]` mask.
/// Geometric operations act on both; intensity jitter only on the image.
pub fn apply_augment(
    x: &Tensor,
    mask: Option<&Tensor>,
    params: &AugmentParams,
    rng: &mut RngStream,
) -> (Tensor, Option<Tensor>) {
    let (h, w) = plane_dims(x.shape());
    let mut img = x.data().to_vec();
    let mut m = mask.map(|t| t.data().to_vec());
    let mut geometric = |f: &dyn Fn(&[f64]) -> Vec<f64>| {
        img = f(&img);
        if let Some(mv) = m.as_mut() {
            *mv = f(mv);
        }
    };
    if rng.bernoulli(params.p_hflip) {
        geometric(&|d| hflip(d, h, w));
    }
    if rng.bernoulli(params.p_vflip) {
        geometric(&|d| vflip(d, h, w));
    }
    if h == w && rng.bernoulli(params.p_rot90) {
        let turns = 1 + rng.below(3);
        for _ in 0..turns {
            geometric(&|d| rot90(d, h));
        }
    }
    if rng.bernoulli(params.p_contrast) {
        let factor = rng.uniform_in(1.0 - params.contrast, 1.0 + params.contrast);
        let mean = img.iter().sum::<f64>() / img.len() as f64;
        for v in img.iter_mut() {
            *v = (mean + factor * (*v - mean)).clamp(0.0, 1.0);
        }
    }
    if rng.bernoulli(params.p_brightness) {
        let offset = rng.uniform_in(-params.brightness, params.brightness);
        for v in img.iter_mut() {
            *v = (*v + offset).clamp(0.0, 1.0);
        }
    }
    let out = Tensor::from_parts(x.shape().to_vec(), img);
    let out_mask = mask.zip(m).map(|(t, d)| Tensor::from_parts(t.shape().to_vec(), d));
    (out, out_mask)
}

/// Augments every sample of a batch. With `dense_targets` the targets are
/// per-pixel and follow the geometric operations.
pub fn augment_batch(batch: &Batch, dense_targets: bool, params: &AugmentParams, rng: &mut RngStream) -> Batch {
    let n = batch.len();
    let (h, w) = plane_dims(batch.inputs.shape());
    let mut images = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(batch.targets.len());
    for i in 0..n {
        let x = batch.inputs.slice0(i);
        if dense_targets {
            let t = &batch.targets[i * h * w..(i + 1) * h * w];
            let m = Tensor::from_parts(vec![h, w], t.iter().map(|&v| v as f64).collect());
            let (xa, ma) = apply_augment(&x, Some(&m), params, rng);
            images.push(xa);
            targets.extend(ma.expect("mask passed").data().iter().map(|&v| v as usize));
        } else {
            let (xa, _) = apply_augment(&x, None, params, rng);
            images.push(xa);
            targets.push(batch.targets[i]);
        }
    }
    Batch {
        inputs: Tensor::stack(&images).expect("equal shapes"),
        targets,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flips_are_involutions() {
        let d: Vec<f64> = (0..12).map(f64::from).collect();
        assert_eq!(hflip(&hflip(&d, 3, 4), 3, 4), d);
        assert_eq!(vflip(&vflip(&d, 3, 4), 3, 4), d);
        let sq: Vec<f64> = (0..9).map(f64::from).collect();
        let four = (0..4).fold(sq.clone(), |acc, _| rot90(&acc, 3));
        assert_eq!(four, sq);
    }

    #[test]
    fn disabled_is_identity() {
        let x = Tensor::new(vec![1, 2, 2], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let mut rng = RngStream::new(0, 0, 0, "a");
        let (y, _) = apply_augment(&x, None, &AugmentParams::disabled(), &mut rng);
        assert_eq!(y, x);
    }
}
