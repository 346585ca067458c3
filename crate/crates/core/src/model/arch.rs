use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};
use crate::harmonize::{mix_features, FeatureMixStyle};
use crate::model::layers::*;
use crate::model::loss::{loss_and_dlogits, predictions, LossKind};
use crate::model::params::{ParamSet, Partition};
use crate::numerics::{RngStream, Tensor, SERVER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    /// Single affine layer on flattened inputs.
    Logreg,
    /// Two hidden layers, each linear -> batch-norm -> softplus.
    MlpBn,
    /// Two-level encoder/decoder emitting per-pixel logits.
    TinyConvseg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Fully resolved model description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub arch: Arch,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Logits per position (1 for `bce_logits`).
    pub outputs: usize,
    /// Hidden widths (mlp_bn) or encoder channel counts (tiny_convseg).
    pub hidden: [usize; 2],
    pub loss: LossKind,
    /// Layer whose activations feed the feature-level MixStyle hook.
    pub hook_layer: String,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.height == 0 || self.width == 0 {
            return Err(FedError::config("model.input", "input dimensions must be positive"));
        }
        match self.loss {
            LossKind::BceLogits if self.outputs != 1 => {
                return Err(FedError::config("model.loss", "bce_logits needs exactly one output"))
            }
            LossKind::SoftmaxCe if self.outputs < 2 => {
                return Err(FedError::config("model.loss", "softmax_ce needs at least two outputs"))
            }
            _ => {}
        }
        if self.arch != Arch::Logreg && self.hidden.contains(&0) {
            return Err(FedError::config("model.hidden", "hidden sizes must be positive"));
        }
        if self.arch == Arch::TinyConvseg && (self.height % 2 != 0 || self.width % 2 != 0) {
            return Err(FedError::config("model.arch", "tiny_convseg needs even height and width"));
        }
        let valid_hooks: &[&str] = match self.arch {
            Arch::Logreg => &["input"],
            Arch::MlpBn => &["fc1", "fc2"],
            Arch::TinyConvseg => &["enc1", "enc2"],
        };
        if !valid_hooks.contains(&self.hook_layer.as_str()) {
            return Err(FedError::config(
                "model.hook_layer",
                format!("`{}` is not one of {valid_hooks:?}", self.hook_layer),
            ));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// Scored positions per sample (pixels for segmentation, else 1).
    pub fn positions(&self) -> usize {
        match self.arch {
            Arch::TinyConvseg => self.height * self.width,
            _ => 1,
        }
    }

    pub fn has_norm(&self) -> bool {
        self.arch != Arch::Logreg
    }
}

/// Inputs `[B, C, H, W]` and one target class per scored position.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Tensor,
    pub targets: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.inputs.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Optional training-time hooks.
#[derive(Default)]
pub struct Hooks<'a> {
    pub feature_mixstyle: Option<FeatureMixStyle<'a>>,
}

impl Hooks<'_> {
    pub fn none() -> Self {
        Hooks::default()
    }
}

fn uniform_init(shape: &[usize], fan_in: usize, rng: &mut RngStream) -> Tensor {
    let s = 1.0 / (fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    Tensor::from_parts(shape.to_vec(), (0..n).map(|_| rng.uniform_in(-s, s)).collect())
}

fn insert_bn(p: &mut ParamSet, name: &str, width: usize) {
    p.insert(format!("{name}.gamma"), Partition::NormAffine, Tensor::filled(&[width], 1.0));
    p.insert(format!("{name}.beta"), Partition::NormAffine, Tensor::zeros(&[width]));
    p.insert(format!("{name}.running_mean"), Partition::NormStats, Tensor::zeros(&[width]));
    p.insert(format!("{name}.running_var"), Partition::NormStats, Tensor::filled(&[width], 1.0));
}

/// Default tagging: last layer is the head, normalisation parameters are
/// norm, everything else is body. Weights are `U(-s, s)`, `s = 1/sqrt(fan_in)`,
/// each layer drawing from its own stream of `seed`.
pub fn init_params(spec: &ModelSpec, seed: u64) -> ParamSet {
    let layer_rng = |name: &str| RngStream::new(seed, SERVER, 0, &format!("init:{name}"));
    let mut p = ParamSet::new();
    let o = spec.outputs;
    match spec.arch {
        Arch::Logreg => {
            let d = spec.input_dim();
            p.insert("head.weight", Partition::Head, uniform_init(&[o, d], d, &mut layer_rng("head")));
            p.insert("head.bias", Partition::Head, Tensor::zeros(&[o]));
        }
        Arch::MlpBn => {
            let d = spec.input_dim();
            let [h1, h2] = spec.hidden;
            p.insert("fc1.weight", Partition::Body, uniform_init(&[h1, d], d, &mut layer_rng("fc1")));
            insert_bn(&mut p, "bn1", h1);
            p.insert("fc2.weight", Partition::Body, uniform_init(&[h2, h1], h1, &mut layer_rng("fc2")));
            insert_bn(&mut p, "bn2", h2);
            p.insert("head.weight", Partition::Head, uniform_init(&[o, h2], h2, &mut layer_rng("head")));
            p.insert("head.bias", Partition::Head, Tensor::zeros(&[o]));
        }
        Arch::TinyConvseg => {
            let c = spec.channels;
            let [f1, f2] = spec.hidden;
            p.insert("enc1.weight", Partition::Body, uniform_init(&[f1, c, 3, 3], c * 9, &mut layer_rng("enc1")));
            insert_bn(&mut p, "bn1", f1);
            p.insert("enc2.weight", Partition::Body, uniform_init(&[f2, f1, 3, 3], f1 * 9, &mut layer_rng("enc2")));
            insert_bn(&mut p, "bn2", f2);
            p.insert("head.weight", Partition::Head, uniform_init(&[o, f1 + f2], f1 + f2, &mut layer_rng("head")));
            p.insert("head.bias", Partition::Head, Tensor::zeros(&[o]));
        }
    }
    p
}

fn param<'a>(theta: &'a ParamSet, name: &str) -> Result<&'a [f64]> {
    theta
        .get(name)
        .map(Tensor::data)
        .ok_or_else(|| FedError::KeyMismatch(format!("model parameter `{name}` missing")))
}

struct BnLayer {
    cache: BnCache,
    /// Pre-activation (BN output) for the softplus derivative.
    pre: Vec<f64>,
    /// Per-group MixStyle scale when the hook fired on this layer.
    mix: Option<(Vec<f64>, usize)>,
}

enum Cache {
    Logreg {
        x: Vec<f64>,
    },
    Mlp {
        x: Vec<f64>,
        l1: BnLayer,
        a1: Vec<f64>,
        l2: BnLayer,
        a2: Vec<f64>,
    },
    Conv {
        x: Vec<f64>,
        l1: BnLayer,
        pooled: Vec<f64>,
        l2: BnLayer,
        cat: Vec<f64>,
    },
}

/// Forward result. Logits are laid out `[B, outputs, positions]`.
pub struct ForwardOutput {
    pub logits: Tensor,
    /// Updated running statistics after a training-mode pass.
    pub running_stats: Option<ParamSet>,
    cache: Cache,
}

struct NormAct {
    out: Vec<f64>,
    layer: BnLayer,
    running: Option<(Vec<f64>, Vec<f64>)>,
}

#[allow(clippy::too_many_arguments)]
fn norm_act(
    theta: &ParamSet,
    name: &str,
    z: &[f64],
    batch: usize,
    channels: usize,
    positions: usize,
    mode: Mode,
    hook: Option<&mut FeatureMixStyle<'_>>,
) -> Result<NormAct> {
    let bn = bn_forward(
        z,
        batch,
        channels,
        positions,
        param(theta, &format!("{name}.gamma"))?,
        param(theta, &format!("{name}.beta"))?,
        param(theta, &format!("{name}.running_mean"))?,
        param(theta, &format!("{name}.running_var"))?,
        mode == Mode::Train,
    );
    let mut out: Vec<f64> = bn.y.iter().map(|&v| softplus(v)).collect();
    let mut mix = None;
    if let (Some(h), Mode::Train) = (hook, mode) {
        let mixed = mix_features(&out, batch, channels, positions, h);
        out = mixed.values;
        mix = Some((mixed.scale, mixed.group_len));
    }
    Ok(NormAct {
        out,
        layer: BnLayer {
            cache: bn.cache,
            pre: bn.y,
            mix,
        },
        running: bn.running,
    })
}

/// Gradient through (MixStyle) -> softplus -> BN, accumulating affine grads.
fn norm_act_backward(
    theta: &ParamSet,
    name: &str,
    layer: &BnLayer,
    mut d: Vec<f64>,
    batch: usize,
    channels: usize,
    positions: usize,
    grad: &mut ParamSet,
) -> Result<Vec<f64>> {
    if let Some((scale, group_len)) = &layer.mix {
        for (g, chunk) in d.chunks_mut(*group_len).enumerate() {
            chunk.iter_mut().for_each(|v| *v *= scale[g]);
        }
    }
    for (v, &pre) in d.iter_mut().zip(&layer.pre) {
        *v *= sigmoid(pre);
    }
    let gamma = param(theta, &format!("{name}.gamma"))?;
    let (dz, dgamma, dbeta) = bn_backward(&d, batch, channels, positions, gamma, &layer.cache);
    grad.insert(format!("{name}.gamma"), Partition::NormAffine, Tensor::from_parts(vec![channels], dgamma));
    grad.insert(format!("{name}.beta"), Partition::NormAffine, Tensor::from_parts(vec![channels], dbeta));
    Ok(dz)
}

fn stats_entry(out: &mut ParamSet, name: &str, running: Option<(Vec<f64>, Vec<f64>)>) {
    if let Some((rm, rv)) = running {
        let n = rm.len();
        out.insert(format!("{name}.running_mean"), Partition::NormStats, Tensor::from_parts(vec![n], rm));
        out.insert(format!("{name}.running_var"), Partition::NormStats, Tensor::from_parts(vec![n], rv));
    }
}

fn check_input(spec: &ModelSpec, x: &Tensor) -> Result<usize> {
    let batch = *x.shape().first().unwrap_or(&0);
    if batch == 0 || x.numel() != batch * spec.input_dim() {
        return Err(FedError::Shape(format!(
            "model expects [B, {}, {}, {}] inputs, got {:?}",
            spec.channels,
            spec.height,
            spec.width,
            x.shape()
        )));
    }
    Ok(batch)
}

/// Runs the model. Training mode normalises with batch statistics and
/// reports updated running statistics; hooks only fire in training mode.
pub fn forward(
    spec: &ModelSpec,
    theta: &ParamSet,
    x: &Tensor,
    mode: Mode,
    hooks: &mut Hooks<'_>,
) -> Result<ForwardOutput> {
    let batch = check_input(spec, x)?;
    let o = spec.outputs;
    let xs = x.data();
    let mut running = ParamSet::new();
    let (logits, positions, cache) = match spec.arch {
        Arch::Logreg => {
            let d = spec.input_dim();
            let y = linear_forward(xs, batch, d, param(theta, "head.weight")?, o, Some(param(theta, "head.bias")?));
            (y, 1, Cache::Logreg { x: xs.to_vec() })
        }
        Arch::MlpBn => {
            let d = spec.input_dim();
            let [h1, h2] = spec.hidden;
            let z1 = linear_forward(xs, batch, d, param(theta, "fc1.weight")?, h1, None);
            let hook1 = if spec.hook_layer == "fc1" { hooks.feature_mixstyle.as_mut() } else { None };
            let n1 = norm_act(theta, "bn1", &z1, batch, h1, 1, mode, hook1)?;
            let z2 = linear_forward(&n1.out, batch, h1, param(theta, "fc2.weight")?, h2, None);
            let hook2 = if spec.hook_layer == "fc2" { hooks.feature_mixstyle.as_mut() } else { None };
            let n2 = norm_act(theta, "bn2", &z2, batch, h2, 1, mode, hook2)?;
            let y = linear_forward(&n2.out, batch, h2, param(theta, "head.weight")?, o, Some(param(theta, "head.bias")?));
            stats_entry(&mut running, "bn1", n1.running);
            stats_entry(&mut running, "bn2", n2.running);
            (
                y,
                1,
                Cache::Mlp {
                    x: xs.to_vec(),
                    l1: n1.layer,
                    a1: n1.out,
                    l2: n2.layer,
                    a2: n2.out,
                },
            )
        }
        Arch::TinyConvseg => {
            let (c, h, w) = (spec.channels, spec.height, spec.width);
            let [f1, f2] = spec.hidden;
            let (hh, hw) = (h / 2, w / 2);
            let z1 = conv3x3_forward(xs, batch, c, h, w, param(theta, "enc1.weight")?, f1);
            let hook1 = if spec.hook_layer == "enc1" { hooks.feature_mixstyle.as_mut() } else { None };
            let n1 = norm_act(theta, "bn1", &z1, batch, f1, h * w, mode, hook1)?;
            let pooled = avgpool2_forward(&n1.out, batch * f1, h, w);
            let z2 = conv3x3_forward(&pooled, batch, f1, hh, hw, param(theta, "enc2.weight")?, f2);
            let hook2 = if spec.hook_layer == "enc2" { hooks.feature_mixstyle.as_mut() } else { None };
            let n2 = norm_act(theta, "bn2", &z2, batch, f2, hh * hw, mode, hook2)?;
            let up = upsample2_forward(&n2.out, batch * f2, hh, hw);
            let plane = h * w;
            let mut cat = Vec::with_capacity(batch * (f1 + f2) * plane);
            for b in 0..batch {
                cat.extend_from_slice(&n1.out[b * f1 * plane..(b + 1) * f1 * plane]);
                cat.extend_from_slice(&up[b * f2 * plane..(b + 1) * f2 * plane]);
            }
            let y = conv1x1_forward(&cat, batch, f1 + f2, plane, param(theta, "head.weight")?, param(theta, "head.bias")?, o);
            stats_entry(&mut running, "bn1", n1.running);
            stats_entry(&mut running, "bn2", n2.running);
            (
                y,
                plane,
                Cache::Conv {
                    x: xs.to_vec(),
                    l1: n1.layer,
                    pooled,
                    l2: n2.layer,
                    cat,
                },
            )
        }
    };
    Ok(ForwardOutput {
        logits: Tensor::from_parts(vec![batch, o, positions], logits),
        running_stats: (mode == Mode::Train && !running.is_empty()).then_some(running),
        cache,
    })
}

fn backward(spec: &ModelSpec, theta: &ParamSet, cache: &Cache, dlogits: &[f64], batch: usize) -> Result<ParamSet> {
    let o = spec.outputs;
    let mut grad = ParamSet::new();
    match cache {
        Cache::Logreg { x } => {
            let d = spec.input_dim();
            let (_, dw, db) = linear_backward(x, batch, d, param(theta, "head.weight")?, o, dlogits, false);
            grad.insert("head.weight", Partition::Head, Tensor::from_parts(vec![o, d], dw));
            grad.insert("head.bias", Partition::Head, Tensor::from_parts(vec![o], db));
        }
        Cache::Mlp { x, l1, a1, l2, a2 } => {
            let d = spec.input_dim();
            let [h1, h2] = spec.hidden;
            let (da2, dw3, db3) = linear_backward(a2, batch, h2, param(theta, "head.weight")?, o, dlogits, true);
            grad.insert("head.weight", Partition::Head, Tensor::from_parts(vec![o, h2], dw3));
            grad.insert("head.bias", Partition::Head, Tensor::from_parts(vec![o], db3));
            let dz2 = norm_act_backward(theta, "bn2", l2, da2, batch, h2, 1, &mut grad)?;
            let (da1, dw2, _) = linear_backward(a1, batch, h1, param(theta, "fc2.weight")?, h2, &dz2, true);
            grad.insert("fc2.weight", Partition::Body, Tensor::from_parts(vec![h2, h1], dw2));
            let dz1 = norm_act_backward(theta, "bn1", l1, da1, batch, h1, 1, &mut grad)?;
            let (_, dw1, _) = linear_backward(x, batch, d, param(theta, "fc1.weight")?, h1, &dz1, false);
            grad.insert("fc1.weight", Partition::Body, Tensor::from_parts(vec![h1, d], dw1));
        }
        Cache::Conv { x, l1, pooled, l2, cat } => {
            let (c, h, w) = (spec.channels, spec.height, spec.width);
            let [f1, f2] = spec.hidden;
            let (hh, hw) = (h / 2, w / 2);
            let plane = h * w;
            let (dcat, dwh, dbh) = conv1x1_backward(cat, batch, f1 + f2, plane, param(theta, "head.weight")?, o, dlogits);
            grad.insert("head.weight", Partition::Head, Tensor::from_parts(vec![o, f1 + f2], dwh));
            grad.insert("head.bias", Partition::Head, Tensor::from_parts(vec![o], dbh));
            let mut da1 = Vec::with_capacity(batch * f1 * plane);
            let mut dup = Vec::with_capacity(batch * f2 * plane);
            for b in 0..batch {
                let base = b * (f1 + f2) * plane;
                da1.extend_from_slice(&dcat[base..base + f1 * plane]);
                dup.extend_from_slice(&dcat[base + f1 * plane..base + (f1 + f2) * plane]);
            }
            let da2 = upsample2_backward(&dup, batch * f2, hh, hw);
            let dz2 = norm_act_backward(theta, "bn2", l2, da2, batch, f2, hh * hw, &mut grad)?;
            let (dpooled, dw2) = conv3x3_backward(pooled, batch, f1, hh, hw, param(theta, "enc2.weight")?, f2, &dz2, true);
            grad.insert("enc2.weight", Partition::Body, Tensor::from_parts(vec![f2, f1, 3, 3], dw2));
            let from_pool = avgpool2_backward(&dpooled, batch * f1, h, w);
            for (d, p) in da1.iter_mut().zip(from_pool) {
                *d += p;
            }
            let dz1 = norm_act_backward(theta, "bn1", l1, da1, batch, f1, plane, &mut grad)?;
            let (_, dw1) = conv3x3_backward(x, batch, c, h, w, param(theta, "enc1.weight")?, f1, &dz1, false);
            grad.insert("enc1.weight", Partition::Body, Tensor::from_parts(vec![f1, c, 3, 3], dw1));
        }
    }
    Ok(grad)
}

fn check_targets(spec: &ModelSpec, batch: &Batch) -> Result<()> {
    let expected = batch.len() * spec.positions();
    if batch.targets.len() != expected {
        return Err(FedError::Shape(format!(
            "expected {expected} targets, got {}",
            batch.targets.len()
        )));
    }
    let classes = if spec.loss == LossKind::BceLogits { 2 } else { spec.outputs };
    if let Some(t) = batch.targets.iter().find(|&&t| t >= classes) {
        return Err(FedError::Shape(format!("target {t} out of range for {classes} classes")));
    }
    Ok(())
}

pub struct LossGrad {
    pub loss: f64,
    /// Gradient for every trainable entry of the model.
    pub grad: ParamSet,
    pub running_stats: Option<ParamSet>,
}

/// Mean loss over scored elements and its exact gradient.
pub fn loss_and_grad(
    spec: &ModelSpec,
    theta: &ParamSet,
    batch: &Batch,
    mode: Mode,
    hooks: &mut Hooks<'_>,
) -> Result<LossGrad> {
    check_targets(spec, batch)?;
    let fwd = forward(spec, theta, &batch.inputs, mode, hooks)?;
    let b = batch.len();
    let positions = spec.positions();
    let (loss, dlogits) = loss_and_dlogits(spec.loss, fwd.logits.data(), b, spec.outputs, positions, &batch.targets);
    let grad = backward(spec, theta, &fwd.cache, &dlogits, b)?;
    Ok(LossGrad {
        loss,
        grad,
        running_stats: fwd.running_stats,
    })
}

/// Loss only, without hooks.
pub fn loss_value(spec: &ModelSpec, theta: &ParamSet, batch: &Batch, mode: Mode) -> Result<f64> {
    check_targets(spec, batch)?;
    let fwd = forward(spec, theta, &batch.inputs, mode, &mut Hooks::none())?;
    let (loss, _) = loss_and_dlogits(
        spec.loss,
        fwd.logits.data(),
        batch.len(),
        spec.outputs,
        spec.positions(),
        &batch.targets,
    );
    Ok(loss)
}

/// Evaluation-mode hard predictions, one per scored position.
pub fn predict(spec: &ModelSpec, theta: &ParamSet, x: &Tensor) -> Result<Vec<usize>> {
    let fwd = forward(spec, theta, x, Mode::Eval, &mut Hooks::none())?;
    Ok(predictions(
        spec.loss,
        fwd.logits.data(),
        x.shape()[0],
        spec.outputs,
        spec.positions(),
    ))
}
