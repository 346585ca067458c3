use rustfft::num_complex::Complex64;

use crate::error::{FedError, Result};
use crate::harmonize::mixstyle::transfer_stats;
use crate::numerics::{fft2_complex, ifft2_complex, quantile_map_slice, tensor_stats, StatAxis, Tensor};

fn channel_view(x: &Tensor) -> (usize, usize) {
    match x.shape() {
        [_] => (1, x.numel()),
        [_, _] => (1, x.numel()),
        s => (s[0], x.numel() / s[0]),
    }
}

fn plane_dims(x: &Tensor) -> Result<(usize, usize)> {
    let s = x.shape();
    match s.len() {
        2 => Ok((s[0], s[1])),
        3 => Ok((s[1], s[2])),
        _ => Err(FedError::Shape(format!("expected [H, W] or [C, H, W], got {s:?}"))),
    }
}

/// Per-channel histogram matching of `x` onto `reference`.
pub fn apply_hist_match(x: &Tensor, reference: &Tensor) -> Result<Tensor> {
    let (cx, inner) = channel_view(x);
    let (cr, rinner) = channel_view(reference);
    if cx != cr {
        return Err(FedError::Shape(format!("{cx} channels vs reference {cr}")));
    }
    let mut out = Vec::with_capacity(x.numel());
    for c in 0..cx {
        let src = &x.data()[c * inner..(c + 1) * inner];
        let r = &reference.data()[c * rinner..(c + 1) * rinner];
        out.extend(quantile_map_slice(src, r)?);
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

/// Half-width of the swapped low-frequency square.
pub fn fda_half_width(beta: f64, h: usize, w: usize) -> usize {
    (beta * h.min(w) as f64).floor() as usize
}

fn signed(k: usize, n: usize) -> usize {
    k.min(n - k)
}

/// FDA before clipping: per channel, the centred low-frequency square of
/// side `2 floor(beta min(H, W)) + 1` in `x`'s amplitude spectrum is
/// replaced by the reference's; `x`'s phase is kept.
pub fn fda_unclipped(x: &Tensor, reference: &Tensor, beta: f64) -> Result<Tensor> {
    if !(0.0..=0.5).contains(&beta) {
        return Err(FedError::config("harmonize.beta", format!("{beta} is outside [0, 0.5]")));
    }
    x.check_same_shape(reference)?;
    let (h, w) = plane_dims(x)?;
    let b = fda_half_width(beta, h, w);
    let plane = h * w;
    let mut out = Vec::with_capacity(x.numel());
    for (src, r) in x.data().chunks(plane).zip(reference.data().chunks(plane)) {
        let sx = fft2_complex(src, h, w);
        let sr = fft2_complex(r, h, w);
        let mixed: Vec<Complex64> = sx
            .iter()
            .zip(&sr)
            .enumerate()
            .map(|(i, (a, c))| {
                let (ky, kx) = (i / w, i % w);
                if signed(ky, h) <= b && signed(kx, w) <= b {
                    Complex64::from_polar(c.norm(), a.arg())
                } else {
                    *a
                }
            })
            .collect();
        out.extend(ifft2_complex(&mixed, h, w).into_iter().map(|c| c.re));
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

/// Fourier-domain adaptation towards `reference`, clipped to `[0, 1]`.
pub fn apply_fda(x: &Tensor, reference: &Tensor, beta: f64) -> Result<Tensor> {
    Ok(fda_unclipped(x, reference, beta)?.clip(0.0, 1.0))
}

/// Per-channel statistic transfer onto the reference's mean and std.
pub fn apply_adain(x: &Tensor, reference: &Tensor) -> Result<Tensor> {
    let (cx, _) = channel_view(x);
    let (cr, _) = channel_view(reference);
    if cx != cr {
        return Err(FedError::Shape(format!("{cx} channels vs reference {cr}")));
    }
    let axis = if x.ndim() == 3 { StatAxis::PerChannel } else { StatAxis::Global };
    let own = tensor_stats(x, axis);
    let target = tensor_stats(reference, axis);
    Ok(transfer_stats(x, &own, &target))
}

/// `clip(scale |x - x'|, 0, 1)`.
pub fn amplified_difference(x: &Tensor, harmonized: &Tensor, scale: f64) -> Result<Tensor> {
    x.zip_map(harmonized, |a, b| (scale * (a - b).abs()).clamp(0.0, 1.0))
}
