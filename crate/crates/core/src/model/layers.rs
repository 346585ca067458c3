//! Flat-buffer layer kernels with hand-written backward passes.
//!
//! Activations use a `[batch, channels, positions]` layout throughout; dense
//! layers are the `positions == 1` case.

pub(crate) const BN_EPS: f64 = 1e-5;
pub(crate) const BN_MOMENTUM: f64 = 0.1;

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// `y[b, o] = sum_i w[o, i] x[b, i] (+ bias[o])`.
pub(crate) fn linear_forward(
    x: &[f64],
    batch: usize,
    inputs: usize,
    w: &[f64],
    outputs: usize,
    bias: Option<&[f64]>,
) -> Vec<f64> {
    let mut y = vec![0.0; batch * outputs];
    for b in 0..batch {
        let xb = &x[b * inputs..(b + 1) * inputs];
        for o in 0..outputs {
            let wo = &w[o * inputs..(o + 1) * inputs];
            let mut acc = bias.map_or(0.0, |bs| bs[o]);
            for (a, c) in wo.iter().zip(xb) {
                acc += a * c;
            }
            y[b * outputs + o] = acc;
        }
    }
    y
}

/// Returns `(dx, dw, dbias)`.
pub(crate) fn linear_backward(
    x: &[f64],
    batch: usize,
    inputs: usize,
    w: &[f64],
    outputs: usize,
    dy: &[f64],
    need_dx: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut dw = vec![0.0; outputs * inputs];
    let mut db = vec![0.0; outputs];
    let mut dx = if need_dx {
        vec![0.0; batch * inputs]
    } else {
        Vec::new()
    };
    for b in 0..batch {
        let xb = &x[b * inputs..(b + 1) * inputs];
        for o in 0..outputs {
            let g = dy[b * outputs + o];
            if g == 0.0 {
                continue;
            }
            db[o] += g;
            let dwo = &mut dw[o * inputs..(o + 1) * inputs];
            for (d, v) in dwo.iter_mut().zip(xb) {
                *d += g * v;
            }
            if need_dx {
                let wo = &w[o * inputs..(o + 1) * inputs];
                let dxb = &mut dx[b * inputs..(b + 1) * inputs];
                for (d, v) in dxb.iter_mut().zip(wo) {
                    *d += g * v;
                }
            }
        }
    }
    (dx, dw, db)
}

/// 3x3 convolution with zero padding 1, no bias.
/// `x: [B, Cin, H, W]`, `w: [Cout, Cin, 3, 3]`.
pub(crate) fn conv3x3_forward(
    x: &[f64],
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    cout: usize,
) -> Vec<f64> {
    let plane = h * w;
    let mut y = vec![0.0; batch * cout * plane];
    for b in 0..batch {
        for co in 0..cout {
            let out = &mut y[(b * cout + co) * plane..(b * cout + co + 1) * plane];
            for ci in 0..cin {
                let inp = &x[(b * cin + ci) * plane..(b * cin + ci + 1) * plane];
                let k = &weight[(co * cin + ci) * 9..(co * cin + ci + 1) * 9];
                for ky in 0..3 {
                    let y_lo = 1usize.saturating_sub(ky);
                    let y_hi = (h + 1 - ky).min(h);
                    for kx in 0..3 {
                        let wv = k[ky * 3 + kx];
                        let x_lo = 1usize.saturating_sub(kx);
                        let x_hi = (w + 1 - kx).min(w);
                        for yy in y_lo..y_hi {
                            let src_row = (yy + ky - 1) * w;
                            let dst_row = yy * w;
                            let src = &inp[src_row + x_lo + kx - 1..src_row + x_hi + kx - 1];
                            let dst = &mut out[dst_row + x_lo..dst_row + x_hi];
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += wv * s;
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

/// Returns `(dx, dweight)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv3x3_backward(
    x: &[f64],
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    cout: usize,
    dy: &[f64],
    need_dx: bool,
) -> (Vec<f64>, Vec<f64>) {
    let plane = h * w;
    let mut dw = vec![0.0; cout * cin * 9];
    let mut dx = if need_dx {
        vec![0.0; batch * cin * plane]
    } else {
        Vec::new()
    };
    for b in 0..batch {
        for co in 0..cout {
            let g = &dy[(b * cout + co) * plane..(b * cout + co + 1) * plane];
            for ci in 0..cin {
                let inp = &x[(b * cin + ci) * plane..(b * cin + ci + 1) * plane];
                let base = (co * cin + ci) * 9;
                for ky in 0..3 {
                    let y_lo = 1usize.saturating_sub(ky);
                    let y_hi = (h + 1 - ky).min(h);
                    for kx in 0..3 {
                        let x_lo = 1usize.saturating_sub(kx);
                        let x_hi = (w + 1 - kx).min(w);
                        let wv = weight[base + ky * 3 + kx];
                        let mut acc = 0.0;
                        for yy in y_lo..y_hi {
                            let src_row = (yy + ky - 1) * w;
                            let dst_row = yy * w;
                            let src = &inp[src_row + x_lo + kx - 1..src_row + x_hi + kx - 1];
                            let gr = &g[dst_row + x_lo..dst_row + x_hi];
                            for (a, s) in gr.iter().zip(src) {
                                acc += a * s;
                            }
                            if need_dx {
                                let off = (b * cin + ci) * plane + src_row + x_lo + kx - 1;
                                let dxr = &mut dx[off..off + (x_hi - x_lo)];
                                for (d, a) in dxr.iter_mut().zip(gr) {
                                    *d += wv * a;
                                }
                            }
                        }
                        dw[base + ky * 3 + kx] += acc;
                    }
                }
            }
        }
    }
    (dx, dw)
}

/// Per-channel 1x1 projection: `y[b, o, p] = sum_c w[o, c] x[b, c, p] + bias[o]`.
pub(crate) fn conv1x1_forward(
    x: &[f64],
    batch: usize,
    cin: usize,
    positions: usize,
    weight: &[f64],
    bias: &[f64],
    cout: usize,
) -> Vec<f64> {
    let mut y = vec![0.0; batch * cout * positions];
    for b in 0..batch {
        for o in 0..cout {
            let out = &mut y[(b * cout + o) * positions..(b * cout + o + 1) * positions];
            out.iter_mut().for_each(|v| *v = bias[o]);
            for c in 0..cin {
                let wv = weight[o * cin + c];
                let inp = &x[(b * cin + c) * positions..(b * cin + c + 1) * positions];
                for (d, s) in out.iter_mut().zip(inp) {
                    *d += wv * s;
                }
            }
        }
    }
    y
}

/// Returns `(dx, dweight, dbias)`.
pub(crate) fn conv1x1_backward(
    x: &[f64],
    batch: usize,
    cin: usize,
    positions: usize,
    weight: &[f64],
    cout: usize,
    dy: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; batch * cin * positions];
    let mut dw = vec![0.0; cout * cin];
    let mut db = vec![0.0; cout];
    for b in 0..batch {
        for o in 0..cout {
            let g = &dy[(b * cout + o) * positions..(b * cout + o + 1) * positions];
            db[o] += g.iter().sum::<f64>();
            for c in 0..cin {
                let inp = &x[(b * cin + c) * positions..(b * cin + c + 1) * positions];
                dw[o * cin + c] += g.iter().zip(inp).map(|(a, s)| a * s).sum::<f64>();
                let wv = weight[o * cin + c];
                let dxc = &mut dx[(b * cin + c) * positions..(b * cin + c + 1) * positions];
                for (d, a) in dxc.iter_mut().zip(g) {
                    *d += wv * a;
                }
            }
        }
    }
    (dx, dw, db)
}

pub(crate) struct BnCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub train: bool,
}

pub(crate) struct BnForward {
    pub y: Vec<f64>,
    pub cache: BnCache,
    /// Updated running statistics in train mode.
    pub running: Option<(Vec<f64>, Vec<f64>)>,
}

/// Batch normalisation over batch and positions, per channel.
#[allow(clippy::too_many_arguments)]
pub(crate) fn bn_forward(
    x: &[f64],
    batch: usize,
    channels: usize,
    positions: usize,
    gamma: &[f64],
    beta: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
    train: bool,
) -> BnForward {
    let n = (batch * positions) as f64;
    let (mean, var) = if train {
        let mut mean = vec![0.0; channels];
        let mut var = vec![0.0; channels];
        for c in 0..channels {
            let mut s = 0.0;
            for b in 0..batch {
                s += x[(b * channels + c) * positions..(b * channels + c + 1) * positions]
                    .iter()
                    .sum::<f64>();
            }
            let m = s / n;
            let mut v = 0.0;
            for b in 0..batch {
                v += x[(b * channels + c) * positions..(b * channels + c + 1) * positions]
                    .iter()
                    .map(|t| (t - m) * (t - m))
                    .sum::<f64>();
            }
            mean[c] = m;
            var[c] = v / n;
        }
        (mean, var)
    } else {
        (running_mean.to_vec(), running_var.to_vec())
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut xhat = vec![0.0; x.len()];
    let mut y = vec![0.0; x.len()];
    for b in 0..batch {
        for c in 0..channels {
            let r = (b * channels + c) * positions..(b * channels + c + 1) * positions;
            for i in r {
                let h = (x[i] - mean[c]) * inv_std[c];
                xhat[i] = h;
                y[i] = gamma[c] * h + beta[c];
            }
        }
    }
    let running = train.then(|| {
        let rm = running_mean
            .iter()
            .zip(&mean)
            .map(|(r, m)| (1.0 - BN_MOMENTUM) * r + BN_MOMENTUM * m)
            .collect();
        let rv = running_var
            .iter()
            .zip(&var)
            .map(|(r, v)| (1.0 - BN_MOMENTUM) * r + BN_MOMENTUM * v)
            .collect();
        (rm, rv)
    });
    BnForward {
        y,
        cache: BnCache {
            xhat,
            inv_std,
            train,
        },
        running,
    }
}

/// Returns `(dx, dgamma, dbeta)`.
pub(crate) fn bn_backward(
    dy: &[f64],
    batch: usize,
    channels: usize,
    positions: usize,
    gamma: &[f64],
    cache: &BnCache,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = (batch * positions) as f64;
    let mut dgamma = vec![0.0; channels];
    let mut dbeta = vec![0.0; channels];
    let mut dx = vec![0.0; dy.len()];
    for c in 0..channels {
        let mut sum_dxhat = 0.0;
        let mut sum_dxhat_xhat = 0.0;
        for b in 0..batch {
            let r = (b * channels + c) * positions..(b * channels + c + 1) * positions;
            for i in r {
                dgamma[c] += dy[i] * cache.xhat[i];
                dbeta[c] += dy[i];
                let dxh = dy[i] * gamma[c];
                sum_dxhat += dxh;
                sum_dxhat_xhat += dxh * cache.xhat[i];
            }
        }
        let inv = cache.inv_std[c];
        for b in 0..batch {
            let r = (b * channels + c) * positions..(b * channels + c + 1) * positions;
            for i in r {
                let dxh = dy[i] * gamma[c];
                dx[i] = if cache.train {
                    inv / n * (n * dxh - sum_dxhat - cache.xhat[i] * sum_dxhat_xhat)
                } else {
                    dxh * inv
                };
            }
        }
    }
    (dx, dgamma, dbeta)
}

/// 2x2 average pooling, `[B, C, H, W] -> [B, C, H/2, W/2]`.
pub(crate) fn avgpool2_forward(x: &[f64], planes: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut y = vec![0.0; planes * oh * ow];
    for p in 0..planes {
        let inp = &x[p * h * w..(p + 1) * h * w];
        for yy in 0..oh {
            for xx in 0..ow {
                let i = 2 * yy * w + 2 * xx;
                y[p * oh * ow + yy * ow + xx] =
                    0.25 * (inp[i] + inp[i + 1] + inp[i + w] + inp[i + w + 1]);
            }
        }
    }
    y
}

pub(crate) fn avgpool2_backward(dy: &[f64], planes: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut dx = vec![0.0; planes * h * w];
    for p in 0..planes {
        for yy in 0..oh {
            for xx in 0..ow {
                let g = 0.25 * dy[p * oh * ow + yy * ow + xx];
                let i = p * h * w + 2 * yy * w + 2 * xx;
                dx[i] += g;
                dx[i + 1] += g;
                dx[i + w] += g;
                dx[i + w + 1] += g;
            }
        }
    }
    dx
}

/// Nearest-neighbour 2x upsampling, `[.., h, w] -> [.., 2h, 2w]`.
pub(crate) fn upsample2_forward(x: &[f64], planes: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut y = vec![0.0; planes * oh * ow];
    for p in 0..planes {
        for yy in 0..oh {
            for xx in 0..ow {
                y[p * oh * ow + yy * ow + xx] = x[p * h * w + (yy / 2) * w + xx / 2];
            }
        }
    }
    y
}

pub(crate) fn upsample2_backward(dy: &[f64], planes: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut dx = vec![0.0; planes * h * w];
    for p in 0..planes {
        for yy in 0..oh {
            for xx in 0..ow {
                dx[p * h * w + (yy / 2) * w + xx / 2] += dy[p * oh * ow + yy * ow + xx];
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_matches_naive() {
        let (b, cin, cout, h, w) = (2, 2, 3, 4, 5);
        let x: Vec<f64> = (0..b * cin * h * w).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let k: Vec<f64> = (0..cout * cin * 9).map(|i| ((i * 5) % 13) as f64 / 13.0 - 0.5).collect();
        let y = conv3x3_forward(&x, b, cin, h, w, &k, cout);
        for bi in 0..b {
            for co in 0..cout {
                for yy in 0..h as isize {
                    for xx in 0..w as isize {
                        let mut acc = 0.0;
                        for ci in 0..cin {
                            for ky in -1..=1isize {
                                for kx in -1..=1isize {
                                    let (sy, sx) = (yy + ky, xx + kx);
                                    if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                        continue;
                                    }
                                    acc += k[(co * cin + ci) * 9 + ((ky + 1) * 3 + kx + 1) as usize]
                                        * x[((bi * cin + ci) * h + sy as usize) * w + sx as usize];
                                }
                            }
                        }
                        let got = y[((bi * cout + co) * h + yy as usize) * w + xx as usize];
                        assert!((got - acc).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn bn_train_output_normalised() {
        let x: Vec<f64> = (0..24).map(|i| (i as f64 * 1.7).sin() * 3.0 + 2.0).collect();
        let (b, c, p) = (4, 2, 3);
        let f = bn_forward(&x, b, c, p, &[1.0; 2], &[0.0; 2], &[0.0; 2], &[1.0; 2], true);
        for ch in 0..c {
            let vals: Vec<f64> = (0..b)
                .flat_map(|bi| f.y[(bi * c + ch) * p..(bi * c + ch + 1) * p].to_vec())
                .collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|t| (t - m) * (t - m)).sum::<f64>() / vals.len() as f64;
            let raw: Vec<f64> = (0..b)
                .flat_map(|bi| x[(bi * c + ch) * p..(bi * c + ch + 1) * p].to_vec())
                .collect();
            let rm = raw.iter().sum::<f64>() / raw.len() as f64;
            let rv = raw.iter().map(|t| (t - rm) * (t - rm)).sum::<f64>() / raw.len() as f64;
            assert!(m.abs() < 1e-9);
            // unit variance up to the epsilon in the denominator
            assert!((v - rv / (rv + BN_EPS)).abs() < 1e-9);
        }
    }

    #[test]
    fn pool_and_upsample_are_adjoint() {
        let x: Vec<f64> = (0..32).map(|i| i as f64).collect();
        let y: Vec<f64> = (0..8).map(|i| (i * i) as f64).collect();
        // <pool(x), y> == <x, pool^T(y)>
        let lhs: f64 = avgpool2_forward(&x, 2, 4, 4).iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(avgpool2_backward(&y, 2, 4, 4)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
        let lhs: f64 = upsample2_forward(&y, 2, 2, 2).iter().zip(&x).map(|(a, b)| a * b).sum();
        let rhs: f64 = y.iter().zip(upsample2_backward(&x, 2, 2, 2)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }
}
