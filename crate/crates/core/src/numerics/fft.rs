use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{FedError, Result};
use crate::numerics::Tensor;

fn check_image(img: &Tensor) -> Result<(usize, usize)> {
    match *img.shape() {
        [h, w] if h >= 2 && w >= 2 => Ok((h, w)),
        [_, _] => Err(FedError::Shape(format!(
            "fft2 needs H, W >= 2, got {:?}",
            img.shape()
        ))),
        _ => Err(FedError::Shape(format!(
            "fft2 expects a 2-D tensor, got shape {:?}",
            img.shape()
        ))),
    }
}

fn transform(buf: &mut [Complex64], h: usize, w: usize, inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let (row, col) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    row.process(buf);
    let mut column = vec![Complex64::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            column[y] = buf[y * w + x];
        }
        col.process(&mut column);
        for y in 0..h {
            buf[y * w + x] = column[y];
        }
    }
    if inverse {
        let scale = 1.0 / (h * w) as f64;
        for v in buf.iter_mut() {
            *v *= scale;
        }
    }
}

/// Unnormalised forward 2-D DFT of a row-major `h x w` real image.
pub fn fft2_complex(data: &[f64], h: usize, w: usize) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    transform(&mut buf, h, w, false);
    buf
}

/// Inverse 2-D DFT including the `1/(h w)` factor.
pub fn ifft2_complex(spectrum: &[Complex64], h: usize, w: usize) -> Vec<Complex64> {
    let mut buf = spectrum.to_vec();
    transform(&mut buf, h, w, true);
    buf
}

/// Amplitude and phase spectra of a 2-D image (DC at index `[0, 0]`).
pub fn fft2(img: &Tensor) -> Result<(Tensor, Tensor)> {
    let (h, w) = check_image(img)?;
    let spec = fft2_complex(img.data(), h, w);
    let amp = spec.iter().map(|c| c.norm()).collect();
    let phase = spec.iter().map(|c| c.arg()).collect();
    Ok((
        Tensor::from_parts(vec![h, w], amp),
        Tensor::from_parts(vec![h, w], phase),
    ))
}

/// Real part of the inverse transform of `amplitude * exp(i phase)`.
pub fn ifft2(amplitude: &Tensor, phase: &Tensor) -> Result<Tensor> {
    let (h, w) = check_image(amplitude)?;
    amplitude.check_same_shape(phase)?;
    let spec: Vec<Complex64> = amplitude
        .data()
        .iter()
        .zip(phase.data())
        .map(|(&a, &p)| Complex64::from_polar(a, p))
        .collect();
    let out = ifft2_complex(&spec, h, w);
    Ok(Tensor::from_parts(
        vec![h, w],
        out.into_iter().map(|c| c.re).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_is_dc_only() {
        let img = Tensor::filled(&[4, 6], 0.5);
        let (amp, _) = fft2(&img).unwrap();
        assert!((amp.data()[0] - 0.5 * 24.0).abs() < 1e-12);
        assert!(amp.data()[1..].iter().all(|&a| a.abs() < 1e-12));
    }

    #[test]
    fn rejects_non_2d() {
        assert!(fft2(&Tensor::zeros(&[2, 2, 2])).is_err());
        assert!(fft2(&Tensor::zeros(&[1, 4])).is_err());
    }
}
