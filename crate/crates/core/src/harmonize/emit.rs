use std::fs;
use std::path::Path;

use crate::error::{FedError, Result};
use crate::harmonize::ops::amplified_difference;
use crate::numerics::Tensor;

fn first_plane(x: &Tensor) -> Result<(usize, usize, &[f64])> {
    let s = x.shape();
    match s.len() {
        2 => Ok((s[0], s[1], x.data())),
        3 => Ok((s[1], s[2], &x.data()[..s[1] * s[2]])),
        _ => Err(FedError::Shape(format!("cannot emit tensor of shape {s:?}"))),
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary 8-bit PGM of the first channel.
pub fn write_pgm(path: &Path, image: &Tensor) -> Result<()> {
    let (h, w, plane) = first_plane(image)?;
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    bytes.extend(plane.iter().map(|&v| quantize(v)));
    fs::write(path, bytes).map_err(|e| FedError::io(path, e))
}

/// Side-by-side panel: original | harmonized | amplified difference.
pub fn write_difference_panel(path: &Path, original: &Tensor, harmonized: &Tensor, scale: f64) -> Result<()> {
    let diff = amplified_difference(original, harmonized, scale)?;
    let (h, w, a) = first_plane(original)?;
    let (_, _, b) = first_plane(harmonized)?;
    let (_, _, d) = first_plane(&diff)?;
    let mut panel = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for part in [a, b, d] {
            panel.extend_from_slice(&part[y * w..(y + 1) * w]);
        }
    }
    write_pgm(path, &Tensor::from_parts(vec![h, 3 * w], panel))
}
