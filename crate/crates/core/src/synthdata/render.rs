use std::f64::consts::PI;

use crate::numerics::{RngStream, Tensor};
use crate::synthdata::profile::{ContentParams, StyleParams};

const BACKGROUND: f64 = 0.3;
const FOREGROUND: (f64, f64) = (0.62, 0.78);
const SEG_RADIUS: f64 = 0.16;
const CLS_RADIUS: f64 = 0.3;

/// Lesion shape families for segmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeFamily {
    Ellipse,
    Star,
    Crescent,
}

impl ShapeFamily {
    const ALL: [ShapeFamily; 3] = [ShapeFamily::Ellipse, ShapeFamily::Star, ShapeFamily::Crescent];
}

/// Classification patterns; label `i` renders `PATTERNS[i % 4]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pattern {
    Disk,
    Ring,
    Cross,
    Frame,
}

const PATTERNS: [Pattern; 4] = [Pattern::Disk, Pattern::Ring, Pattern::Cross, Pattern::Frame];

pub fn pattern_for_label(label: usize) -> Pattern {
    PATTERNS[label % PATTERNS.len()]
}

/// A placed shape; `contains` is evaluated at pixel centres.
#[derive(Debug, Clone, Copy)]
struct Placed {
    family: ShapeFamily,
    cy: f64,
    cx: f64,
    r: f64,
    aspect: f64,
    angle: f64,
}

impl Placed {
    fn contains(&self, y: f64, x: f64) -> bool {
        let (dy, dx) = (y - self.cy, x - self.cx);
        let (s, c) = self.angle.sin_cos();
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        match self.family {
            ShapeFamily::Ellipse => {
                let (a, b) = (self.r * self.aspect, self.r / self.aspect);
                (u / a).powi(2) + (v / b).powi(2) <= 1.0
            }
            ShapeFamily::Star => {
                let rho = (u * u + v * v).sqrt();
                let theta = v.atan2(u);
                rho <= self.r * (0.72 + 0.38 * (5.0 * theta).cos())
            }
            ShapeFamily::Crescent => {
                let outer = u * u + v * v <= self.r * self.r;
                let (iu, ir) = (u - 0.55 * self.r, 0.8 * self.r);
                outer && iu * iu + v * v > ir * ir
            }
        }
    }

    fn support(&self, h: usize, w: usize) -> Vec<bool> {
        let mut out = vec![false; h * w];
        for y in 0..h {
            for x in 0..w {
                out[y * w + x] = self.contains(y as f64 + 0.5, x as f64 + 0.5);
            }
        }
        out
    }
}

fn pattern_support(pattern: Pattern, cy: f64, cx: f64, r: f64, h: usize, w: usize) -> Vec<bool> {
    let mut out = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
            let dist = (dy * dy + dx * dx).sqrt();
            let cheb = dy.abs().max(dx.abs());
            out[y * w + x] = match pattern {
                Pattern::Disk => dist <= r,
                Pattern::Ring => dist <= r && dist >= 0.5 * r,
                Pattern::Cross => cheb <= r && dy.abs().min(dx.abs()) <= 0.3 * r,
                Pattern::Frame => cheb <= r && cheb >= 0.55 * r,
            };
        }
    }
    out
}

/// A noise-free rendering: one `[H, W]` intensity plane plus the pixels
/// belonging to any object (used to confine background texture).
#[derive(Debug, Clone)]
pub struct CleanRender {
    pub plane: Vec<f64>,
    pub foreground: Vec<bool>,
    pub height: usize,
    pub width: usize,
}

fn paint(plane: &mut [f64], foreground: &mut [bool], support: &[bool], value: f64) {
    for ((p, f), &s) in plane.iter_mut().zip(foreground.iter_mut()).zip(support) {
        if s {
            *p = value;
            *f = true;
        }
    }
}

fn place(content: &ContentParams, family: ShapeFamily, scale: f64, h: usize, w: usize, rng: &mut RngStream) -> Placed {
    let side = h.min(w) as f64;
    let r = SEG_RADIUS * side * scale * rng.uniform_in(0.85, 1.15);
    let jitter = 0.18 * side;
    let cy = h as f64 / 2.0 + content.position_offset[0] * 0.2 * h as f64 + rng.uniform_in(-jitter, jitter);
    let cx = w as f64 / 2.0 + content.position_offset[1] * 0.2 * w as f64 + rng.uniform_in(-jitter, jitter);
    Placed {
        family,
        cy: cy.clamp(r * 0.6, h as f64 - r * 0.6),
        cx: cx.clamp(r * 0.6, w as f64 - r * 0.6),
        r,
        aspect: rng.uniform_in(1.0, 1.4),
        angle: rng.uniform_in(0.0, 2.0 * PI),
    }
}

/// Clean segmentation scene: one labelled lesion and, with the client's
/// distractor probability, an unlabelled structure of another family and
/// size. Returns the render and the lesion mask.
pub fn render_seg_clean(content: &ContentParams, h: usize, w: usize, rng: &mut RngStream) -> (CleanRender, Vec<bool>) {
    let mut plane = vec![BACKGROUND; h * w];
    let mut foreground = vec![false; h * w];
    let family = ShapeFamily::ALL[rng.categorical(&content.family_weights)];
    let lesion = place(content, family, content.size_scale, h, w, rng);
    let mask = lesion.support(h, w);
    let value = rng.uniform_in(FOREGROUND.0, FOREGROUND.1);
    let has_distractor = rng.bernoulli(content.distractor_prob);
    if has_distractor {
        let other = ShapeFamily::ALL[(ShapeFamily::ALL.iter().position(|&f| f == family).unwrap() + 1 + rng.below(2)) % 3];
        for _ in 0..20 {
            let d = place(content, other, content.distractor_scale, h, w, rng);
            let support = d.support(h, w);
            let clear = support.iter().zip(&mask).all(|(&s, &m)| !(s && m));
            if clear {
                paint(&mut plane, &mut foreground, &support, value);
                break;
            }
        }
    }
    paint(&mut plane, &mut foreground, &mask, value);
    (
        CleanRender {
            plane,
            foreground,
            height: h,
            width: w,
        },
        mask,
    )
}

/// Clean classification scene: the label's pattern near the image centre.
pub fn render_cls_clean(label: usize, content: &ContentParams, h: usize, w: usize, rng: &mut RngStream) -> CleanRender {
    let side = h.min(w) as f64;
    let r = CLS_RADIUS * side * (1.0 + 0.5 * (content.size_scale - 1.0)) * rng.uniform_in(0.9, 1.1);
    let jitter = 0.06 * side;
    let cy = h as f64 / 2.0 + content.position_offset[0] * 0.08 * h as f64 + rng.uniform_in(-jitter, jitter);
    let cx = w as f64 / 2.0 + content.position_offset[1] * 0.08 * w as f64 + rng.uniform_in(-jitter, jitter);
    let support = pattern_support(pattern_for_label(label), cy, cx, r, h, w);
    let mut plane = vec![BACKGROUND; h * w];
    let mut foreground = vec![false; h * w];
    let value = rng.uniform_in(FOREGROUND.0, FOREGROUND.1);
    paint(&mut plane, &mut foreground, &support, value);
    CleanRender {
        plane,
        foreground,
        height: h,
        width: w,
    }
}

/// Acquisition model applied to a clean render: background texture, then
/// gain, bias, gamma (on the non-negative part), additive Gaussian noise
/// and clipping to `[0, 1]`. Channel `c` of the output starts from the
/// clean plane dimmed by `4% * c`.
pub fn style_transform(clean: &CleanRender, channels: usize, style: &StyleParams, rng: &mut RngStream) -> Tensor {
    let (h, w) = (clean.height, clean.width);
    let (fy, fx) = (1.0 + rng.below(2) as f64, 1.0 + rng.below(2) as f64);
    let phase = rng.uniform_in(0.0, 2.0 * PI);
    let mut data = Vec::with_capacity(channels * h * w);
    for c in 0..channels {
        let tint = 1.0 - 0.04 * c as f64;
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let mut v = clean.plane[i] * tint;
                if style.texture_amp != 0.0 && !clean.foreground[i] {
                    let arg = 2.0 * PI * (fy * y as f64 / h as f64 + fx * x as f64 / w as f64) + phase;
                    v += style.texture_amp * arg.sin();
                }
                v = style.gain * v + style.bias;
                if style.gamma != 1.0 {
                    v = v.max(0.0).powf(style.gamma);
                }
                if style.noise_sigma > 0.0 {
                    v += style.noise_sigma * rng.normal();
                }
                data.push(v.clamp(0.0, 1.0));
            }
        }
    }
    Tensor::from_parts(vec![channels, h, w], data)
}
