use serde::{Deserialize, Serialize};

/// Appearance parameters of one client's acquisition pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleParams {
    pub gain: f64,
    pub bias: f64,
    pub gamma: f64,
    pub noise_sigma: f64,
    pub texture_amp: f64,
}

impl StyleParams {
    /// Leaves a clean render untouched.
    pub fn identity() -> Self {
        StyleParams {
            gain: 1.0,
            bias: 0.0,
            gamma: 1.0,
            noise_sigma: 0.0,
            texture_amp: 0.0,
        }
    }
}

/// Structural parameters of one client's population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContentParams {
    /// Mixture weights over lesion shape families (ellipse, star, crescent).
    pub family_weights: [f64; 3],
    /// Multiplier on the base object radius.
    pub size_scale: f64,
    /// Mean object-centre offset from the image centre, in pixels (dy, dx).
    pub position_offset: [f64; 2],
    /// Probability that a segmentation image contains an unlabelled
    /// look-alike structure.
    pub distractor_prob: f64,
    /// Size multiplier of that structure.
    pub distractor_scale: f64,
    /// Class prior for classification tasks.
    pub class_prior: Vec<f64>,
}

/// Heterogeneity of a federation split into a style and a content dial,
/// with the per-client parameters both dials induce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftProfile {
    pub delta_style: f64,
    pub delta_content: f64,
    pub style: Vec<StyleParams>,
    pub content: Vec<ContentParams>,
}

// Per-client style directions: (gain, bias, gamma, noise, texture).
// Client 0 keeps the base appearance; later rows cycle for K > 4.
const STYLE_SIGNATURES: [[f64; 5]; 4] = [
    [0.0, 0.0, 0.0, 0.0, 0.0],
    [-1.0, 0.6, 0.8, 1.0, 0.5],
    [0.8, -0.6, -0.7, 0.3, 1.0],
    [-0.6, -0.3, 0.6, 0.6, 0.2],
];

const BASE_NOISE: f64 = 0.02;
const BASE_TEXTURE: f64 = 0.03;

/// Position of client `k` on the content axis, in `[-1, 1]`.
fn content_direction(k: usize, clients: usize) -> f64 {
    if clients < 2 {
        0.0
    } else {
        2.0 * k as f64 / (clients - 1) as f64 - 1.0
    }
}

fn style_for(k: usize, delta: f64) -> StyleParams {
    let row = STYLE_SIGNATURES[k % STYLE_SIGNATURES.len()];
    // cycled rows flip sign so clients beyond the table stay distinct
    let sign = if (k / STYLE_SIGNATURES.len()) % 2 == 0 { 1.0 } else { -1.0 };
    let [g, b, c, e, f] = row.map(|v| v * sign);
    StyleParams {
        gain: 1.0 + 0.6 * delta * g,
        bias: 0.25 * delta * b,
        gamma: (0.7 * delta * c).exp(),
        noise_sigma: BASE_NOISE + 0.05 * delta * e.abs(),
        texture_amp: BASE_TEXTURE + 0.12 * delta * f.abs(),
    }
}

fn content_for(k: usize, clients: usize, classes: usize, delta: f64) -> ContentParams {
    let d = content_direction(k, clients);
    let mut family_weights = [(1.0 - delta) / 3.0; 3];
    family_weights[k % 3] += delta;
    let angle = 2.0 * std::f64::consts::PI * k as f64 / clients.max(1) as f64;
    let prior: Vec<f64> = (0..classes)
        .map(|i| {
            let centred = if classes > 1 {
                2.0 * i as f64 / (classes - 1) as f64 - 1.0
            } else {
                0.0
            };
            1.0 + 0.6 * delta * d * centred
        })
        .collect();
    let total: f64 = prior.iter().sum();
    ContentParams {
        family_weights,
        size_scale: 1.0 + 0.45 * delta * d,
        position_offset: [angle.sin() * delta, angle.cos() * delta],
        distractor_prob: 0.8 * delta,
        distractor_scale: 1.0 - 0.45 * delta * d,
        class_prior: prior.into_iter().map(|p| p / total).collect(),
    }
}

impl ShiftProfile {
    /// Interpolates every client's parameters linearly (or log-linearly for
    /// gamma) between the shared base (`delta = 0`) and its signature
    /// (`delta = 1`). Style and content parameters depend only on their
    /// own dial.
    pub fn new(delta_style: f64, delta_content: f64, clients: usize, classes: usize) -> Self {
        ShiftProfile {
            delta_style,
            delta_content,
            style: (0..clients).map(|k| style_for(k, delta_style)).collect(),
            content: (0..clients)
                .map(|k| content_for(k, clients, classes, delta_content))
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_deltas_make_clients_identical() {
        let p = ShiftProfile::new(0.0, 0.0, 4, 2);
        assert!(p.style.windows(2).all(|w| w[0] == w[1]));
        assert!(p.content.iter().all(|c| c.position_offset == [0.0, 0.0]));
        let first = &p.content[0];
        assert!(p.content.iter().all(|c| c.family_weights == first.family_weights
            && c.size_scale == first.size_scale
            && c.class_prior == first.class_prior));
    }

    #[test]
    fn full_content_shift_skews_priors() {
        let p = ShiftProfile::new(0.0, 1.0, 4, 2);
        let c0 = &p.content[0].class_prior;
        let c3 = &p.content[3].class_prior;
        assert!((c0[0] - 0.8).abs() < 1e-12 && (c0[1] - 0.2).abs() < 1e-12);
        assert!((c3[0] - 0.2).abs() < 1e-12 && (c3[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn dials_are_independent() {
        let a = ShiftProfile::new(0.3, 0.7, 4, 2);
        let b = ShiftProfile::new(0.9, 0.7, 4, 2);
        let c = ShiftProfile::new(0.3, 0.1, 4, 2);
        assert_eq!(a.content, b.content);
        assert_eq!(a.style, c.style);
    }
}
