//! Deterministic synthetic digit-glyph dataset.
//!
//! Renders ten stroke-based digit classes at 28x28 with per-sample jitter
//! (shift, scale, rotation, stroke width, contrast) and additive noise, all
//! driven by a seeded stream. Used as a stand-in wherever the real IDX
//! datasets are not on disk, and by the test and bench suites; statistics are
//! MNIST-like (grayscale digits on a dark background) but the images are
//! procedural, not reproductions.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataio::Dataset;
use crate::error::Result;

const SIDE: usize = 28;

type Seg = (f64, f64, f64, f64);

/// Polyline strokes per digit, in a unit box with x right and y down.
fn glyph(digit: u8) -> Vec<Seg> {
    match digit {
        0 => vec![
            (0.28, 0.16, 0.72, 0.16),
            (0.72, 0.16, 0.72, 0.84),
            (0.72, 0.84, 0.28, 0.84),
            (0.28, 0.84, 0.28, 0.16),
        ],
        1 => vec![(0.52, 0.14, 0.52, 0.86), (0.36, 0.30, 0.52, 0.14)],
        2 => vec![
            (0.27, 0.22, 0.70, 0.16),
            (0.70, 0.16, 0.72, 0.44),
            (0.72, 0.44, 0.27, 0.84),
            (0.27, 0.84, 0.74, 0.84),
        ],
        3 => vec![
            (0.27, 0.16, 0.70, 0.16),
            (0.70, 0.16, 0.70, 0.50),
            (0.40, 0.50, 0.70, 0.50),
            (0.70, 0.50, 0.70, 0.84),
            (0.70, 0.84, 0.27, 0.84),
        ],
        4 => vec![
            (0.32, 0.14, 0.30, 0.54),
            (0.30, 0.54, 0.76, 0.54),
            (0.64, 0.14, 0.64, 0.86),
        ],
        5 => vec![
            (0.72, 0.16, 0.28, 0.16),
            (0.28, 0.16, 0.28, 0.50),
            (0.28, 0.50, 0.68, 0.50),
            (0.68, 0.50, 0.68, 0.84),
            (0.68, 0.84, 0.26, 0.84),
        ],
        6 => vec![
            (0.68, 0.16, 0.30, 0.22),
            (0.30, 0.22, 0.30, 0.84),
            (0.30, 0.84, 0.70, 0.84),
            (0.70, 0.84, 0.70, 0.52),
            (0.70, 0.52, 0.30, 0.52),
        ],
        7 => vec![(0.26, 0.16, 0.74, 0.16), (0.74, 0.16, 0.44, 0.86)],
        8 => vec![
            (0.30, 0.16, 0.70, 0.16),
            (0.70, 0.16, 0.70, 0.84),
            (0.70, 0.84, 0.30, 0.84),
            (0.30, 0.84, 0.30, 0.16),
            (0.30, 0.50, 0.70, 0.50),
        ],
        9 => vec![
            (0.70, 0.48, 0.30, 0.48),
            (0.30, 0.48, 0.30, 0.16),
            (0.30, 0.16, 0.70, 0.16),
            (0.70, 0.16, 0.70, 0.84),
            (0.70, 0.84, 0.34, 0.84),
        ],
        _ => unreachable!("digit must be 0..10"),
    }
}

fn dist_to_segment(px: f64, py: f64, s: &Seg) -> f64 {
    let (x0, y0, x1, y1) = *s;
    let dx = x1 - x0;
    let dy = y1 - y0;
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((px - x0) * dx + (py - y0) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let cx = x0 + t * dx;
    let cy = y0 + t * dy;
    ((px - cx).powi(2) + (py - cy).powi(2)).sqrt()
}

fn render(digit: u8, rng: &mut ChaCha8Rng) -> [u8; SIDE * SIDE] {
    let strokes = glyph(digit);
    let angle = rng.random_range(-0.22..0.22f64);
    let scale = rng.random_range(0.82..1.12f64);
    let tx = rng.random_range(-0.07..0.07f64);
    let ty = rng.random_range(-0.07..0.07f64);
    let thickness = rng.random_range(0.045..0.085f64);
    let peak = rng.random_range(0.75..1.0f64);
    let noise_sigma = 0.035f64;
    let soft = 0.030f64;

    let (sin_a, cos_a) = angle.sin_cos();
    let mut out = [0u8; SIDE * SIDE];
    for i in 0..SIDE {
        for j in 0..SIDE {
            // pixel center -> glyph coordinates (inverse of the jitter
            // transform about the box center)
            let px = (j as f64 + 0.5) / SIDE as f64 - 0.5 - tx;
            let py = (i as f64 + 0.5) / SIDE as f64 - 0.5 - ty;
            let gx = (cos_a * px + sin_a * py) / scale + 0.5;
            let gy = (-sin_a * px + cos_a * py) / scale + 0.5;
            let d = strokes
                .iter()
                .map(|s| dist_to_segment(gx, gy, s))
                .fold(f64::INFINITY, f64::min);
            let coverage = ((thickness - d) / soft + 0.5).clamp(0.0, 1.0);
            // Box-Muller from two uniforms; cheap and deterministic
            let u1: f64 = rng.random::<f64>().max(1e-12);
            let u2: f64 = rng.random();
            let gauss = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            let v = peak * coverage + noise_sigma * gauss;
            out[i * SIDE + j] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    out
}

/// Generates `count` samples with labels cycling through the ten classes in
/// a seeded random order.
pub fn generate(count: usize, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(count * SIDE * SIDE);
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        let digit = rng.random_range(0..10u8);
        images.extend_from_slice(&render(digit, &mut rng));
        labels.push(digit);
    }
    Dataset::new(images, labels, SIDE, SIDE)
}
