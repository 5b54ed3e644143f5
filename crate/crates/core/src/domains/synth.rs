//! Procedural digit glyphs: a 5×7 bitmap font rendered with random pose,
//! stroke weight, ink and background.

use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Float, Tensor};

const GLYPHS: [[u8; 7]; 10] = [
    [0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110],
    [0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110],
    [0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b01000, 0b11111],
    [0b11111, 0b00010, 0b00100, 0b00010, 0b00001, 0b10001, 0b01110],
    [0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010],
    [0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110],
    [0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110],
    [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000],
    [0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110],
    [0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100],
];

pub const MAX_CLASSES: usize = GLYPHS.len();

/// Colour scheme of the rendered images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Palette {
    /// One channel: bright ink on a dark background.
    #[default]
    Gray,
    /// Three channels: warm ink on a cool background, jittered per image.
    Color,
}

impl Palette {
    pub fn channels(self) -> usize {
        match self {
            Palette::Gray => 1,
            Palette::Color => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthOptions {
    #[serde(default = "default_size")]
    pub size: usize,
    #[serde(default)]
    pub palette: Palette,
    /// Standard deviation of per-pixel sensor noise.
    #[serde(default = "default_noise")]
    pub noise: f64,
}

fn default_size() -> usize {
    16
}
fn default_noise() -> f64 {
    0.03
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            size: default_size(),
            palette: Palette::Gray,
            noise: default_noise(),
        }
    }
}

/// Class-balanced glyph dataset with default options (one channel, 16×16).
pub fn synth_dataset(rng: &Rng, n: usize, classes: usize) -> Result<LabeledDataset> {
    synth_dataset_with(rng, n, classes, &SynthOptions::default())
}

/// Class-balanced glyph dataset. Image `i` depends only on `(rng seed, i)`.
pub fn synth_dataset_with(rng: &Rng, n: usize, classes: usize, opts: &SynthOptions) -> Result<LabeledDataset> {
    if !(2..=MAX_CLASSES).contains(&classes) {
        return Err(Error::InvalidArgument(format!(
            "synthetic glyphs support 2..={MAX_CLASSES} classes, got {classes}"
        )));
    }
    if n < classes {
        return Err(Error::InvalidArgument(format!(
            "need at least one image per class ({classes}), got {n}"
        )));
    }
    if opts.size < 8 {
        return Err(Error::InvalidArgument("glyph images must be at least 8×8".into()));
    }
    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    rng.fork(u64::MAX).shuffle(&mut labels);
    let c = opts.palette.channels();
    let s = opts.size;
    let mut data = Vec::with_capacity(n * c * s * s);
    for (i, &label) in labels.iter().enumerate() {
        render(&mut rng.fork(i as u64), label, opts, &mut data);
    }
    LabeledDataset::new(Tensor::new(vec![n, c, s, s], data)?, labels, classes)
}

fn glyph_coverage(label: usize, u: f64, v: f64) -> f64 {
    // bilinear over the bitmap, zero outside
    let bit = |x: isize, y: isize| -> f64 {
        if !(0..5).contains(&x) || !(0..7).contains(&y) {
            return 0.0;
        }
        ((GLYPHS[label][y as usize] >> (4 - x)) & 1) as f64
    };
    let (fx, fy) = (u - 0.5, v - 0.5);
    let (x0, y0) = (fx.floor(), fy.floor());
    let (ax, ay) = (fx - x0, fy - y0);
    let (x0, y0) = (x0 as isize, y0 as isize);
    (1.0 - ay) * ((1.0 - ax) * bit(x0, y0) + ax * bit(x0 + 1, y0))
        + ay * ((1.0 - ax) * bit(x0, y0 + 1) + ax * bit(x0 + 1, y0 + 1))
}

fn render(rng: &mut Rng, label: usize, opts: &SynthOptions, out: &mut Vec<Float>) {
    let s = opts.size as f64;
    let angle = rng.uniform_range(-12.0, 12.0).to_radians();
    // glyph height as a fraction of the image
    let height = rng.uniform_range(0.62, 0.8) * s;
    let aspect = rng.uniform_range(0.85, 1.1);
    let (tx, ty) = (rng.uniform_range(-1.2, 1.2), rng.uniform_range(-1.2, 1.2));
    let threshold = rng.uniform_range(0.3, 0.55);
    let per_cell = height / 7.0;
    let (sin, cos) = angle.sin_cos();

    let (ink, paper): (Vec<f64>, Vec<f64>) = match opts.palette {
        Palette::Gray => (vec![rng.uniform_range(0.75, 1.0)], vec![rng.uniform_range(0.0, 0.15)]),
        Palette::Color => (
            vec![
                rng.uniform_range(0.75, 0.95),
                rng.uniform_range(0.35, 0.6),
                rng.uniform_range(0.05, 0.25),
            ],
            vec![
                rng.uniform_range(0.05, 0.2),
                rng.uniform_range(0.15, 0.3),
                rng.uniform_range(0.35, 0.55),
            ],
        ),
    };

    let n = opts.size;
    let mut alpha = vec![0.0; n * n];
    let center = s / 2.0;
    for y in 0..n {
        for x in 0..n {
            let dx = x as f64 + 0.5 - center - tx;
            let dy = y as f64 + 0.5 - center - ty;
            let rx = cos * dx + sin * dy;
            let ry = -sin * dx + cos * dy;
            let u = rx / (per_cell * aspect) + 2.5;
            let v = ry / per_cell + 3.5;
            let cov = glyph_coverage(label, u, v);
            // soft threshold sets the stroke weight
            let t = ((cov - threshold) / 0.3 + 0.5).clamp(0.0, 1.0);
            alpha[y * n + x] = t * t * (3.0 - 2.0 * t);
        }
    }
    for (fg, bg) in ink.iter().zip(&paper) {
        for &a in &alpha {
            let v = bg + (fg - bg) * a + opts.noise * rng.normal();
            out.push(v.clamp(0.0, 1.0) as Float);
        }
    }
}
