//! Synthetic domain shifts. Labels are never touched; pixels are clamped to `[0, 1]`.

use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Float, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ShiftSpec {
    #[default]
    Identity,
    /// Separable Gaussian blur, radius `ceil(3 sigma)`, edge pixels replicated.
    Blur { sigma: f64 },
    /// Additive Gaussian noise.
    Noise { sigma: f64 },
    /// Square of `fraction` of the image area set to zero, centred or at a
    /// random per-image position.
    Occlude {
        fraction: f64,
        #[serde(default)]
        random_location: bool,
    },
    /// Same rotation (degrees), scale and translation (pixels) for every image.
    AffineFixed {
        rotation: f64,
        scale: f64,
        #[serde(default)]
        translate: [f64; 2],
    },
    /// Per-image affine parameters drawn uniformly from the given ranges.
    AffineRandom {
        rotation: [f64; 2],
        scale: [f64; 2],
        translate: [f64; 2],
    },
    /// Per-pixel linear colour map `out = matrix · in + offset`.
    ChannelMix { matrix: Vec<Vec<f64>>, offset: Vec<f64> },
    /// Per-pixel nonlinear colour map `out[c] = in[permutation[c]] ^ gamma[c]`.
    ChannelWarp { permutation: Vec<usize>, gamma: Vec<f64> },
}

impl ShiftSpec {
    /// YUV-style linear colour transform, with the V row scaled by 0.8 so
    /// every output stays inside `[0, 1]` and the map remains invertible.
    pub fn yuv() -> Self {
        ShiftSpec::ChannelMix {
            matrix: vec![
                vec![0.299, 0.587, 0.114],
                vec![-0.147, -0.289, 0.436],
                vec![0.492, -0.412, -0.080],
            ],
            offset: vec![0.0, 0.5, 0.5],
        }
    }

    /// Nonlinear stand-in for an HSV-like recoding: channel rotation plus gamma.
    pub fn hsv_like() -> Self {
        ShiftSpec::ChannelWarp {
            permutation: vec![2, 0, 1],
            gamma: vec![0.5, 2.0, 1.0],
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ShiftSpec::Identity => "identity",
            ShiftSpec::Blur { .. } => "blur",
            ShiftSpec::Noise { .. } => "noise",
            ShiftSpec::Occlude { .. } => "occlude",
            ShiftSpec::AffineFixed { .. } => "affine_fixed",
            ShiftSpec::AffineRandom { .. } => "affine_random",
            ShiftSpec::ChannelMix { .. } => "channel_mix",
            ShiftSpec::ChannelWarp { .. } => "channel_warp",
        }
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        match self {
            ShiftSpec::Blur { sigma } | ShiftSpec::Noise { sigma } if !(*sigma >= 0.0) => {
                bad(format!("sigma must be non-negative, got {sigma}"))
            }
            ShiftSpec::Occlude { fraction, .. } if !(0.0..=1.0).contains(fraction) => {
                bad(format!("occlusion fraction must be in [0, 1], got {fraction}"))
            }
            ShiftSpec::AffineFixed { scale, .. } if !(*scale > 0.0) => {
                bad(format!("affine scale must be positive, got {scale}"))
            }
            ShiftSpec::AffineRandom { scale, .. } if !(scale[0] > 0.0 && scale[1] >= scale[0]) => {
                bad(format!("bad affine scale range {scale:?}"))
            }
            ShiftSpec::ChannelMix { matrix, offset } => {
                if matrix.len() != channels || matrix.iter().any(|r| r.len() != channels) || offset.len() != channels {
                    bad(format!("channel mix must be {channels}×{channels} with {channels} offsets"))
                } else {
                    Ok(())
                }
            }
            ShiftSpec::ChannelWarp { permutation, gamma } => {
                let mut sorted = permutation.clone();
                sorted.sort_unstable();
                if sorted != (0..channels).collect::<Vec<_>>() || gamma.len() != channels {
                    bad(format!("channel warp needs a permutation of 0..{channels} and {channels} gammas"))
                } else if gamma.iter().any(|g| !(*g > 0.0)) {
                    bad("gammas must be positive".into())
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

/// Applies a shift. Image `i` uses the stream `rng.fork(i)`, so the output
/// does not depend on processing order.
pub fn apply_shift(data: &LabeledDataset, spec: &ShiftSpec, rng: &Rng) -> Result<LabeledDataset> {
    let shape = data.image_shape().to_vec();
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    spec.validate(c)?;
    if let ShiftSpec::Identity = spec {
        return Ok(data.clone());
    }
    let kernel = match spec {
        ShiftSpec::Blur { sigma } => Some(gaussian_kernel(*sigma)),
        _ => None,
    };
    let per = c * h * w;
    let mut out = Vec::with_capacity(data.images.len());
    for i in 0..data.len() {
        let src = data.images.row(i);
        let mut rng = rng.fork(i as u64);
        let mut img: Vec<Float> = match spec {
            ShiftSpec::Identity => unreachable!(),
            ShiftSpec::Blur { .. } => blur(src, c, h, w, kernel.as_deref().unwrap()),
            ShiftSpec::Noise { sigma } => src.iter().map(|&v| v + (sigma * rng.normal()) as Float).collect(),
            ShiftSpec::Occlude {
                fraction,
                random_location,
            } => occlude(src, c, h, w, *fraction, random_location.then_some(&mut rng)),
            ShiftSpec::AffineFixed {
                rotation,
                scale,
                translate,
            } => warp(src, c, h, w, *rotation, *scale, *translate),
            ShiftSpec::AffineRandom {
                rotation,
                scale,
                translate,
            } => {
                let r = rng.uniform_range(rotation[0], rotation[1]);
                let s = rng.uniform_range(scale[0], scale[1]);
                let t = [
                    rng.uniform_range(translate[0], translate[1]),
                    rng.uniform_range(translate[0], translate[1]),
                ];
                warp(src, c, h, w, r, s, t)
            }
            ShiftSpec::ChannelMix { matrix, offset } => mix(src, c, h * w, matrix, offset),
            ShiftSpec::ChannelWarp { permutation, gamma } => {
                let hw = h * w;
                let mut o = vec![0.0; per];
                for ch in 0..c {
                    let from = &src[permutation[ch] * hw..(permutation[ch] + 1) * hw];
                    for (d, &s) in o[ch * hw..(ch + 1) * hw].iter_mut().zip(from) {
                        *d = (s.max(0.0) as f64).powf(gamma[ch]) as Float;
                    }
                }
                o
            }
        };
        for v in &mut img {
            *v = v.clamp(0.0, 1.0);
        }
        out.extend_from_slice(&img);
    }
    LabeledDataset::new(
        Tensor::new(data.images.shape().to_vec(), out)?,
        data.labels.clone(),
        data.classes,
    )
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-radius..=radius)
        .map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.into_iter().map(|v| v / sum).collect()
}

fn blur(src: &[Float], c: usize, h: usize, w: usize, kernel: &[f64]) -> Vec<Float> {
    let r = (kernel.len() / 2) as isize;
    let mut tmp = vec![0.0f64; c * h * w];
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, kv) in kernel.iter().enumerate() {
                    let xx = (x as isize + k as isize - r).clamp(0, w as isize - 1) as usize;
                    acc += kv * plane[y * w + xx] as f64;
                }
                tmp[ch * h * w + y * w + x] = acc;
            }
        }
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, kv) in kernel.iter().enumerate() {
                    let yy = (y as isize + k as isize - r).clamp(0, h as isize - 1) as usize;
                    acc += kv * tmp[ch * h * w + yy * w + x];
                }
                out[ch * h * w + y * w + x] = acc as Float;
            }
        }
    }
    out
}

fn occlude(src: &[Float], c: usize, h: usize, w: usize, fraction: f64, rng: Option<&mut Rng>) -> Vec<Float> {
    let side_h = ((fraction.sqrt() * h as f64).round() as usize).min(h);
    let side_w = ((fraction.sqrt() * w as f64).round() as usize).min(w);
    let (y0, x0) = match rng {
        Some(r) => (r.below(h - side_h + 1), r.below(w - side_w + 1)),
        None => ((h - side_h) / 2, (w - side_w) / 2),
    };
    let mut out = src.to_vec();
    for ch in 0..c {
        for y in y0..y0 + side_h {
            for x in x0..x0 + side_w {
                out[(ch * h + y) * w + x] = 0.0;
            }
        }
    }
    out
}

/// Inverse-mapped bilinear warp about the image centre with zero padding.
fn warp(src: &[Float], c: usize, h: usize, w: usize, rotation_deg: f64, scale: f64, t: [f64; 2]) -> Vec<Float> {
    let (sin, cos) = rotation_deg.to_radians().sin_cos();
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let mut out = vec![0.0; c * h * w];
    let sample = |plane: &[Float], x: f64, y: f64| -> f64 {
        let px = |xi: isize, yi: isize| -> f64 {
            if xi < 0 || yi < 0 || xi >= w as isize || yi >= h as isize {
                0.0
            } else {
                plane[yi as usize * w + xi as usize] as f64
            }
        };
        let (x, y) = (x - 0.5, y - 0.5);
        let (x0, y0) = (x.floor(), y.floor());
        let (ax, ay) = (x - x0, y - y0);
        let (xi, yi) = (x0 as isize, y0 as isize);
        (1.0 - ay) * ((1.0 - ax) * px(xi, yi) + ax * px(xi + 1, yi))
            + ay * ((1.0 - ax) * px(xi, yi + 1) + ax * px(xi + 1, yi + 1))
    };
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                // output -> input: undo translation, rotation, then scale
                let dx = x as f64 + 0.5 - cx - t[0];
                let dy = y as f64 + 0.5 - cy - t[1];
                let ix = (cos * dx + sin * dy) / scale + cx;
                let iy = (-sin * dx + cos * dy) / scale + cy;
                out[(ch * h + y) * w + x] = sample(plane, ix, iy) as Float;
            }
        }
    }
    out
}

fn mix(src: &[Float], c: usize, hw: usize, matrix: &[Vec<f64>], offset: &[f64]) -> Vec<Float> {
    let mut out = vec![0.0; c * hw];
    for p in 0..hw {
        for (o, row) in matrix.iter().enumerate() {
            let mut acc = offset[o];
            for (i, m) in row.iter().enumerate() {
                acc += m * src[i * hw + p] as f64;
            }
            out[o * hw + p] = acc as Float;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::{synth_dataset, synth_dataset_with, Palette, SynthOptions};

    fn gray() -> LabeledDataset {
        synth_dataset(&Rng::new(1), 20, 10).unwrap()
    }

    fn color() -> LabeledDataset {
        let opts = SynthOptions {
            palette: Palette::Color,
            ..Default::default()
        };
        synth_dataset_with(&Rng::new(1), 20, 10, &opts).unwrap()
    }

    fn variance(x: &[Float]) -> f64 {
        let n = x.len() as f64;
        let m = x.iter().map(|&v| v as f64).sum::<f64>() / n;
        x.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / n
    }

    #[test]
    fn identity_is_bit_equal() {
        let d = gray();
        assert_eq!(apply_shift(&d, &ShiftSpec::Identity, &Rng::new(0)).unwrap(), d);
    }

    #[test]
    fn identity_channel_mix_is_bit_equal() {
        let d = color();
        let spec = ShiftSpec::ChannelMix {
            matrix: vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
            offset: vec![0.0; 3],
        };
        assert_eq!(apply_shift(&d, &spec, &Rng::new(0)).unwrap(), d);
    }

    #[test]
    fn blur_kernel_normalized() {
        for sigma in [0.5, 1.0, 2.3] {
            let k = gaussian_kernel(sigma);
            assert_eq!(k.len(), 2 * (3.0 * sigma).ceil() as usize + 1);
            assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn blur_lowers_variance_of_every_image() {
        let d = gray();
        let b = apply_shift(&d, &ShiftSpec::Blur { sigma: 1.0 }, &Rng::new(0)).unwrap();
        for i in 0..d.len() {
            assert!(variance(b.images.row(i)) < variance(d.images.row(i)), "image {i}");
        }
        assert_eq!(b.labels, d.labels);
    }

    #[test]
    fn shifts_clamp_and_preserve_labels() {
        let d = color();
        let specs = [
            ShiftSpec::Noise { sigma: 0.5 },
            ShiftSpec::Occlude { fraction: 0.25, random_location: true },
            ShiftSpec::AffineFixed { rotation: 30.0, scale: 1.2, translate: [1.0, -2.0] },
            ShiftSpec::AffineRandom { rotation: [-40.0, 40.0], scale: [0.8, 1.2], translate: [-2.0, 2.0] },
            ShiftSpec::yuv(),
            ShiftSpec::hsv_like(),
            ShiftSpec::ChannelMix { matrix: vec![vec![3.0, 0.0, 0.0]; 3], offset: vec![-0.5; 3] },
        ];
        for spec in &specs {
            let s = apply_shift(&d, spec, &Rng::new(3)).unwrap();
            assert_eq!(s.labels, d.labels, "{}", spec.name());
            assert!(s.images.data().iter().all(|v| (0.0..=1.0).contains(v)), "{}", spec.name());
            assert_eq!(s, apply_shift(&d, spec, &Rng::new(3)).unwrap());
        }
    }

    #[test]
    fn yuv_preset_stays_in_range_without_clamping() {
        let ShiftSpec::ChannelMix { matrix, offset } = ShiftSpec::yuv() else { unreachable!() };
        for corner in 0..8 {
            let x = [(corner & 1) as f64, ((corner >> 1) & 1) as f64, ((corner >> 2) & 1) as f64];
            for (row, o) in matrix.iter().zip(&offset) {
                let v: f64 = o + row.iter().zip(&x).map(|(m, xi)| m * xi).sum::<f64>();
                assert!((0.0..=1.0).contains(&v), "corner {x:?} gives {v}");
            }
        }
    }

    #[test]
    fn fixed_occlusion_blanks_centre() {
        let d = gray();
        let o = apply_shift(&d, &ShiftSpec::Occlude { fraction: 0.25, random_location: false }, &Rng::new(0)).unwrap();
        for i in 0..d.len() {
            let img = o.images.row(i);
            for y in 4..12 {
                for x in 4..12 {
                    assert_eq!(img[y * 16 + x], 0.0);
                }
            }
            assert_eq!(img[0], d.images.row(i)[0]);
        }
    }

    #[test]
    fn unit_affine_is_identity() {
        let d = gray();
        let a = apply_shift(&d, &ShiftSpec::AffineFixed { rotation: 0.0, scale: 1.0, translate: [0.0, 0.0] }, &Rng::new(0)).unwrap();
        for (x, y) in a.images.data().iter().zip(d.images.data()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let d = gray();
        assert!(apply_shift(&d, &ShiftSpec::yuv(), &Rng::new(0)).is_err());
        assert!(apply_shift(&d, &ShiftSpec::Blur { sigma: -1.0 }, &Rng::new(0)).is_err());
        assert!(apply_shift(&d, &ShiftSpec::Occlude { fraction: 2.0, random_location: false }, &Rng::new(0)).is_err());
    }

    #[test]
    fn spec_json_shape() {
        let s: ShiftSpec = serde_json::from_str(r#"{"kind":"blur","sigma":1.5}"#).unwrap();
        assert_eq!(s, ShiftSpec::Blur { sigma: 1.5 });
        assert!(serde_json::from_str::<ShiftSpec>(r#"{"kind":"blur","sigma":1.5,"x":1}"#).is_err());
    }
}
