//! Finite-difference gradient checks for single layers.
//!
//! The probe loss is `Σ w ⊙ forward(x)` for a fixed random `w`, accumulated in
//! f64. Analytic gradients come from one backward pass with `grad_out = w`;
//! numeric ones from central differences. Errors are norm-wise,
//! `‖a − n‖ / max(‖a‖, ‖n‖)`. An instance is scored on its whole gradient
//! (input and parameters concatenated): a single part, say a nearly
//! cancelling bias gradient or the input gradient behind a tiny scale, can be
//! so small that its own relative error only measures f32 rounding.

use crate::error::Result;
use crate::layers::{Layer, LayerKind};
use crate::rng::Rng;
use crate::tensor::{Float, Tensor};

pub const LAYER_KINDS: [&str; 6] = ["dense", "conv2d", "relu", "maxpool2d", "flatten", "scaleshift"];

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// Error on the full gradient; this is what checks are judged on.
    pub error: f64,
    /// Error on the input gradient alone.
    pub input_error: f64,
    /// Error on all parameter gradients of the layer taken as one vector
    /// (0 when it has none).
    pub param_error: f64,
}

impl GradCheck {
    /// Largest of the three errors; stricter than [`GradCheck::error`].
    pub fn max_error(&self) -> f64 {
        self.error.max(self.input_error).max(self.param_error)
    }
}

fn probe(layer: &Layer, x: &Tensor, w: &Tensor) -> Result<f64> {
    let (out, _) = layer.forward(x)?;
    Ok(out.data().iter().zip(w.data()).map(|(&o, &w)| o as f64 * w as f64).sum())
}

fn rel_error(a: &[f64], n: &[f64]) -> f64 {
    let diff = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(n.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Compares analytic and central-difference gradients of `layer` at `x`.
pub fn check_layer(layer: &Layer, x: &Tensor, w: &Tensor, h: f64) -> Result<GradCheck> {
    let mut analytic = layer.clone();
    for p in &mut analytic.params {
        p.grad.data_mut().fill(0.0);
    }
    let (_, cache) = analytic.forward(x)?;
    let grad_in = analytic.backward(&cache, w)?;

    let numeric = |f: &mut dyn FnMut(Float) -> Result<f64>| -> Result<f64> {
        let plus = f(h as Float)?;
        let minus = f(-h as Float)?;
        Ok((plus - minus) / (2.0 * h))
    };

    let mut n_in = Vec::with_capacity(x.len());
    let mut xp = x.clone();
    for i in 0..x.len() {
        let orig = x.data()[i];
        n_in.push(numeric(&mut |d| {
            xp.data_mut()[i] = orig + d;
            let v = probe(layer, &xp, w);
            xp.data_mut()[i] = orig;
            v
        })?);
    }
    let a_in: Vec<f64> = grad_in.data().iter().map(|&v| v as f64).collect();
    let input_error = rel_error(&a_in, &n_in);

    let mut n_p = Vec::new();
    let mut a_p = Vec::new();
    let mut lp = layer.clone();
    for pi in 0..layer.params.len() {
        for j in 0..layer.params[pi].len() {
            let orig = layer.params[pi].value.data()[j];
            n_p.push(numeric(&mut |d| {
                lp.params[pi].value.data_mut()[j] = orig + d;
                let v = probe(&lp, x, w);
                lp.params[pi].value.data_mut()[j] = orig;
                v
            })?);
        }
        a_p.extend(analytic.params[pi].grad.data().iter().map(|&v| v as f64));
    }
    let param_error = rel_error(&a_p, &n_p);
    let error = rel_error(&[a_in, a_p].concat(), &[n_in, n_p].concat());
    Ok(GradCheck {
        error,
        input_error,
        param_error,
    })
}

fn uniform_tensor(shape: &[usize], rng: &mut Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.uniform_range(-1.0, 1.0) as Float)
}

/// Values at least `gap` away from zero, so ReLU has no kink within `±h`.
fn away_from_zero(shape: &[usize], gap: f64, rng: &mut Rng) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = rng.uniform_range(gap, 1.0);
        (if rng.uniform() < 0.5 { -m } else { m }) as Float
    })
}

/// Random image whose pooling windows have a unique maximum by a margin of
/// more than `gap`: distinct values on a shuffled grid with spacing `gap`.
fn distinct_values(shape: &[usize], gap: f64, rng: &mut Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let mut vals: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut vals);
    Tensor::from_fn(shape, |i| (vals[i] as f64 * gap - 0.5 * n as f64 * gap) as Float)
}

/// A random small layer of the named kind with an input and probe weights.
pub fn random_instance(kind: &str, rng: &mut Rng) -> (Layer, Tensor, Tensor) {
    let batch = 1 + rng.below(3);
    let (mut layer, x) = match kind {
        "dense" => {
            let (i, o) = (1 + rng.below(6), 1 + rng.below(5));
            (Layer::dense(i, o), uniform_tensor(&[batch, i], rng))
        }
        "conv2d" => {
            let (ci, co) = (1 + rng.below(3), 1 + rng.below(3));
            let kernel = 1 + rng.below(3);
            let stride = 1 + rng.below(2);
            let padding = rng.below(2);
            let size = kernel + rng.below(4);
            (
                Layer::conv2d(ci, co, kernel, stride, padding),
                uniform_tensor(&[batch, ci, size, size], rng),
            )
        }
        "relu" => (Layer::relu(), away_from_zero(&[batch, 2 + rng.below(10)], 0.01, rng)),
        "maxpool2d" => {
            let window = 2 + rng.below(2);
            let stride = 1 + rng.below(window);
            let size = window + rng.below(4);
            let c = 1 + rng.below(3);
            (Layer::max_pool(window, stride), distinct_values(&[batch, c, size, size], 0.01, rng))
        }
        "flatten" => {
            let c = 1 + rng.below(3);
            (Layer::flatten(), uniform_tensor(&[batch, c, 1 + rng.below(3), 1 + rng.below(3)], rng))
        }
        "scaleshift" => {
            let c = 1 + rng.below(4);
            let x = if rng.uniform() < 0.5 {
                uniform_tensor(&[batch, c], rng)
            } else {
                uniform_tensor(&[batch, c, 1 + rng.below(3), 1 + rng.below(3)], rng)
            };
            (Layer::scale_shift(c), x)
        }
        other => panic!("unknown layer kind {other:?}"),
    };
    // random, non-identity parameters
    for p in &mut layer.params {
        for v in p.value.data_mut() {
            *v = rng.uniform_range(-1.0, 1.0) as Float;
        }
    }
    // Probe weights in [0.5, 1]: near-zero or cancelling weights make every
    // gradient tiny next to the f32 rounding of the outputs.
    let out_shape = layer.kind.output_shape(x.shape()).expect("instance shapes are valid");
    let w = Tensor::from_fn(&out_shape, |_| rng.uniform_range(0.5, 1.0) as Float);
    (layer, x, w)
}

/// Worst full-gradient error over `instances` random checks of one layer kind.
pub fn check_kind(kind: &str, instances: usize, h: f64, seed: u64) -> Result<f64> {
    let mut rng = Rng::new(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let (layer, x, w) = random_instance(kind, &mut rng);
        worst = worst.max(check_layer(&layer, &x, &w, h)?.error);
    }
    Ok(worst)
}

/// Tolerance for the compiled float width.
pub fn tolerance() -> f64 {
    if std::mem::size_of::<Float>() == 8 {
        1e-6
    } else {
        1e-3
    }
}

/// Kind name of a layer, as used by [`random_instance`].
pub fn kind_name(kind: &LayerKind) -> &'static str {
    match kind {
        LayerKind::Dense { .. } => "dense",
        LayerKind::Conv2d { .. } => "conv2d",
        LayerKind::Relu => "relu",
        LayerKind::MaxPool2d { .. } => "maxpool2d",
        LayerKind::Flatten => "flatten",
        LayerKind::ScaleShift { .. } => "scaleshift",
    }
}
