use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::Param;
use crate::tensor::Float;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

/// One bias-corrected Adam update of every trainable param, then zeroes all grads.
///
/// Frozen params are left bit-identical. A non-finite gradient on a trainable
/// param aborts the step before anything is modified.
pub fn adam_step<'a>(
    params: impl IntoIterator<Item = &'a mut Param>,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<()> {
    let params: Vec<&mut Param> = params.into_iter().collect();
    if params
        .iter()
        .any(|p| p.trainable && !p.grad.all_finite())
    {
        return Err(Error::NonFinite("gradient".into()));
    }
    for p in params {
        if p.trainable {
            p.step_count += 1;
            let t = p.step_count as i32;
            let c1 = 1.0 - beta1.powi(t);
            let c2 = 1.0 - beta2.powi(t);
            // moment updates in f64 so the stored moments are correctly rounded
            let grads = p.grad.data();
            let m = p.m.data_mut();
            for (mv, &g) in m.iter_mut().zip(grads) {
                *mv = (beta1 * *mv as f64 + (1.0 - beta1) * g as f64) as Float;
            }
            let v = p.v.data_mut();
            for (vv, &g) in v.iter_mut().zip(grads) {
                let g = g as f64;
                *vv = (beta2 * *vv as f64 + (1.0 - beta2) * g * g) as Float;
            }
            let (m, v) = (p.m.data(), p.v.data());
            for ((w, &mv), &vv) in p.value.data_mut().iter_mut().zip(m).zip(v) {
                let m_hat = mv as f64 / c1;
                let v_hat = vv as f64 / c2;
                *w -= (lr * m_hat / (v_hat.sqrt() + eps)) as Float;
            }
        }
        p.grad.data_mut().fill(0.0);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar_param(value: Float, grad: Float) -> Param {
        let mut p = Param::new(Tensor::filled(&[1], value));
        p.grad.data_mut()[0] = grad;
        p
    }

    #[test]
    fn frozen_param_is_untouched() {
        let mut p = scalar_param(0.123, 5.0);
        p.trainable = false;
        let before = p.value.data()[0].to_bits();
        adam_step([&mut p], 1e-3, 0.9, 0.999, 1e-8).unwrap();
        assert_eq!(p.value.data()[0].to_bits(), before);
        assert_eq!(p.step_count, 0);
        assert_eq!(p.grad.data()[0], 0.0);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = scalar_param(0.0, 1.0);
        adam_step([&mut p], 1e-3, 0.9, 0.999, 1e-8).unwrap();
        let want = -1e-3 / (1.0 + 1e-8);
        assert!((p.value.data()[0] as f64 - want).abs() < 1e-9);
        assert!((p.value.data()[0] as f64 - (-9.99999990e-4)).abs() < 1e-9);
    }

    #[test]
    fn two_steps_match_hand_trace() {
        // Oracle: Adam written out term by term in f64.
        let (lr, b1, b2, eps) = (1e-3, 0.9, 0.999, 1e-8);
        let (mut w, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
        for t in 1..=2 {
            let g = 1.0;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - f64::powi(b1, t));
            let vh = v / (1.0 - f64::powi(b2, t));
            w -= lr * mh / (vh.sqrt() + eps);
        }
        let mut p = scalar_param(0.0, 1.0);
        adam_step([&mut p], lr, b1, b2, eps).unwrap();
        p.grad.data_mut()[0] = 1.0;
        adam_step([&mut p], lr, b1, b2, eps).unwrap();
        assert!((p.value.data()[0] as f64 - w).abs() < 1e-8, "{} vs {w}", p.value.data()[0]);
        assert_eq!(p.step_count, 2);
    }

    #[test]
    fn non_finite_gradient_fails_without_modifying() {
        let mut a = scalar_param(1.0, 1.0);
        let mut b = scalar_param(2.0, Float::NAN);
        assert!(matches!(
            adam_step([&mut a, &mut b], 1e-3, 0.9, 0.999, 1e-8),
            Err(Error::NonFinite(_))
        ));
        assert_eq!(a.value.data()[0], 1.0);
    }
}
