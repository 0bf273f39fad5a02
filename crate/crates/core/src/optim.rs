//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// A named trainable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T: Scalar = f32> {
    pub name: String,
    pub value: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        Param {
            name: name.into(),
            value,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment buffers, one pair per parameter.
#[derive(Clone, Debug, Default)]
pub struct AdamState<T: Scalar = f32> {
    pub step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new() -> Self {
        AdamState {
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }
}

/// Applies one Adam update in place. Nothing is modified when any gradient
/// is non-finite or mis-shaped.
pub fn adam_step<T: Scalar>(
    params: &mut [Param<T>],
    grads: &[&[T]],
    state: &mut AdamState<T>,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::dim(
            "adam_step",
            format!("{} parameters but {} gradients", params.len(), grads.len()),
        ));
    }
    for (p, g) in params.iter().zip(grads) {
        if g.len() != p.value.numel() {
            return Err(Error::dim("adam_step", format!("gradient of {} has the wrong length", p.name)));
        }
        if let Some(i) = g.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("gradient of {}", p.name),
                detail: format!("element {i} is {:?}", g[i]),
            });
        }
    }
    if state.m.is_empty() {
        state.m = params.iter().map(|p| vec![T::zero(); p.value.numel()]).collect();
        state.v = state.m.clone();
    } else if state.m.len() != params.len()
        || state.m.iter().zip(params.iter()).any(|(m, p)| m.len() != p.value.numel())
    {
        return Err(Error::dim("adam_step", "optimizer state does not match the parameters"));
    }

    state.step += 1;
    let t = state.step as f64;
    let b1 = T::from_f64(cfg.beta1);
    let b2 = T::from_f64(cfg.beta2);
    let one = T::one();
    let bc1 = T::from_f64(1.0 - cfg.beta1.powf(t));
    let bc2 = T::from_f64(1.0 - cfg.beta2.powf(t));
    let lr = T::from_f64(lr);
    let eps = T::from_f64(cfg.eps);
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        for (((w, &g), m), v) in p.value.data_mut().iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64) -> Vec<Param<f64>> {
        vec![Param::new("w", Tensor::from_f64(&[1], &[value]).unwrap())]
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut params = single(0.75);
        let mut state = AdamState::new();
        for _ in 0..5 {
            adam_step(&mut params, &[&[0.0]], &mut state, 1e-2, &AdamConfig::default()).unwrap();
        }
        assert_eq!(params[0].value.data(), &[0.75]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m̂ = g, v̂ = g², Δ = -lr·g/(|g| + eps)
        let lr = 1e-3;
        for &g in &[0.5, -3.0, 1e-2] {
            let mut params = single(1.0);
            let mut state = AdamState::new();
            let cfg = AdamConfig::default();
            adam_step(&mut params, &[&[g]], &mut state, lr, &cfg).unwrap();
            let expected = 1.0 - lr * g / (g.abs() + cfg.eps);
            assert!((params[0].value.data()[0] - expected).abs() < 1e-15);
            let delta = params[0].value.data()[0] - 1.0;
            assert!((delta + lr * g.signum()).abs() < 1e-8);
        }
    }

    #[test]
    fn constant_gradient_converges_to_lr_steps() {
        let lr = 1e-2;
        let mut params = single(0.0);
        let mut state = AdamState::new();
        let mut prev = 0.0;
        let mut last_delta = 0.0;
        for _ in 0..2000 {
            adam_step(&mut params, &[&[0.3]], &mut state, lr, &AdamConfig::default()).unwrap();
            last_delta = params[0].value.data()[0] - prev;
            prev = params[0].value.data()[0];
        }
        assert!((last_delta + lr).abs() < 1e-6, "{last_delta}");
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut params = single(1.0);
        let mut state = AdamState::new();
        let err = adam_step(&mut params, &[&[f64::NAN]], &mut state, 1e-3, &AdamConfig::default()).unwrap_err();
        assert!(err.to_string().contains("gradient of w"), "{err}");
        assert_eq!(params[0].value.data(), &[1.0]);
        assert_eq!(state.step, 0);
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut params = vec![Param::new("a", Tensor::<f32>::from_f64(&[3], &[0.1, 0.2, 0.3]).unwrap())];
            let mut state = AdamState::new();
            for i in 0..10 {
                let g = [i as f32 * 0.1, -0.5, 0.25];
                adam_step(&mut params, &[&g], &mut state, 1e-3, &AdamConfig::default()).unwrap();
            }
            params[0].value.clone()
        };
        assert_eq!(run(), run());
    }
}
