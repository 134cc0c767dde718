//! Adam with decoupled weight decay.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Tensor};
use crate::networks::ModelParams;
use crate::scalar::{cast, Scalar};

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// First/second moment estimates per parameter, plus the step counter.
#[derive(Clone, Debug, Default)]
pub struct AdamState<S> {
    pub step: u64,
    pub m: BTreeMap<String, Tensor<S>>,
    pub v: BTreeMap<String, Tensor<S>>,
}

impl<S: Scalar> AdamState<S> {
    pub fn new() -> Self {
        Self {
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }
}

/// One update: decoupled weight decay (`theta -= lr * wd * theta`) applied
/// before the bias-corrected Adam step. Parameters without a gradient
/// entry are treated as zero-gradient (their moments decay, decay still
/// applies).
pub fn adam_step<S: Scalar>(
    params: &mut ModelParams<S>,
    grads: &Gradients<S>,
    state: &mut AdamState<S>,
    lr: f64,
    cfg: &AdamConfig,
) {
    state.step += 1;
    let t = state.step as i32;
    let beta1 = cast::<S>(cfg.beta1);
    let beta2 = cast::<S>(cfg.beta2);
    let eps = cast::<S>(cfg.eps);
    let lr_s = cast::<S>(lr);
    let decay = cast::<S>(lr * cfg.weight_decay);
    let bias1 = S::one() - beta1.powi(t);
    let bias2 = S::one() - beta2.powi(t);
    let one = S::one();
    for (name, theta) in params.tensors.iter_mut() {
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(&theta.shape));
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(&theta.shape));
        let zero_grad = Tensor::zeros(&theta.shape);
        let g = grads.get(name).unwrap_or(&zero_grad);
        for i in 0..theta.data.len() {
            let gi = g.data[i];
            theta.data[i] = theta.data[i] - decay * theta.data[i];
            m.data[i] = beta1 * m.data[i] + (one - beta1) * gi;
            v.data[i] = beta2 * v.data[i] + (one - beta2) * gi * gi;
            let m_hat = m.data[i] / bias1;
            let v_hat = v.data[i] / bias2;
            theta.data[i] = theta.data[i] - lr_s * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::{tiny_config, ModelParams};
    use crate::rng::SplitRng;

    fn setup() -> (ModelParams<f64>, AdamState<f64>) {
        let params = ModelParams::init(&tiny_config(), &mut SplitRng::new(1)).unwrap();
        (params, AdamState::new())
    }

    #[test]
    fn zero_grads_zero_decay_leave_params_unchanged() {
        let (mut params, mut state) = setup();
        let before = params.tensors.clone();
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        adam_step(&mut params, &Gradients::new(), &mut state, 1e-3, &cfg);
        assert_eq!(params.tensors, before);
    }

    #[test]
    fn first_step_moves_against_gradient_sign() {
        let (mut params, mut state) = setup();
        let name = "encoder.fuse.weight".to_string();
        let before = params.get(&name).clone();
        let mut grads = Gradients::new();
        let mut g = Tensor::zeros(&before.shape);
        for (i, v) in g.data.iter_mut().enumerate() {
            *v = if i % 2 == 0 { 0.5 } else { -0.25 };
        }
        grads.insert(name.clone(), g.clone());
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let lr = 1e-3;
        adam_step(&mut params, &grads, &mut state, lr, &cfg);
        let after = params.get(&name);
        for i in 0..before.data.len() {
            let delta = after.data[i] - before.data[i];
            // First step: m_hat = g, v_hat = g^2, update = -lr*g/(|g|+eps).
            let expect = -lr * g.data[i] / (g.data[i].abs() + cfg.eps);
            assert!((delta - expect).abs() < 1e-12, "i={i}: {delta} vs {expect}");
        }
    }

    #[test]
    fn weight_decay_shrinks_norm_under_zero_grads() {
        let (mut params, mut state) = setup();
        let norm = |p: &ModelParams<f64>| -> f64 {
            p.tensors
                .values()
                .flat_map(|t| t.data.iter())
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt()
        };
        let before = norm(&params);
        // The zero tensors (biases, final projection) stay zero; nonzero
        // weights shrink strictly, so the total norm must decrease.
        let cfg = AdamConfig::default();
        adam_step(&mut params, &Gradients::new(), &mut state, 1e-2, &cfg);
        let after = norm(&params);
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let (mut params, mut state) = setup();
            let mut grads = Gradients::new();
            grads.insert(
                "value.out.weight".into(),
                Tensor::full(&params.get("value.out.weight").shape, 0.3),
            );
            for _ in 0..5 {
                adam_step(&mut params, &grads, &mut state, 1e-3, &AdamConfig::default());
            }
            params.tensors
        };
        assert_eq!(run(), run());
    }
}
