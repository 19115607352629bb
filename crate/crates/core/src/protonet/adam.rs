use serde::{Deserialize, Serialize};

use super::EncoderParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: EncoderParams,
    pub v: EncoderParams,
    pub t: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(params: &EncoderParams) -> Self {
        Self::with_config(params, AdamConfig::default())
    }

    pub fn with_config(params: &EncoderParams, config: AdamConfig) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
            config,
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn update(
    theta: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    decay: f64,
    lr: f64,
    cfg: AdamConfig,
    bias1: f64,
    bias2: f64,
) {
    for i in 0..theta.len() {
        let g = grad[i] + decay * theta[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / bias1;
        let v_hat = v[i] / bias2;
        theta[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// One bias-corrected Adam update. Weight decay is added to the gradient of
/// the weight matrices; biases are not decayed.
pub fn adam_step(params: &mut EncoderParams, grads: &EncoderParams, state: &mut AdamState, lr: f64, weight_decay: f64) {
    assert_eq!(params.dims(), grads.dims(), "gradient shape mismatch");
    state.t += 1;
    let cfg = state.config;
    let bias1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bias2 = 1.0 - cfg.beta2.powi(state.t as i32);
    let slices = [
        (
            params.w1.as_slice_mut().expect("standard layout"),
            grads.w1.as_slice().expect("standard layout"),
            state.m.w1.as_slice_mut().expect("standard layout"),
            state.v.w1.as_slice_mut().expect("standard layout"),
            weight_decay,
        ),
        (
            params.b1.as_slice_mut().expect("standard layout"),
            grads.b1.as_slice().expect("standard layout"),
            state.m.b1.as_slice_mut().expect("standard layout"),
            state.v.b1.as_slice_mut().expect("standard layout"),
            0.0,
        ),
        (
            params.w2.as_slice_mut().expect("standard layout"),
            grads.w2.as_slice().expect("standard layout"),
            state.m.w2.as_slice_mut().expect("standard layout"),
            state.v.w2.as_slice_mut().expect("standard layout"),
            weight_decay,
        ),
        (
            params.b2.as_slice_mut().expect("standard layout"),
            grads.b2.as_slice().expect("standard layout"),
            state.m.b2.as_slice_mut().expect("standard layout"),
            state.v.b2.as_slice_mut().expect("standard layout"),
            0.0,
        ),
    ];
    for (theta, grad, m, v, decay) in slices {
        update(theta, grad, m, v, decay, lr, cfg, bias1, bias2);
    }
}
