use super::mlp::{Mlp, MlpGrads};
use crate::error::{Error, Result};

pub const DEFAULT_LEARNING_RATE: f64 = 1e-5;

/// Adam moment accumulators for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    first: MlpGrads,
    second: MlpGrads,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
}

impl AdamState {
    pub fn new(params: &Mlp, learning_rate: f64) -> Self {
        AdamState {
            first: MlpGrads::zeros_like(params),
            second: MlpGrads::zeros_like(params),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            learning_rate,
        }
    }

    pub fn with_defaults(params: &Mlp) -> Self {
        Self::new(params, DEFAULT_LEARNING_RATE)
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut Mlp, grads: &MlpGrads, state: &mut AdamState) -> Result<()> {
    let shapes_match = |g: &MlpGrads| {
        g.weights.len() == params.weights().len()
            && g.weights
                .iter()
                .zip(params.weights())
                .all(|(a, b)| a.shape() == b.shape())
            && g.biases.iter().zip(params.biases()).all(|(a, b)| a.len() == b.len())
    };
    if !shapes_match(grads) || !shapes_match(&state.first) {
        return Err(Error::shape("adam gradients do not match parameters"));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let correction1 = 1.0 - b1.powi(t);
    let correction2 = 1.0 - b2.powi(t);
    let lr = state.learning_rate;
    let eps = state.epsilon;
    let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / correction1;
        let v_hat = *v / correction2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    };
    let (weights, biases) = params.params_mut();
    for l in 0..weights.len() {
        let w = weights[l].data_mut();
        let g = grads.weights[l].data();
        let m = state.first.weights[l].data_mut();
        let v = state.second.weights[l].data_mut();
        for i in 0..w.len() {
            update(&mut w[i], g[i], &mut m[i], &mut v[i]);
        }
        let b = &mut biases[l];
        let gb = &grads.biases[l];
        let mb = &mut state.first.biases[l];
        let vb = &mut state.second.biases[l];
        for i in 0..b.len() {
            update(&mut b[i], gb[i], &mut mb[i], &mut vb[i]);
        }
    }
    Ok(())
}
