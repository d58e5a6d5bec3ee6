use serde::{Deserialize, Serialize};

use super::{cast, wide, Scalar, Tensor};

/// AdamW hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First and second moments, one buffer per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<S> {
    pub step: u64,
    pub m: Vec<Vec<S>>,
    pub v: Vec<Vec<S>>,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(params: &[Tensor<S>]) -> Self {
        AdamState {
            step: 0,
            m: params.iter().map(|p| vec![S::zero(); p.len()]).collect(),
            v: params.iter().map(|p| vec![S::zero(); p.len()]).collect(),
        }
    }
}

/// One update. Weight decay is applied to the parameter first
/// (`p ← p − lr·wd·p`), then the bias-corrected Adam step.
pub fn adamw_step<S: Scalar>(
    params: &mut [Tensor<S>],
    grads: &[Vec<S>],
    state: &mut AdamState<S>,
    hp: &AdamW,
) {
    assert_eq!(params.len(), grads.len(), "one gradient per parameter");
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - hp.beta1.powi(t);
    let bc2 = 1.0 - hp.beta2.powi(t);
    for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        assert_eq!(p.len(), g.len(), "gradient shape mismatch");
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        for i in 0..p.len() {
            let gi = wide(g[i]);
            let mut pi = wide(p.data[i]);
            pi -= hp.lr * hp.weight_decay * pi;
            let mi = hp.beta1 * wide(m[i]) + (1.0 - hp.beta1) * gi;
            let vi = hp.beta2 * wide(v[i]) + (1.0 - hp.beta2) * gi * gi;
            m[i] = cast(mi);
            v[i] = cast(vi);
            pi -= hp.lr * (mi / bc1) / ((vi / bc2).sqrt() + hp.eps);
            p.data[i] = cast(pi);
        }
    }
}
