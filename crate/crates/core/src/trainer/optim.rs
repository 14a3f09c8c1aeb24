//! Adam with decoupled weight decay.

use crate::error::{bail, Result};
use crate::net::{ModelParams, ParamRole, Real};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 5e-4,
            weight_decay: 5e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments (flattened in parameter visiting order) and the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            step: 0,
        }
    }
}

/// One AdamW update. Normalization parameters are never decayed.
/// Non-finite gradients reject the step and leave everything untouched.
pub fn adamw_step<T: Real>(
    params: &mut ModelParams<T>,
    grads: &ModelParams<T>,
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    let g = grads.to_flat();
    if g.len() != state.m.len() || params.config != grads.config {
        bail!(Shape, "gradient/optimizer state does not match the parameters");
    }
    if g.iter().any(|v| !v.is_finite()) {
        bail!(Numeric, "non-finite gradient at step {}", state.step + 1);
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let bc1 = T::lit(1.0 - cfg.beta1.powi(t));
    let bc2 = T::lit(1.0 - cfg.beta2.powi(t));
    let lr = T::lit(cfg.learning_rate);
    let decay = T::lit(cfg.learning_rate * cfg.weight_decay);
    let eps = T::lit(cfg.eps);
    let one = T::one();
    let mut off = 0;
    let (m, v) = (&mut state.m, &mut state.v);
    params.for_each_mut(&mut |_, role, w| {
        for (j, wj) in w.iter_mut().enumerate() {
            let i = off + j;
            m[i] = b1 * m[i] + (one - b1) * g[i];
            v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
            if role != ParamRole::Norm {
                *wj -= decay * *wj;
            }
            *wj -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + eps);
        }
        off += w.len();
    });
    Ok(())
}
