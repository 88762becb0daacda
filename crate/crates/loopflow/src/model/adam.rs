//! Adam with decoupled weight decay over [`ModelParams`] tensors.

use super::ModelParams;

/// Optimizer constants. Weight decay is decoupled (applied directly to the
/// parameter, not through the moments).
#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Clone, Debug)]
pub struct AdamState {
    m: ModelParams,
    v: ModelParams,
    step: u64,
}

impl AdamState {
    pub fn new(like: &ModelParams) -> Self {
        AdamState {
            m: like.zeros_like(),
            v: like.zeros_like(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected update of a single parameter.
///
/// p -= lr * m_hat / (sqrt(v_hat) + eps) + lr * wd * p
pub fn adam_update_scalar(
    p: &mut f64,
    m: &mut f64,
    v: &mut f64,
    g: f64,
    cfg: &AdamConfig,
    step: u64,
) {
    *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
    *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
    let m_hat = *m / (1.0 - cfg.beta1.powi(step as i32));
    let v_hat = *v / (1.0 - cfg.beta2.powi(step as i32));
    *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps) + cfg.lr * cfg.weight_decay * *p;
}

/// One optimizer step over every tensor, in declaration order.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut AdamState,
    cfg: &AdamConfig,
) {
    state.step += 1;
    let step = state.step;
    let g_flat: Vec<&[f64]> = grads.tensor_views().into_iter().map(|(_, _, _, d)| d).collect();
    let mut p_flat = params.tensor_slices_mut();
    let mut m_flat = state.m.tensor_slices_mut();
    let mut v_flat = state.v.tensor_slices_mut();
    for ti in 0..g_flat.len() {
        let g = g_flat[ti];
        let p = &mut p_flat[ti];
        let m = &mut m_flat[ti];
        let v = &mut v_flat[ti];
        for k in 0..g.len() {
            adam_update_scalar(&mut p[k], &mut m[k], &mut v[k], g[k], cfg, step);
        }
    }
}
