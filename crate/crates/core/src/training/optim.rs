use crate::numerics::Tensor;
use crate::params::{ParamGroup, ParamStore};

use super::TrainError;

/// Hyperparameters of one AdamW update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

/// First and second moments for every parameter of a store.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    /// Updates applied so far.
    pub step: u64,
    pub m: Vec<Tensor<f32>>,
    pub v: Vec<Tensor<f32>>,
}

impl AdamState {
    pub fn new(store: &ParamStore<f32>) -> Self {
        let zeros = || store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        AdamState { step: 0, m: zeros(), v: zeros() }
    }
}

/// Per-group learning rates for one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroupLr {
    pub encoder: f64,
    pub decoder: f64,
}

impl GroupLr {
    pub fn uniform(lr: f64) -> Self {
        GroupLr { encoder: lr, decoder: lr }
    }

    pub fn get(&self, g: ParamGroup) -> f64 {
        match g {
            ParamGroup::Encoder => self.encoder,
            ParamGroup::Decoder => self.decoder,
        }
    }
}

/// One AdamW step with decoupled weight decay (decay, then the
/// bias-corrected Adam update). Parameters whose `skip` entry is true are
/// left untouched along with their moments. Every gradient is checked
/// before anything is modified.
pub fn adamw_step(
    store: &mut ParamStore<f32>,
    grads: &[Tensor<f32>],
    state: &mut AdamState,
    opt: &AdamW,
    lr: GroupLr,
    skip: &[bool],
) -> Result<(), TrainError> {
    if grads.len() != store.len() || state.m.len() != store.len() || skip.len() != store.len() {
        return Err(TrainError::Config("gradient, state and parameter counts differ".into()));
    }
    for ((id, p), gr) in store.iter().zip(grads) {
        if gr.shape() != p.value.shape() {
            return Err(TrainError::Config(format!("gradient shape {:?} for {} {:?}", gr.shape(), p.name, p.value.shape())));
        }
        if !skip[id.index()] && !gr.is_finite() {
            return Err(TrainError::NonFiniteGradient { param: p.name.clone() });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - opt.beta1.powi(t);
    let bc2 = 1.0 - opt.beta2.powi(t);
    let (b1, b2, eps) = (opt.beta1 as f32, opt.beta2 as f32, opt.eps as f32);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let i = id.index();
        if skip[i] {
            continue;
        }
        let lr_g = lr.get(store.get(id).group);
        let decay = (1.0 - lr_g * opt.weight_decay) as f32;
        let (lr_f, bc1, bc2) = (lr_g as f32, bc1 as f32, bc2 as f32);
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let p = store.value_mut(id).data_mut();
        for j in 0..p.len() {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p[j] = p[j] * decay - lr_f * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Global L2 norm of the gradients, accumulated in f64.
pub fn global_norm(grads: &[Tensor<f32>]) -> f64 {
    grads.iter().flat_map(|g| g.data()).map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
}

/// Rescales gradients by `max_norm / (norm + 1e-6)` when the global norm
/// exceeds `max_norm`. Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [Tensor<f32>], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let scale = (max_norm / (norm + 1e-6)) as f32;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
    }
    norm
}
