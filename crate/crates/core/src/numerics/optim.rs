use super::param::{GradBuffer, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Adam with decoupled weight decay, global-norm clipping and linear warmup.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub warmup_steps: u64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            clip_norm: 1.0,
            warmup_steps: 500,
        }
    }
}

impl AdamConfig {
    /// Learning rate used for the `step`-th update (1-based).
    pub fn lr_at(&self, step: u64) -> f64 {
        if self.warmup_steps == 0 || step >= self.warmup_steps {
            self.lr
        } else {
            self.lr * step as f64 / self.warmup_steps as f64
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0
            && self.clip_norm > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    frozen: Vec<bool>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepInfo {
    pub lr: f64,
    pub grad_norm: f64,
    pub clipped_norm: f64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros = |p: &super::param::Parameter| Tensor::zeros(p.value.rows(), p.value.cols());
        Self {
            step: 0,
            m: store.iter().map(|(_, p)| zeros(p)).collect(),
            v: store.iter().map(|(_, p)| zeros(p)).collect(),
            frozen: vec![false; store.len()],
        }
    }

    /// Exclude parameters from updates (and from the clipping norm).
    pub fn freeze(&mut self, mut predicate: impl FnMut(&str) -> bool, store: &ParamStore) {
        for (id, p) in store.iter() {
            self.frozen[id.index()] = predicate(&p.name);
        }
    }

    pub fn is_frozen(&self, index: usize) -> bool {
        self.frozen[index]
    }
}

/// Apply one update. Gradients are clipped in place before the moment updates.
/// A non-finite gradient aborts the step, leaving parameters and state untouched.
pub fn optimizer_step(
    store: &mut ParamStore,
    grads: &mut GradBuffer,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<StepInfo> {
    for ((id, p), g) in store.iter().zip(grads.tensors()) {
        if !state.frozen[id.index()] && !g.all_finite() {
            return Err(Error::NonFinite(format!("gradient of parameter {}", p.name)));
        }
    }
    for (i, g) in grads.tensors_mut().iter_mut().enumerate() {
        if state.frozen[i] {
            g.data_mut().fill(0.0);
        }
    }
    let norm = grads.global_norm();
    if norm > cfg.clip_norm {
        grads.scale(cfg.clip_norm / norm);
    }
    let clipped_norm = grads.global_norm();

    state.step += 1;
    let t = state.step;
    let lr = cfg.lr_at(t);
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for (i, (p, g)) in store.iter_mut().zip(grads.tensors()).enumerate() {
        if state.frozen[i] {
            continue;
        }
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let w = p.value.data_mut();
        for j in 0..w.len() {
            let gj = g.data()[j];
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            w[j] -= lr * (mhat / (vhat.sqrt() + cfg.eps) + cfg.weight_decay * w[j]);
        }
    }
    Ok(StepInfo {
        lr,
        grad_norm: norm,
        clipped_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64, grad: f64) -> (ParamStore, GradBuffer) {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::scalar(value));
        let mut g = GradBuffer::zeros_like(&store);
        g.accumulate(id, &Tensor::scalar(grad));
        (store, g)
    }

    #[test]
    fn warmup_is_linear() {
        let cfg = AdamConfig {
            lr: 1e-3,
            warmup_steps: 500,
            ..Default::default()
        };
        assert!((cfg.lr_at(250) - 5e-4).abs() < 1e-18);
        assert_eq!(cfg.lr_at(500), 1e-3);
        assert_eq!(cfg.lr_at(10_000), 1e-3);
    }

    #[test]
    fn clipping_scales_to_ceiling() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::row_vector(vec![0.0, 0.0]));
        let mut g = GradBuffer::zeros_like(&store);
        g.accumulate(a, &Tensor::row_vector(vec![6.0, 8.0]));
        let mut st = AdamState::new(&store);
        let cfg = AdamConfig {
            clip_norm: 1.0,
            ..Default::default()
        };
        let info = optimizer_step(&mut store, &mut g, &mut st, &cfg).unwrap();
        assert_eq!(info.grad_norm, 10.0);
        assert!((info.clipped_norm - 1.0).abs() < 1e-12);
        assert!((g.get(a).data()[0] - 0.6).abs() < 1e-12);
        assert!((g.get(a).data()[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn first_step_has_analytic_magnitude() {
        let (mut store, mut g) = single(1.0, 0.3);
        let mut st = AdamState::new(&store);
        let cfg = AdamConfig {
            lr: 1e-2,
            weight_decay: 0.0,
            warmup_steps: 0,
            eps: 1e-8,
            ..Default::default()
        };
        optimizer_step(&mut store, &mut g, &mut st, &cfg).unwrap();
        let moved = 1.0 - store.value(super::super::param::ParamId(0)).item();
        let want = cfg.lr * 0.3 / (0.3 + cfg.eps);
        assert!((moved - want).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let (mut store, mut g) = single(1.0, f64::NAN);
        let before = store.clone();
        let mut st = AdamState::new(&store);
        let err = optimizer_step(&mut store, &mut g, &mut st, &AdamConfig::default()).unwrap_err();
        assert!(err.to_string().contains('w'));
        assert_eq!(store, before);
        assert_eq!(st.step, 0);
    }

    #[test]
    fn frozen_parameters_do_not_move() {
        let (mut store, mut g) = single(1.0, 0.5);
        let mut st = AdamState::new(&store);
        let snapshot = store.clone();
        st.freeze(|n| n == "w", &snapshot);
        optimizer_step(&mut store, &mut g, &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(store, snapshot);
    }

    #[test]
    fn deterministic() {
        let run = || {
            let (mut store, mut g) = single(0.7, -1.3);
            let mut st = AdamState::new(&store);
            optimizer_step(&mut store, &mut g, &mut st, &AdamConfig::default()).unwrap();
            store.value(super::super::param::ParamId(0)).item().to_bits()
        };
        assert_eq!(run(), run());
    }
}
