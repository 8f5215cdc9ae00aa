use crate::params::ParamStore;
use crate::scalar::Real;
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Step-decay learning rate: `initial * factor^k` where `k` counts the decay epochs reached.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    pub initial: f64,
    pub decay_epochs: Vec<usize>,
    pub factor: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self { initial: 5e-4, decay_epochs: vec![10, 15], factor: 0.1 }
    }
}

impl LrSchedule {
    /// Learning rate for a zero-based epoch index.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let k = self.decay_epochs.iter().filter(|&&d| epoch >= d).count();
        self.initial * self.factor.powi(k as i32)
    }
}

/// Adam moment accumulators, one pair per registered tensor (buffers keep empty slots).
#[derive(Debug, Clone)]
pub struct OptimizerState<T: Real = f32> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        let zeros = |p: &crate::params::Parameter<T>| {
            if p.is_trainable() {
                Tensor::zeros(p.value.shape())
            } else {
                Tensor::zeros(&[0])
            }
        };
        Self {
            m: store.iter().map(|(_, p)| zeros(p)).collect(),
            v: store.iter().map(|(_, p)| zeros(p)).collect(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update of every trainable tensor from its stored gradient.
pub fn adam_step<T: Real>(store: &mut ParamStore<T>, state: &mut OptimizerState<T>, lr: f64) {
    state.step += 1;
    let t = state.step as i32;
    let b1 = T::from_f64(BETA1);
    let b2 = T::from_f64(BETA2);
    let c1 = T::from_f64(1.0 - BETA1.powi(t));
    let c2 = T::from_f64(1.0 - BETA2.powi(t));
    let eps = T::from_f64(ADAM_EPS);
    let lr = T::from_f64(lr);
    let one = T::one();
    for (i, p) in store.iter_mut().enumerate() {
        if !p.is_trainable() {
            continue;
        }
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let g = p.grad.data();
        for (j, w) in p.value.data_mut().iter_mut().enumerate() {
            m[j] = b1 * m[j] + (one - b1) * g[j];
            v[j] = b2 * v[j] + (one - b2) * g[j] * g[j];
            let mhat = m[j] / c1;
            let vhat = v[j] / c2;
            *w = *w - lr * mhat / (vhat.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamKind;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut store = ParamStore::<f32>::new();
        store.register("w", Tensor::new(&[3], vec![0.5, -1.0, 2.0]).unwrap(), ParamKind::Trainable);
        let before = store.value(crate::ParamId(0)).clone();
        let mut st = OptimizerState::new(&store);
        for _ in 0..3 {
            adam_step(&mut store, &mut st, 5e-4);
        }
        assert_eq!(store.value(crate::ParamId(0)), &before);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = ParamStore::<f64>::new();
        let id = store.register("w", Tensor::scalar(1.0), ParamKind::Trainable);
        store.get_mut(id).grad = Tensor::scalar(1.0);
        let mut st = OptimizerState::new(&store);
        adam_step(&mut store, &mut st, 5e-4);
        let delta = 1.0 - store.value(id).data()[0];
        // m_hat / sqrt(v_hat) == 1, so the step is lr / (1 + eps).
        assert!((delta - 5e-4).abs() < 1e-10, "{delta}");
    }

    #[test]
    fn buffers_are_not_updated() {
        let mut store = ParamStore::<f32>::new();
        let id = store.register("rm", Tensor::scalar(0.0), ParamKind::Buffer);
        store.get_mut(id).grad = Tensor::scalar(1.0);
        let mut st = OptimizerState::new(&store);
        adam_step(&mut store, &mut st, 1e-1);
        assert_eq!(store.value(id).data()[0], 0.0);
    }

    #[test]
    fn schedule_decays_tenfold_at_epochs_ten_and_fifteen() {
        let s = LrSchedule::default();
        assert_eq!(s.lr_at(0), 5e-4);
        assert_eq!(s.lr_at(9), 5e-4);
        assert!((s.lr_at(10) - 5e-5).abs() < 1e-18);
        assert!((s.lr_at(14) - 5e-5).abs() < 1e-18);
        assert!((s.lr_at(15) - 5e-6).abs() < 1e-18);
        assert!((s.lr_at(29) - 5e-6).abs() < 1e-18);
    }
}
