use super::ParamStore;

/// Bias-corrected Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl Adam {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }

    /// Applies one update from the accumulated gradients, in parameter
    /// order, then zeroes the gradients.
    pub fn step(&self, store: &mut ParamStore) {
        store.step += 1;
        let t = store.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for id in 0..store.len() {
            let p = store.get_mut(super::ParamId(id));
            let n = p.value.len();
            for k in 0..n {
                let g = p.grad.data()[k];
                let m = self.beta1 * p.m.data()[k] + (1.0 - self.beta1) * g;
                let v = self.beta2 * p.v.data()[k] + (1.0 - self.beta2) * g * g;
                p.m.data_mut()[k] = m;
                p.v.data_mut()[k] = v;
                let update = self.lr * (m / c1) / ((v / c2).sqrt() + self.eps);
                p.value.data_mut()[k] -= update;
            }
        }
        store.zero_grads();
    }
}

/// One Adam update with explicit hyperparameters.
pub fn adam_step(store: &mut ParamStore, lr: f64, beta1: f64, beta2: f64, eps: f64) {
    Adam { lr, beta1, beta2, eps }.step(store);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor2;

    #[test]
    fn first_step_closed_form() {
        let mut store = ParamStore::new();
        let id = store.add("p", Tensor2::scalar(1.0)).unwrap();
        store.get_mut(id).grad = Tensor2::scalar(2.0);
        adam_step(&mut store, 1e-3, 0.9, 0.999, 1e-8);
        // m̂ = g, v̂ = g², delta = -lr·g/(|g| + eps)
        let expected = 1.0 - 1e-3 * 2.0 / (2.0 + 1e-8);
        assert!((store.value(id).item() - expected).abs() < 1e-15);
        assert!((store.value(id).item() - (1.0 - 0.001)).abs() < 1e-9);
        assert_eq!(store.get(id).grad.item(), 0.0);
    }

    #[test]
    fn zero_gradient_zero_delta() {
        let mut store = ParamStore::new();
        let id = store.add("p", Tensor2::from_vec(1, 3, vec![0.5, -2.0, 3.0])).unwrap();
        Adam::default().step(&mut store);
        assert_eq!(store.value(id).data(), &[0.5, -2.0, 3.0]);
    }

    #[test]
    fn identical_grads_identical_deltas() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor2::scalar(0.25)).unwrap();
        let b = store.add("b", Tensor2::scalar(0.25)).unwrap();
        for _ in 0..3 {
            store.get_mut(a).grad = Tensor2::scalar(-0.7);
            store.get_mut(b).grad = Tensor2::scalar(-0.7);
            Adam::default().step(&mut store);
        }
        assert_eq!(store.value(a), store.value(b));
    }

    #[test]
    fn zero_lr_leaves_params_bit_identical() {
        let mut store = ParamStore::new();
        let id = store.add("p", Tensor2::from_vec(1, 2, vec![0.1, 1e-300])).unwrap();
        store.get_mut(id).grad = Tensor2::from_vec(1, 2, vec![3.0, -1e10]);
        Adam::with_lr(0.0).step(&mut store);
        assert_eq!(store.value(id).data(), &[0.1, 1e-300]);
    }
}
