//! Adam with bias correction, operating on a [`ParamStore`] in place.

use super::model::ParamStore;
use super::tensor::{Element, Tensor};

/// Standard Adam. Moment buffers are allocated lazily per parameter the
/// first time a gradient arrives, so parameters outside the graph cost
/// nothing.
pub struct Adam<T: Element> {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step_count: u64,
    first: Vec<Option<Tensor<T>>>,
    second: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Adam<T> {
    pub fn new(store: &ParamStore<T>, learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
            first: (0..store.len()).map(|_| None).collect(),
            second: (0..store.len()).map(|_| None).collect(),
        }
    }

    /// Applies one update from `(param index, gradient)` pairs, as produced
    /// by `Tape::param_grads`.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[(usize, Tensor<T>)]) {
        self.step_count += 1;
        let t = self.step_count as i32;
        let b1 = T::from_f64(self.beta1);
        let b2 = T::from_f64(self.beta2);
        let one_minus_b1 = T::from_f64(1.0 - self.beta1);
        let one_minus_b2 = T::from_f64(1.0 - self.beta2);
        let corr1 = T::from_f64(1.0 / (1.0 - self.beta1.powi(t)));
        let corr2 = T::from_f64(1.0 / (1.0 - self.beta2.powi(t)));
        let lr = T::from_f64(self.learning_rate);
        let eps = T::from_f64(self.epsilon);

        for (index, grad) in grads {
            let param = store.tensor_mut(*index);
            debug_assert_eq!(param.shape(), grad.shape(), "gradient shape mismatch");
            let m = self.first[*index].get_or_insert_with(|| Tensor::zeros(grad.shape()));
            let v = self.second[*index].get_or_insert_with(|| Tensor::zeros(grad.shape()));
            for ((p, &g), (m, v)) in param
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut()))
            {
                *m = b1 * *m + one_minus_b1 * g;
                *v = b2 * *v + one_minus_b2 * g * g;
                let m_hat = *m * corr1;
                let v_hat = *v * corr2;
                *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
