use crate::blocks::ParamStore;
use crate::tensor::Gradients;
use crate::tensor::Var;

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
    step: i32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(store: &ParamStore<f32>, lr: f32, beta1: f32, beta2: f32, epsilon: f32) -> Self {
        let zeros = || store.params().iter().map(|p| vec![0f32; p.value.numel()]).collect();
        Adam {
            lr,
            beta1,
            beta2,
            epsilon,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Applies one update; `vars[i]` is the tape leaf of parameter `i`.
    pub fn update(&mut self, store: &mut ParamStore<f32>, vars: &[Var], grads: &Gradients<f32>) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.epsilon);
        for (i, p) in store.params_mut().enumerate() {
            let Some(g) = grads.get(vars[i]) else { continue };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((w, &g), m), v) in p.value.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::Builder;
    use crate::rng::Rng;
    use crate::tensor::{Tape, Tensor};

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut store = ParamStore::<f32>::default();
        Builder::new(&mut store, Rng::new(0)).param("w", Tensor::new([2], vec![1.0, -1.0]).unwrap());
        let mut tape = Tape::new();
        let vars = crate::blocks::bind(&mut tape, &store, true);
        let sq = tape.mul(vars[0], vars[0]).unwrap();
        let loss = tape.sum(sq);
        let grads = tape.backward(loss).unwrap();
        let mut adam = Adam::new(&store, 0.1, 0.9, 0.999, 1e-8);
        adam.update(&mut store, &vars, &grads);
        let w = store.params()[0].value.data();
        assert!((w[0] - 0.9).abs() < 1e-6 && (w[1] + 0.9).abs() < 1e-6, "{:?}", w);
    }
}
