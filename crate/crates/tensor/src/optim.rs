use crate::{Grads, ParamId, ParamStore, Scalar, Tensor};

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    steps: u64,
    moments: Vec<Option<(Tensor<T>, Tensor<T>)>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            weight_decay,
            steps: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One update of every parameter in `ids` that has a gradient.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Grads<T>, ids: &[ParamId], lr: f64) {
        self.steps += 1;
        let t = self.steps as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let (one, eps) = (T::one(), T::lit(self.eps));
        let step_size = T::lit(lr / bc1);
        let inv_bc2 = T::lit(1.0 / bc2);
        let decay = T::lit(1.0 - lr * self.weight_decay);
        for &id in ids {
            let Some(g) = grads.param(id) else { continue };
            if self.moments.len() <= id.index() {
                self.moments.resize(id.index() + 1, None);
            }
            let (m, v) = self.moments[id.index()]
                .get_or_insert_with(|| (Tensor::zeros(g.rows(), g.cols()), Tensor::zeros(g.rows(), g.cols())));
            let p = store.get_mut(id);
            for (((pe, &ge), me), ve) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *me = b1 * *me + (one - b1) * ge;
                *ve = b2 * *ve + (one - b2) * ge * ge;
                let denom = (*ve * inv_bc2).sqrt() + eps;
                *pe = *pe * decay - step_size * *me / denom;
            }
        }
    }

    /// First and second moment estimates for a parameter, if it has been updated.
    pub fn moments(&self, id: ParamId) -> Option<&(Tensor<T>, Tensor<T>)> {
        self.moments.get(id.index()).and_then(|m| m.as_ref())
    }

    /// Restores optimizer state captured from [`AdamW::moments`] and [`AdamW::steps`].
    pub fn restore(&mut self, steps: u64, moments: Vec<(ParamId, Tensor<T>, Tensor<T>)>) {
        self.steps = steps;
        self.moments.clear();
        for (id, m, v) in moments {
            if self.moments.len() <= id.index() {
                self.moments.resize(id.index() + 1, None);
            }
            self.moments[id.index()] = Some((m, v));
        }
    }
}
