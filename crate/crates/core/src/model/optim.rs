use std::collections::BTreeMap;

use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;

/// Adam with decoupled weight decay. Frozen tensors are never touched.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: BTreeMap<ParamId, (Tensor, Tensor)>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &[(ParamId, &Tensor)]) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for &(id, g) in grads {
            if params.get(id).frozen() {
                continue;
            }
            let (m, v) = self
                .moments
                .entry(id)
                .or_insert_with(|| (Tensor::zeros(g.rows, g.cols), Tensor::zeros(g.rows, g.cols)));
            let theta = params.value_mut(id);
            for i in 0..g.data.len() {
                let gi = g.data[i];
                m.data[i] = self.beta1 * m.data[i] + (1.0 - self.beta1) * gi;
                v.data[i] = self.beta2 * v.data[i] + (1.0 - self.beta2) * gi * gi;
                let mhat = m.data[i] / bc1;
                let vhat = v.data[i] / bc2;
                theta.data[i] -= self.lr * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * theta.data[i]);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::Family;

    #[test]
    fn first_step_moves_by_lr_and_skips_frozen() {
        let mut s = ParamStore::new();
        let t = s.add_const("t", Family::Decoder, 1, 2, 1.0);
        let f = s.add_const("f", Family::EncoderBase, 1, 2, 1.0);
        let g = Tensor::row_vector(vec![0.5, -2.0]);
        let mut opt = AdamW::new(0.1, 0.0);
        opt.step(&mut s, &[(t, &g), (f, &g)]);
        let v = s.value(t);
        assert!((v.data[0] - 0.9).abs() < 1e-6);
        assert!((v.data[1] - 1.1).abs() < 1e-6);
        assert_eq!(s.value(f).data, vec![1.0, 1.0]);
    }

    #[test]
    fn decay_is_decoupled() {
        let mut s = ParamStore::new();
        let t = s.add_const("t", Family::Decoder, 1, 1, 2.0);
        let mut opt = AdamW::new(0.5, 0.1);
        opt.step(&mut s, &[(t, &Tensor::scalar(0.0))]);
        assert!((s.value(t).item() - (2.0 - 0.5 * 0.1 * 2.0)).abs() < 1e-12);
    }
}
