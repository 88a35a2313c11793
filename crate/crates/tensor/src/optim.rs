use crate::{ParamId, ParamStore, Tensor};

/// Adam with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamW {
    pub fn new(params: &ParamStore, weight_decay: f64) -> Self {
        let zeros = |p: &ParamStore| p.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect::<Vec<_>>();
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, step: 0, first: zeros(params), second: zeros(params) }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. Parameters absent from `grads` still decay.
    /// Weight decay is applied to tensors of rank >= 2 only (not to biases,
    /// norms or embeddings vectors).
    pub fn step(&mut self, params: &mut ParamStore, grads: &[(ParamId, Tensor)], lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let mut by_id: Vec<Option<&Tensor>> = vec![None; params.len()];
        for (id, g) in grads {
            by_id[id.0] = Some(g);
        }
        for id in params.ids().collect::<Vec<_>>() {
            let p = params.get_mut(id);
            if p.ndim() >= 2 && self.weight_decay > 0.0 {
                let f = 1.0 - lr * self.weight_decay;
                p.data_mut().iter_mut().for_each(|v| *v *= f);
            }
            let Some(g) = by_id[id.0] else { continue };
            let m = self.first[id.0].data_mut();
            let v = self.second[id.0].data_mut();
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mh = *mi / bc1;
                let vh = *vi / bc2;
                *w -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

/// Scales gradients in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [(ParamId, Tensor)], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|(_, g)| g.sq_norm()).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for (_, g) in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}
