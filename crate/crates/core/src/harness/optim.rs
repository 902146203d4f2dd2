use crate::backbone::ParamStore;
use crate::diffcore::Real;
use crate::harness::OptimConfig;

/// Adaptive-moment optimizer with decoupled weight decay. Moment buffers
/// are indexed like the store's parameter list.
#[derive(Clone, Debug)]
pub struct AdamW {
    lr: f64,
    betas: (f64, f64),
    eps: f64,
    weight_decay: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(cfg: &OptimConfig) -> Self {
        AdamW::with_lr(cfg, cfg.lr)
    }

    pub fn with_lr(cfg: &OptimConfig, lr: f64) -> Self {
        AdamW {
            lr,
            betas: cfg.betas,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from the accumulated gradients. Parameters
    /// without a gradient are left untouched, decay included.
    pub fn step<T: Real>(&mut self, store: &mut ParamStore<T>) {
        if self.m.is_empty() {
            self.m = store.iter().map(|(_, p)| vec![0.0f64; p.tensor.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let (b1, b2) = self.betas;
        let bc1 = 1.0 - b1.powi(self.step as i32);
        let bc2 = 1.0 - b2.powi(self.step as i32);
        for (i, p) in store.iter_mut().enumerate() {
            let Some(grad) = p.tensor.grad.take() else { continue };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, w) in p.tensor.data_mut().iter_mut().enumerate() {
                let gj = grad[j].to_f64_lossy();
                let mj = b1 * m[j] + (1.0 - b1) * gj;
                let vj = b2 * v[j] + (1.0 - b2) * gj * gj;
                m[j] = mj;
                v[j] = vj;
                let wf = w.to_f64_lossy();
                let delta = self.lr * ((mj / bc1) / ((vj / bc2).sqrt() + self.eps) + self.weight_decay * wf);
                // a zero delta must leave the bits alone (signed zeros included)
                if delta != 0.0 {
                    *w = T::from_f64_lossy(wf - delta);
                }
            }
            p.tensor.grad = Some(grad);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::ParamGroup;
    use crate::diffcore::Tensor;

    fn store(values: Vec<f32>) -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.insert("w", ParamGroup::Head, Tensor::new(vec![values.len()], values).unwrap()).unwrap();
        s
    }

    #[test]
    fn zero_step_size_is_a_null_update() {
        let mut s = store(vec![0.5, -0.0, 3.25]);
        let before: Vec<u32> = s.iter().next().unwrap().1.tensor.data().iter().map(|v| v.to_bits()).collect();
        s.iter_mut().next().unwrap().tensor.accumulate_grad(&[1.0, -2.0, 0.5]);
        let cfg = OptimConfig { lr: 0.0, ..OptimConfig::default() };
        AdamW::new(&cfg).step(&mut s);
        let after: Vec<u32> = s.iter().next().unwrap().1.tensor.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn first_step_moves_by_lr_against_the_gradient_sign() {
        let mut s = store(vec![1.0, 1.0]);
        s.iter_mut().next().unwrap().tensor.accumulate_grad(&[4.0, -0.1]);
        let cfg = OptimConfig { weight_decay: 0.0, ..OptimConfig::default() };
        AdamW::new(&cfg).step(&mut s);
        let d = s.iter().next().unwrap().1.tensor.data().to_vec();
        assert!((d[0] - (1.0 - 1e-3)).abs() < 1e-6);
        assert!((d[1] - (1.0 + 1e-3)).abs() < 1e-6);
    }

    #[test]
    fn decay_shrinks_weights_without_gradient_signal() {
        let mut s = store(vec![2.0]);
        s.iter_mut().next().unwrap().tensor.accumulate_grad(&[0.0]);
        let cfg = OptimConfig { lr: 0.1, weight_decay: 0.5, ..OptimConfig::default() };
        AdamW::new(&cfg).step(&mut s);
        assert!((s.iter().next().unwrap().1.tensor.data()[0] - 1.9).abs() < 1e-6);
    }
}
