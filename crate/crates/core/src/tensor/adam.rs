use super::{ParamStore, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug)]
pub struct Adam<F> {
    pub config: AdamConfig,
    m: Vec<Tensor<F>>,
    v: Vec<Tensor<F>>,
    step: u64,
}

impl<F: Real> Adam<F> {
    pub fn new(config: AdamConfig, store: &ParamStore<F>) -> Self {
        let zeros: Vec<_> = store.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
        Self {
            config,
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients currently held in `store`.
    pub fn step(&mut self, store: &mut ParamStore<F>) {
        assert_eq!(self.m.len(), store.len(), "optimizer built for another store");
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (F::lit(c.beta1), F::lit(c.beta2));
        let (lr, eps) = (F::lit(c.lr), F::lit(c.eps));
        let t = i32::try_from(self.step).unwrap_or(i32::MAX);
        let bc1 = F::one() - b1.powi(t);
        let bc2 = F::one() - b2.powi(t);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let g = store.grad(id).data().to_vec();
            let m = self.m[id.index()].data_mut();
            let v = self.v[id.index()].data_mut();
            let p = store.value_mut(id).data_mut();
            for i in 0..g.len() {
                m[i] = b1 * m[i] + (F::one() - b1) * g[i];
                v[i] = b2 * v[i] + (F::one() - b2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] = p[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("p", Tensor::scalar(v)).unwrap();
        s
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut s = scalar_store(1.5);
        let mut adam = Adam::new(AdamConfig::default(), &s);
        for _ in 0..3 {
            adam.step(&mut s);
        }
        assert_eq!(s.value(s.id("p").unwrap()).item(), 1.5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut s = scalar_store(0.0);
        let id = s.id("p").unwrap();
        s.grad_mut(id).data_mut()[0] = 1.0;
        let mut adam = Adam::new(
            AdamConfig {
                lr: 0.1,
                ..AdamConfig::default()
            },
            &s,
        );
        adam.step(&mut s);
        assert!((s.value(id).item() + 0.1).abs() < 1e-7);
    }

    #[test]
    fn identical_copies_step_identically() {
        let mut a = scalar_store(0.3);
        let id = a.id("p").unwrap();
        a.grad_mut(id).data_mut()[0] = -0.7;
        let mut b = a.clone();
        let mut oa = Adam::new(AdamConfig::default(), &a);
        let mut ob = oa.clone();
        oa.step(&mut a);
        ob.step(&mut b);
        assert_eq!(a.value(id).item().to_bits(), b.value(id).item().to_bits());
    }
}
