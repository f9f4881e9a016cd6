use crate::numeric::{Array, Gradients, ParamStore};

/// Bias-corrected Adam without decoupled weight decay.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    m: Vec<Array>,
    v: Vec<Array>,
    t: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Array> = params.iter().map(|(_, _, a)| Array::zeros(a.shape())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }

    /// One update of every parameter that has a gradient.
    pub fn step(&self, params: &mut ParamStore, grads: &Gradients, state: &mut AdamState) {
        if params.is_empty() {
            return;
        }
        if state.m.len() != params.len() {
            *state = AdamState::new(params);
        }
        state.t += 1;
        let t = state.t as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        for (id, g) in grads.iter() {
            let i = id.index();
            let m = state.m[i].data_mut();
            let v = state.v[i].data_mut();
            let p = params.get_mut(id).data_mut();
            for (((p, m), v), &g) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.data()) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}
