//! First-order adaptive-moment optimizer.

#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-15,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    /// Advances the moments with `grads` and writes the increment to apply
    /// (already negated and scaled) into `delta`.
    pub fn delta(&mut self, grads: &[f64], delta: &mut [f64]) {
        assert_eq!(grads.len(), self.m.len());
        assert_eq!(delta.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..grads.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            delta[i] = -self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        let mut delta = vec![0.0; params.len()];
        self.delta(grads, &mut delta);
        for (p, d) in params.iter_mut().zip(delta) {
            *p += d;
        }
    }
}
