use super::{multiversion, Param};

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    step: u32,
}

impl Adam {
    pub fn new(lr: f32, beta1: f32, beta2: f32) -> Self {
        Self { lr, beta1, beta2, eps: 1e-8, step: 0 }
    }

    pub fn steps(&self) -> u32 {
        self.step
    }

    /// Applies one update from the accumulated gradients and clears them.
    pub fn step(&mut self, params: Vec<&mut Param>) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let (step_size, inv_c2) = (self.lr / c1, 1.0 / c2);
        for p in params {
            let Param { value, grad, m, v } = p;
            update(value, grad, m, v, [b1, b2, eps, step_size, inv_c2]);
        }
    }
}

multiversion! {
    fn update(value: &mut [f32], grad: &mut [f32], m: &mut [f32], v: &mut [f32], k: [f32; 5]) {
        let [b1, b2, eps, step_size, inv_c2] = k;
        for (((w, g), m), v) in value.iter_mut().zip(grad.iter_mut()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + (1.0 - b1) * *g;
            *v = b2 * *v + (1.0 - b2) * *g * *g;
            *w -= step_size * *m / ((*v * inv_c2).sqrt() + eps);
            *g = 0.0;
        }
    }
}
