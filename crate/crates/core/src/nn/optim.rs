use super::Module;

/// Adam with bias correction. Moment buffers are keyed by the module's
/// parameter visiting order, so one optimizer serves one module.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    pub fn step<M: Module + ?Sized>(&mut self, module: &mut M) {
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let (lr, eps) = (self.lr, self.eps);
        let (ms, vs) = (&mut self.m, &mut self.v);
        let mut idx = 0;
        module.visit_params_mut(&mut |p| {
            if p.trainable {
                if ms.len() <= idx {
                    ms.push(vec![0.0; p.len()]);
                    vs.push(vec![0.0; p.len()]);
                }
                let (m, v) = (&mut ms[idx], &mut vs[idx]);
                for i in 0..p.len() {
                    let g = p.grad[i];
                    m[i] = b1 * m[i] + (1.0 - b1) * g;
                    v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                    p.value[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                }
                idx += 1;
            }
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        });
    }
}
