use crate::params::{Gradients, ParamRegistry};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
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

/// Adam with bias-corrected first and second moments.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Self {
            cfg,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn config(&self) -> AdamConfig {
        self.cfg
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, registry: &mut ParamRegistry, grads: &Gradients) {
        assert_eq!(registry.len(), grads.len(), "gradients do not match the registry");
        if self.first.len() != registry.len() {
            self.first = (0..registry.len())
                .map(|i| {
                    let [r, c] = registry.value_at(i).shape();
                    Tensor::zeros(r, c)
                })
                .collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for i in 0..registry.len() {
            let g = grads.get(i).data();
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            let p = registry.value_at_mut(i).data_mut();
            for k in 0..p.len() {
                m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
                v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                p[k] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;

    fn scalar_registry(v: f64) -> ParamRegistry {
        let mut reg = ParamRegistry::new();
        reg.insert("x", Tensor::scalar(v)).unwrap();
        reg
    }

    fn constant_grad(reg: &ParamRegistry, g: f64) -> Gradients {
        let mut tape = Tape::new();
        let bound = reg.bind(&mut tape);
        let x = bound.var("x").unwrap();
        let y = tape.scale(x, g);
        tape.backward(y).unwrap();
        bound.gradients(&tape)
    }

    #[test]
    fn zero_gradients_leave_params_unchanged() {
        let mut reg = scalar_registry(1.5);
        let mut adam = Adam::new(AdamConfig::default());
        let grads = Gradients::zeros_like(&reg);
        for _ in 0..5 {
            adam.step(&mut reg, &grads);
        }
        assert_eq!(reg.get("x").unwrap().item().unwrap(), 1.5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = g, v̂ = g², so the step is lr·g/(|g|+eps).
        let mut reg = scalar_registry(0.0);
        let mut adam = Adam::new(AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        });
        let grads = constant_grad(&reg, 1.0);
        adam.step(&mut reg, &grads);
        let moved = reg.get("x").unwrap().item().unwrap();
        assert!((moved + 0.1 / (1.0 + 1e-8)).abs() < 1e-15, "{moved}");
    }

    #[test]
    fn constant_gradient_moves_monotonically_against_sign() {
        for g in [2.5, -0.7] {
            let mut reg = scalar_registry(0.0);
            let mut adam = Adam::new(AdamConfig::default());
            let mut prev = 0.0;
            for _ in 0..50 {
                let grads = constant_grad(&reg, g);
                adam.step(&mut reg, &grads);
                let now = reg.get("x").unwrap().item().unwrap();
                assert!((now - prev) * g < 0.0);
                prev = now;
            }
        }
    }
}
