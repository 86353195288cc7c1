use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tensor};

/// Rectified Adam. While the variance of the adaptive step size is not yet
/// tractable (`ρ_t ≤ 5`) it takes a bias-corrected momentum step.
#[derive(Debug, Clone, PartialEq)]
pub struct RAdam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl RAdam {
    pub fn new(store: &ParamStore) -> Self {
        let zeros = || store.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Tensor], &[Tensor]) {
        (&self.m, &self.v)
    }

    /// `ρ∞ = 2/(1−β2) − 1`.
    pub fn rho_inf(&self) -> f64 {
        2.0 / (1.0 - self.beta2) - 1.0
    }

    /// `ρ_t = ρ∞ − 2tβ2^t/(1−β2^t)`.
    pub fn rho(&self, t: u64) -> f64 {
        let b2t = self.beta2.powi(t as i32);
        self.rho_inf() - 2.0 * t as f64 * b2t / (1.0 - b2t)
    }

    /// Variance rectification factor, `None` while `ρ_t ≤ 5`.
    pub fn rectification(&self, t: u64) -> Option<f64> {
        let rho = self.rho(t);
        let rho_inf = self.rho_inf();
        (rho > 5.0).then(|| ((rho - 4.0) * (rho - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho)).sqrt())
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor], lr: f64) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::Contract(format!(
                "{} gradients for {} parameters",
                grads.len(),
                store.len()
            )));
        }
        for (id, g) in store.ids().zip(grads) {
            if g.shape() != store.get(id).shape() {
                return Err(Error::Contract(format!("gradient shape mismatch for {}", store.name(id))));
            }
            if !g.all_finite() {
                return Err(Error::numeric(format!("non-finite gradient for parameter {}", store.name(id)), None));
            }
        }
        if !(lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        self.step += 1;
        let t = self.step;
        let bias1 = 1.0 - self.beta1.powi(t as i32);
        let bias2 = 1.0 - self.beta2.powi(t as i32);
        let rect = self.rectification(t);
        for ((id, g), (m, v)) in store.ids().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let (m, v) = (m.data_mut(), v.data_mut());
            let w = store.get_mut(id).data_mut();
            for (k, &gk) in g.data().iter().enumerate() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                let m_hat = m[k] / bias1;
                w[k] -= match rect {
                    Some(r) => {
                        let v_hat = (v[k] / bias2).sqrt();
                        lr * r * m_hat / (v_hat + self.eps)
                    }
                    None => lr * m_hat,
                };
            }
        }
        Ok(())
    }
}

/// `lr_min + ½(lr_max − lr_min)(1 + cos(π·step/total))`.
pub fn cosine_lr(step: usize, total_steps: usize, lr_max: f64, lr_min: f64) -> f64 {
    if total_steps == 0 {
        return lr_max;
    }
    let frac = step.min(total_steps) as f64 / total_steps as f64;
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI * frac).cos())
}
