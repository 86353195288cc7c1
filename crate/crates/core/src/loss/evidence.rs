//! Bound check on a scalar linear-Gaussian state space model
//!
//! ```text
//! z_1 ~ N(m0, p0),  z_t = a·z_{t−1} + N(0, q),  x_t = c·z_t + N(0, r)
//! ```
//!
//! The exact log evidence comes from a Kalman filter. The exact posterior
//! factorizes as a Markov chain `∏ p(z_t | z_{t−1}, x_{1:T})`, whose
//! conditionals come from a backward information filter. A Monte Carlo ELBO
//! with that posterior equals the evidence; any other posterior falls short.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{kl_scalar, KlDirection};
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussianSsm {
    pub a: f64,
    pub c: f64,
    pub q: f64,
    pub r: f64,
    pub m0: f64,
    pub p0: f64,
    pub observations: Vec<f64>,
}

/// `z_t | z_{t−1} ~ N(coef·z_{t−1} + offset, var)`; for `t = 1` the
/// coefficient is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkovConditional {
    pub coef: f64,
    pub offset: f64,
    pub var: f64,
}

impl MarkovConditional {
    pub fn mean(&self, z_prev: f64) -> f64 {
        self.coef * z_prev + self.offset
    }
}

fn log_normal(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (LN_2PI + var.ln() + (x - mean).powi(2) / var)
}

impl LinearGaussianSsm {
    pub fn validate(&self) -> Result<()> {
        let n = self.observations.len();
        if n == 0 || n > 10 {
            return Err(Error::Config(format!("toy model length must be 1..=10, got {n}")));
        }
        if !(self.q > 0.0 && self.r > 0.0 && self.p0 > 0.0) {
            return Err(Error::Config("toy model noise variances must be positive".into()));
        }
        let params = [self.a, self.c, self.m0];
        if !params.iter().chain(&self.observations).all(|v| v.is_finite()) {
            return Err(Error::Config("toy model parameters must be finite".into()));
        }
        Ok(())
    }

    /// `log p(x_{1:T})` by forward Kalman filtering.
    pub fn log_evidence(&self) -> Result<f64> {
        self.validate()?;
        let (mut m, mut p) = (self.m0, self.p0);
        let mut ll = 0.0;
        for (t, &x) in self.observations.iter().enumerate() {
            if t > 0 {
                m *= self.a;
                p = self.a * self.a * p + self.q;
            }
            let s = self.c * self.c * p + self.r;
            ll += log_normal(x, self.c * m, s);
            let k = p * self.c / s;
            m += k * (x - self.c * m);
            p *= 1.0 - k * self.c;
        }
        Ok(ll)
    }

    /// Exact posterior conditionals `p(z_t | z_{t−1}, x_{1:T})`.
    pub fn posterior_conditionals(&self) -> Result<Vec<MarkovConditional>> {
        self.validate()?;
        let n = self.observations.len();
        let (a, c, q, r) = (self.a, self.c, self.q, self.r);
        // Information form of p(x_{t:T} | z_t) ∝ exp(−J z²/2 + h z).
        let mut j_info = vec![0.0; n];
        let mut h_info = vec![0.0; n];
        j_info[n - 1] = c * c / r;
        h_info[n - 1] = c * self.observations[n - 1] / r;
        for t in (0..n - 1).rev() {
            let prec = 1.0 / q + j_info[t + 1];
            let j_tilde = a * a / q - a * a / (q * q * prec);
            let h_tilde = a * h_info[t + 1] / (q * prec);
            j_info[t] = j_tilde + c * c / r;
            h_info[t] = h_tilde + c * self.observations[t] / r;
        }
        Ok((0..n)
            .map(|t| {
                if t == 0 {
                    let prec = 1.0 / self.p0 + j_info[0];
                    MarkovConditional {
                        coef: 0.0,
                        offset: (self.m0 / self.p0 + h_info[0]) / prec,
                        var: 1.0 / prec,
                    }
                } else {
                    let prec = 1.0 / q + j_info[t];
                    MarkovConditional {
                        coef: a / (q * prec),
                        offset: h_info[t] / prec,
                        var: 1.0 / prec,
                    }
                }
            })
            .collect())
    }

    /// Prior transition `p(z_t | z_{t−1})` in the same form.
    pub fn prior_conditional(&self, t: usize) -> MarkovConditional {
        if t == 0 {
            MarkovConditional {
                coef: 0.0,
                offset: self.m0,
                var: self.p0,
            }
        } else {
            MarkovConditional {
                coef: self.a,
                offset: 0.0,
                var: self.q,
            }
        }
    }

    /// Monte Carlo ELBO `E_q[Σ_t log p(x_t|z_t) − KL(q_t ‖ p_t)]` for a
    /// Markov posterior, with the per-step KL in closed form.
    pub fn elbo(&self, posterior: &[MarkovConditional], n_samples: usize, seed: u64) -> Result<f64> {
        self.validate()?;
        if posterior.len() != self.observations.len() || n_samples == 0 {
            return Err(Error::Contract("posterior length or sample count invalid".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut acc = 0.0;
        for _ in 0..n_samples {
            let mut z_prev = 0.0;
            let mut path_value = 0.0;
            for (t, (&x, qt)) in self.observations.iter().zip(posterior).enumerate() {
                let pt = self.prior_conditional(t);
                let (mq, mp) = (qt.mean(z_prev), pt.mean(z_prev));
                path_value -= kl_scalar(mq, qt.var.sqrt(), mp, pt.var.sqrt(), KlDirection::Standard)?;
                let eps: f64 = StandardNormal.sample(&mut rng);
                let z = mq + qt.var.sqrt() * eps;
                path_value += log_normal(x, self.c * z, self.r);
                z_prev = z;
            }
            acc += path_value;
        }
        Ok(acc / n_samples as f64)
    }
}

/// ELBO under the exact posterior with every conditional mean shifted by
/// `mean_shift`, together with the exact log evidence.
pub fn elbo_vs_evidence_check(ssm: &LinearGaussianSsm, mean_shift: f64, n_samples: usize, seed: u64) -> Result<(f64, f64)> {
    let exact = ssm.log_evidence()?;
    let posterior: Vec<MarkovConditional> = ssm
        .posterior_conditionals()?
        .into_iter()
        .map(|m| MarkovConditional {
            offset: m.offset + mean_shift,
            ..m
        })
        .collect();
    Ok((ssm.elbo(&posterior, n_samples, seed)?, exact))
}
