//! Training objective: reconstruction MSE plus a β-weighted Gaussian KL
//! between the posterior and prior latent chains.

mod evidence;

pub use evidence::{elbo_vs_evidence_check, LinearGaussianSsm, MarkovConditional};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generative::GenerativeTrace;
use crate::inference::PosteriorTrace;
use crate::numerics::Var;

/// Which closed form is used for the per-step KL term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum KlDirection {
    /// `log σp/σq − 1/2 + (σp² + (μq−μp)²)/(2σq²)`, which is `KL(p‖q)`.
    #[default]
    Paper,
    /// `KL(q‖p) = log σp/σq − 1/2 + (σq² + (μq−μp)²)/(2σp²)`.
    Standard,
}

impl std::str::FromStr for KlDirection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Self::Paper),
            "standard" => Ok(Self::Standard),
            other => Err(Error::Config(format!(
                "unknown KL direction {other:?} (expected paper or standard)"
            ))),
        }
    }
}

/// KL term for one pair of univariate Gaussians given by standard deviations.
pub fn kl_scalar(mu_q: f64, sigma_q: f64, mu_p: f64, sigma_p: f64, direction: KlDirection) -> Result<f64> {
    if !(sigma_q > 0.0 && sigma_p > 0.0) {
        return Err(Error::numeric(
            format!("Gaussian KL with non-positive scale (σq = {sigma_q}, σp = {sigma_p})"),
            None,
        ));
    }
    let d2 = (mu_q - mu_p).powi(2);
    let log_ratio = (sigma_p / sigma_q).ln();
    Ok(match direction {
        KlDirection::Paper => log_ratio - 0.5 + (sigma_p * sigma_p + d2) / (2.0 * sigma_q * sigma_q),
        KlDirection::Standard => log_ratio - 0.5 + (sigma_q * sigma_q + d2) / (2.0 * sigma_p * sigma_p),
    })
}

/// KL between diagonal Gaussians, averaged over dimensions.
pub fn gaussian_kl(mu_q: &[f64], sigma_q: &[f64], mu_p: &[f64], sigma_p: &[f64], direction: KlDirection) -> Result<f64> {
    let d = mu_q.len();
    if d == 0 || sigma_q.len() != d || mu_p.len() != d || sigma_p.len() != d {
        return Err(Error::Contract("Gaussian KL arguments must share a positive length".into()));
    }
    let mut total = 0.0;
    for i in 0..d {
        total += kl_scalar(mu_q[i], sigma_q[i], mu_p[i], sigma_p[i], direction)?;
    }
    Ok(total / d as f64)
}

/// Elementwise KL on the tape from means and log-variances.
pub fn gaussian_kl_var<'t>(
    q: (&Var<'t>, &Var<'t>),
    p: (&Var<'t>, &Var<'t>),
    direction: KlDirection,
) -> Result<Var<'t>> {
    let (mu_q, lv_q) = q;
    let (mu_p, lv_p) = p;
    let d2 = mu_q.sub(mu_p)?.square();
    let half_log_ratio = lv_p.sub(lv_q)?.scale(0.5);
    // (numerator variance + Δμ²) / (2 · denominator variance)
    let (num_lv, den_lv) = match direction {
        KlDirection::Paper => (lv_p, lv_q),
        KlDirection::Standard => (lv_q, lv_p),
    };
    // The variance ratio is formed as exp(difference) so identical inputs give
    // exactly zero.
    let ratio = num_lv.sub(den_lv)?.exp().scale(0.5);
    let shift = d2.mul(&den_lv.neg().exp())?.scale(0.5);
    Ok(half_log_ratio.add(&ratio)?.add(&shift)?.add_scalar(-0.5))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElboReport {
    /// MSE between the decoded sequence and the target over `x_{1:L+T}`.
    pub recon: f64,
    /// Batch mean of the KL summed over latent dimensions, per step.
    pub kl_per_step: Vec<f64>,
    pub kl_total: f64,
    pub beta: f64,
    /// `recon + (β/d_latent)·kl_total`.
    pub total: f64,
}

/// Builds the loss on the tape and reports its parts.
pub fn elbo_loss<'t>(
    gen: &GenerativeTrace<'t>,
    post: &PosteriorTrace<'t>,
    decoded: &Var<'t>,
    target: &Var<'t>,
    beta: f64,
    direction: KlDirection,
) -> Result<(Var<'t>, ElboReport)> {
    if gen.latents.len() != post.latents.len() || gen.latents.is_empty() {
        return Err(Error::Contract(format!(
            "trace lengths differ or are empty: prior {} vs posterior {}",
            gen.latents.len(),
            post.latents.len()
        )));
    }
    if decoded.shape() != target.shape() {
        return Err(Error::Contract(format!(
            "decoded shape {:?} differs from target {:?}",
            decoded.shape(),
            target.shape()
        )));
    }
    let d_latent = *gen.latents[0].mean.shape().last().unwrap_or(&1);
    let recon = decoded.sub(target)?.square().mean();

    let mut kl_per_step = Vec::with_capacity(gen.latents.len());
    let mut kl_total: Option<Var<'t>> = None;
    for (p, q) in gen.latents.iter().zip(&post.latents) {
        let kl = gaussian_kl_var((&q.mean, &q.logvar), (&p.mean, &p.logvar), direction)?
            .sum_last_axis()
            .mean();
        kl_per_step.push(kl.item());
        kl_total = Some(match kl_total {
            None => kl,
            Some(acc) => acc.add(&kl)?,
        });
    }
    let kl_total = kl_total.expect("at least one step");
    let total = recon.add(&kl_total.scale(beta / d_latent as f64))?;
    let report = ElboReport {
        recon: recon.item(),
        kl_total: kl_total.item(),
        kl_per_step,
        beta,
        total: total.item(),
    };
    Ok((total, report))
}
