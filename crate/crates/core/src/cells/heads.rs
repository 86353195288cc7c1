use rand::Rng;

use crate::config::Activation;
use crate::error::{Error, Result};
use crate::numerics::{Bound, ParamId, ParamStore, Tape, Tensor, Var};

pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 10.0;

/// Gaussian parameters of `z_t` and the reparameterized draw.
#[derive(Debug, Clone, Copy)]
pub struct LatentState<'t> {
    pub mean: Var<'t>,
    pub logvar: Var<'t>,
    pub sample: Var<'t>,
}

/// Affine map from the conditioning vector to `(mean, logvar)`.
#[derive(Debug, Clone)]
pub struct LatentHead {
    pub d_latent: usize,
    pub input_dim: usize,
    pub w: ParamId,
    pub b: ParamId,
}

impl LatentHead {
    pub fn new(store: &mut ParamStore, prefix: &str, input_dim: usize, d_latent: usize, rng: &mut impl Rng) -> Self {
        let w = store.add_uniform(format!("{prefix}.w"), input_dim, 2 * d_latent, rng);
        let b = store.add(format!("{prefix}.b"), Tensor::zeros(&[2 * d_latent]));
        Self {
            d_latent,
            input_dim,
            w,
            b,
        }
    }

    /// `(mean, logvar)` from the concatenated conditioning inputs.
    pub fn params<'t>(&self, bound: &Bound<'t>, inputs: &[Var<'t>]) -> Result<(Var<'t>, Var<'t>)> {
        let joint = Var::concat_last(inputs)?;
        let out = joint.affine(&bound[self.w], &bound[self.b])?;
        let mean = out.slice_last(0, self.d_latent)?;
        let logvar = out.slice_last(self.d_latent, self.d_latent)?.clamp(LOGVAR_MIN, LOGVAR_MAX);
        Ok((mean, logvar))
    }

    /// Parameters plus a sample; `eps = None` collapses the sample onto the mean.
    pub fn latent<'t>(&self, bound: &Bound<'t>, inputs: &[Var<'t>], eps: Option<&Tensor>) -> Result<LatentState<'t>> {
        let (mean, logvar) = self.params(bound, inputs)?;
        reparameterize(mean, logvar, eps)
    }
}

/// `mean + exp(logvar/2)·ε`, or exactly `mean` when no draw is supplied.
pub fn reparameterize<'t>(mean: Var<'t>, logvar: Var<'t>, eps: Option<&Tensor>) -> Result<LatentState<'t>> {
    let sample = match eps {
        None => mean,
        Some(e) => {
            if e.shape() != mean.shape().as_slice() {
                return Err(Error::Contract(format!(
                    "noise shape {:?} does not match latent shape {:?}",
                    e.shape(),
                    mean.shape()
                )));
            }
            let noise = mean.tape().constant(e.clone());
            mean.add(&logvar.scale(0.5).exp().mul(&noise)?)?
        }
    };
    Ok(LatentState { mean, logvar, sample })
}

/// `x_t = φ(z_t·W_z + h_t·R_z + b_z)`.
#[derive(Debug, Clone)]
pub struct OutputHead {
    pub activation: Activation,
    pub wz: ParamId,
    pub rz: ParamId,
    pub b: ParamId,
}

impl OutputHead {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        d_latent: usize,
        d_model: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        let wz = store.add_uniform(format!("{prefix}.wz"), d_latent, d_model, rng);
        let rz = store.add_uniform(format!("{prefix}.rz"), d_model, d_model, rng);
        let b = store.add(format!("{prefix}.b"), Tensor::zeros(&[d_model]));
        Self { activation, wz, rz, b }
    }

    pub fn apply<'t>(&self, bound: &Bound<'t>, z: &Var<'t>, h: &Var<'t>) -> Result<Var<'t>> {
        let pre = z
            .matmul(&bound[self.wz])?
            .add(&h.matmul(&bound[self.rz])?)?
            .add(&bound[self.b])?;
        Ok(match self.activation {
            Activation::Identity => pre,
            Activation::Tanh => pre.tanh(),
        })
    }
}

/// Zero latent `z_0` for a batch.
pub fn zero_latent(tape: &Tape, batch: usize, d_latent: usize) -> Var<'_> {
    tape.constant(Tensor::zeros(&[batch, d_latent]))
}
