//! Approximate posterior: a bidirectional recurrent unit over the full
//! observed window feeding a sequential Gaussian latent head.

use rand::Rng;

use crate::cells::{zero_latent, CellStack, LatentHead, LatentState};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::numerics::{Bound, ParamId, ParamStore, Tensor, Var};
use crate::preprocess::{embed, PatchGeometry};

#[derive(Debug, Clone)]
pub struct PosteriorTrace<'t> {
    /// Posterior parameters and samples `z_{1:N+1}`.
    pub latents: Vec<LatentState<'t>>,
    /// Forward hidden states `h_{1:N+1}`.
    pub fwd_hidden: Vec<Var<'t>>,
    /// Backward hidden states `g_{1:N+1}`, stored in forward order; `g_t`
    /// summarizes patches `p_{t−1}..p_N`.
    pub bwd_hidden: Vec<Var<'t>>,
}

impl<'t> PosteriorTrace<'t> {
    /// The sampled latent path, in step order.
    pub fn path(&self) -> Vec<Var<'t>> {
        self.latents.iter().map(|l| l.sample).collect()
    }
}

/// Only the parts that feed the latent chain are built: the per-step patch
/// outputs of the posterior unit are discarded by the model, so they are
/// never computed.
#[derive(Debug, Clone)]
pub struct InferenceModel {
    config: ModelConfig,
    geometry: PatchGeometry,
    store: ParamStore,
    embed_w: ParamId,
    embed_b: ParamId,
    forward: CellStack,
    backward: CellStack,
    posterior: LatentHead,
}

impl InferenceModel {
    pub fn new(config: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let geometry = config.geometry()?;
        let (d, dl) = (config.d_model, config.d_latent);
        let mut store = ParamStore::new();
        let embed_w = store.add_uniform("inf.embed.w", geometry.patch(), d, rng);
        let embed_b = store.add("inf.embed.b", Tensor::zeros(&[d]));
        let forward = CellStack::new(&mut store, "inf.fwd", &config.pattern, d, rng)?;
        let backward = CellStack::new(&mut store, "inf.bwd", &config.pattern, d, rng)?;
        let posterior = LatentHead::new(&mut store, "inf.posterior", 2 * d + dl, dl, rng);
        Ok(Self {
            config: config.clone(),
            geometry,
            store,
            embed_w,
            embed_b,
            forward,
            backward,
            posterior,
        })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn geometry(&self) -> &PatchGeometry {
        &self.geometry
    }

    /// Runs both directions over the `[B×P]` patch batches of `x_{1:L+T}` and
    /// samples the posterior chain. `eps = None` (or a deterministic
    /// configuration) follows the posterior means.
    pub fn run<'t>(&self, bound: &Bound<'t>, patches: &[Tensor], eps: Option<&[Tensor]>) -> Result<PosteriorTrace<'t>> {
        let steps = self.geometry.num_patches();
        if patches.len() != steps {
            return Err(Error::Contract(format!(
                "expected {steps} patch batches, got {}",
                patches.len()
            )));
        }
        if let Some(e) = eps {
            if e.len() != steps {
                return Err(Error::Contract(format!("expected {steps} noise draws, got {}", e.len())));
            }
        }
        let tape = bound[self.embed_w].tape();
        let batch = patches[0].shape()[0];
        let embedded = patches
            .iter()
            .map(|p| embed(&tape.constant(p.clone()), &bound[self.embed_w], &bound[self.embed_b]))
            .collect::<Result<Vec<_>>>()?;

        let mut fwd_state = self.forward.init_state(tape, batch);
        let fwd_hidden = embedded
            .iter()
            .enumerate()
            .map(|(j, x)| self.forward.step(bound, &mut fwd_state, x, j + 1))
            .collect::<Result<Vec<_>>>()?;

        let mut bwd_state = self.backward.init_state(tape, batch);
        let mut bwd_hidden = Vec::with_capacity(steps);
        for (j, x) in embedded.iter().enumerate().rev() {
            bwd_hidden.push(self.backward.step(bound, &mut bwd_state, x, j + 1)?);
        }
        bwd_hidden.reverse();

        let mut z_prev = zero_latent(tape, batch, self.config.d_latent);
        let mut latents = Vec::with_capacity(steps);
        for j in 0..steps {
            let e = eps.filter(|_| self.config.stochastic).map(|e| &e[j]);
            let latent = self.posterior.latent(bound, &[fwd_hidden[j], bwd_hidden[j], z_prev], e)?;
            if !latent.sample.value().all_finite() {
                return Err(Error::numeric("posterior latent", Some(j + 1)));
            }
            z_prev = latent.sample;
            latents.push(latent);
        }
        Ok(PosteriorTrace {
            latents,
            fwd_hidden,
            bwd_hidden,
        })
    }
}
