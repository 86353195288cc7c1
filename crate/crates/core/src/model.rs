//! The paired generative and inference models and the training objective
//! that ties them together.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::generative::{GenerativeModel, GenerativeTrace, LatentSource};
use crate::inference::{InferenceModel, PosteriorTrace};
use crate::loss::{elbo_loss, ElboReport, KlDirection};
use crate::noise;
use crate::numerics::gradcheck::Objective;
use crate::numerics::{Bound, ParamStore, Tape, Tensor, Var};
use crate::preprocess::{batch_patches, prepare_window};

#[derive(Debug, Clone)]
pub struct StoxModel {
    pub generative: GenerativeModel,
    pub inference: InferenceModel,
}

impl StoxModel {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(noise::key(&[seed, 0x1417]));
        Ok(Self {
            generative: GenerativeModel::new(config, &mut rng)?,
            inference: InferenceModel::new(config, &mut rng)?,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        self.generative.config()
    }

    pub fn stores(&self) -> [&ParamStore; 2] {
        [self.generative.store(), self.inference.store()]
    }

    pub fn stores_mut(&mut self) -> [&mut ParamStore; 2] {
        [self.generative.store_mut(), self.inference.store_mut()]
    }

    pub fn num_parameters(&self) -> usize {
        self.stores().iter().map(|s| s.numel()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSettings {
    pub beta: f64,
    pub kl_direction: KlDirection,
}

/// A batch of full windows (`L+T` values each) ready for the objective.
#[derive(Debug, Clone)]
pub struct TrainBatch {
    pub gen_patches: Vec<Tensor>,
    pub inf_patches: Vec<Tensor>,
    /// Normalized detrended windows `[B×(L+T)]`.
    pub target: Tensor,
    /// Posterior noise `[B×d_latent]` per step, or `None` for mean paths.
    pub noise: Option<Vec<Tensor>>,
}

impl TrainBatch {
    /// `noise_keys[r]` keys the latent noise stream of window `r`.
    pub fn new(model: &StoxModel, windows: &[&[f64]], noise_keys: Option<&[u64]>) -> Result<Self> {
        let cfg = model.config();
        let geometry = model.generative.geometry();
        let len = geometry.lookback() + geometry.horizon();
        if windows.is_empty() {
            return Err(Error::Data("empty training batch".into()));
        }
        if windows.iter().any(|w| w.len() != len) {
            return Err(Error::Contract(format!("training windows must have {len} values")));
        }
        let prepared = windows
            .iter()
            .map(|w| prepare_window(w, cfg, geometry))
            .collect::<Result<Vec<_>>>()?;
        let gen: Vec<&[f64]> = prepared.iter().map(|p| p.gen_patches.as_slice()).collect();
        let inf: Vec<&[f64]> = prepared
            .iter()
            .map(|p| p.inf_patches.as_deref().expect("full window"))
            .collect();
        let target: Vec<f64> = prepared
            .iter()
            .flat_map(|p| p.target.clone().expect("full window"))
            .collect();
        let noise = noise_keys.map(|k| noise::latent_noise(k, geometry.num_patches(), cfg.d_latent));
        Ok(Self {
            gen_patches: batch_patches(&gen, geometry),
            inf_patches: batch_patches(&inf, geometry),
            target: Tensor::new(vec![windows.len(), len], target)?,
            noise,
        })
    }

    pub fn len(&self) -> usize {
        self.target.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Everything one objective evaluation produced.
pub struct ObjectiveOutput<'t> {
    pub loss: Var<'t>,
    pub report: ElboReport,
    pub generative: GenerativeTrace<'t>,
    pub posterior: PosteriorTrace<'t>,
    pub decoded: Var<'t>,
}

/// Posterior pass over the full window, prior evaluated along the posterior
/// path, decode, and the β-weighted ELBO loss.
pub fn elbo_objective<'t>(
    model: &StoxModel,
    gen_bound: &Bound<'t>,
    inf_bound: &Bound<'t>,
    batch: &TrainBatch,
    settings: LossSettings,
) -> Result<ObjectiveOutput<'t>> {
    let posterior = model
        .inference
        .run(inf_bound, &batch.inf_patches, batch.noise.as_deref())?;
    let path = posterior.path();
    let generative = model
        .generative
        .run(gen_bound, &batch.gen_patches, LatentSource::Posterior(&path))?;
    let decoded = model.generative.decode(gen_bound, &generative)?;
    let tape = decoded.tape();
    let target = tape.constant(batch.target.clone());
    let (loss, report) = elbo_loss(
        &generative,
        &posterior,
        &decoded,
        &target,
        settings.beta,
        settings.kl_direction,
    )?;
    if !report.total.is_finite() {
        return Err(Error::numeric("training loss", None));
    }
    Ok(ObjectiveOutput {
        loss,
        report,
        generative,
        posterior,
        decoded,
    })
}

/// The training loss on a fixed batch (noise included) as a function of both
/// parameter stores, generative first. Used for gradient audits.
pub struct BatchObjective<'m> {
    pub model: &'m StoxModel,
    pub batch: TrainBatch,
    pub settings: LossSettings,
}

impl Objective for BatchObjective<'_> {
    fn evaluate<'t>(&self, _tape: &'t Tape, params: &[Bound<'t>]) -> Var<'t> {
        elbo_objective(self.model, &params[0], &params[1], &self.batch, self.settings)
            .expect("objective on a validated batch")
            .loss
    }
}
