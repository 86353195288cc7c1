//! Generative model: the prior latent chain over patches, the per-step
//! output head, and the flatten-and-project decoder.

use rand::Rng;

use crate::cells::{zero_latent, CellStack, LatentHead, LatentState, OutputHead};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::noise;
use crate::numerics::{Bound, ParamId, ParamStore, Tape, Tensor, Var};
use crate::preprocess::{batch_patches, embed, prepare_window, PatchGeometry};

/// Where the latent path comes from during a generative pass.
#[derive(Debug, Clone, Copy)]
pub enum LatentSource<'a, 't> {
    /// Sample from the prior. `None` propagates the prior means (ε = 0).
    Prior(Option<&'a [Tensor]>),
    /// Follow a path drawn from the posterior; prior parameters at step `t`
    /// are evaluated at the posterior's `z_{t−1}`.
    Posterior(&'a [Var<'t>]),
}

/// Everything a generative pass produced, indexed `t = 1..=N+1` at
/// positions `0..=N`.
#[derive(Debug, Clone)]
pub struct GenerativeTrace<'t> {
    /// Prior parameters and the latent actually used at each step.
    pub latents: Vec<LatentState<'t>>,
    /// `x_{p1:pN+1}`, each `[B×d_model]`.
    pub patch_outputs: Vec<Var<'t>>,
    /// `h_{1:N+1}`, each `[B×d_model]`.
    pub hidden: Vec<Var<'t>>,
}

#[derive(Debug, Clone)]
pub struct GenerativeModel {
    config: ModelConfig,
    geometry: PatchGeometry,
    store: ParamStore,
    embed_w: ParamId,
    embed_b: ParamId,
    stack: CellStack,
    prior: LatentHead,
    output: OutputHead,
    decode_w: ParamId,
    decode_b: ParamId,
}

impl GenerativeModel {
    pub fn new(config: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let geometry = config.geometry()?;
        let (d, dl) = (config.d_model, config.d_latent);
        let mut store = ParamStore::new();
        let embed_w = store.add_uniform("gen.embed.w", geometry.patch(), d, rng);
        let embed_b = store.add("gen.embed.b", Tensor::zeros(&[d]));
        let stack = CellStack::new(&mut store, "gen.unit", &config.pattern, d, rng)?;
        let prior = LatentHead::new(&mut store, "gen.prior", d + dl, dl, rng);
        let output = OutputHead::new(&mut store, "gen.output", dl, d, config.activation, rng);
        let flat = geometry.num_patches() * d;
        let out_len = geometry.lookback() + geometry.horizon();
        let decode_w = store.add_uniform("gen.decode.w", flat, out_len, rng);
        let decode_b = store.add("gen.decode.b", Tensor::zeros(&[out_len]));
        Ok(Self {
            config: config.clone(),
            geometry,
            store,
            embed_w,
            embed_b,
            stack,
            prior,
            output,
            decode_w,
            decode_b,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn geometry(&self) -> &PatchGeometry {
        &self.geometry
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Left-to-right recurrence over `p_0..p_N`. `patches[j]` is the `[B×P]`
    /// batch of patch `j`. Step `t` consumes only `p_{t−1}`; generated
    /// outputs are never fed back.
    pub fn run<'t>(&self, bound: &Bound<'t>, patches: &[Tensor], source: LatentSource<'_, 't>) -> Result<GenerativeTrace<'t>> {
        let steps = self.geometry.num_patches();
        if patches.len() != steps {
            return Err(Error::Contract(format!(
                "expected {steps} patch batches, got {}",
                patches.len()
            )));
        }
        let tape = bound[self.embed_w].tape();
        let batch = patches[0].shape()[0];
        match source {
            LatentSource::Prior(Some(eps)) if eps.len() != steps => {
                return Err(Error::Contract(format!("expected {steps} noise draws, got {}", eps.len())));
            }
            LatentSource::Posterior(path) if path.len() != steps => {
                return Err(Error::Contract(format!(
                    "posterior path has {} steps, expected {steps}",
                    path.len()
                )));
            }
            _ => {}
        }

        let mut states = self.stack.init_state(tape, batch);
        let mut z_prev = zero_latent(tape, batch, self.config.d_latent);
        let mut trace = GenerativeTrace {
            latents: Vec::with_capacity(steps),
            patch_outputs: Vec::with_capacity(steps),
            hidden: Vec::with_capacity(steps),
        };
        for (j, patch) in patches.iter().enumerate() {
            let t = j + 1;
            let x = embed(&tape.constant(patch.clone()), &bound[self.embed_w], &bound[self.embed_b])?;
            let h = self.stack.step(bound, &mut states, &x, t)?;
            let latent = match source {
                LatentSource::Prior(eps) => {
                    let e = eps.filter(|_| self.config.stochastic).map(|e| &e[j]);
                    self.prior.latent(bound, &[h, z_prev], e)?
                }
                LatentSource::Posterior(path) => {
                    let (mean, logvar) = self.prior.params(bound, &[h, z_prev])?;
                    LatentState {
                        mean,
                        logvar,
                        sample: path[j],
                    }
                }
            };
            let out = self.output.apply(bound, &latent.sample, &h)?;
            if !out.value().all_finite() {
                return Err(Error::numeric("generative patch output", Some(t)));
            }
            z_prev = latent.sample;
            trace.latents.push(latent);
            trace.patch_outputs.push(out);
            trace.hidden.push(h);
        }
        Ok(trace)
    }

    /// Flattens `x_{p1:pN+1}` and projects to `L+T` values per sequence.
    pub fn decode<'t>(&self, bound: &Bound<'t>, trace: &GenerativeTrace<'t>) -> Result<Var<'t>> {
        let flat = Var::concat_last(&trace.patch_outputs)?;
        let expected = self.store.get(self.decode_w).shape()[0];
        if flat.shape()[1] != expected {
            return Err(Error::Config(format!(
                "decoder expects {expected} inputs, trace provides {}",
                flat.shape()[1]
            )));
        }
        Ok(flat.affine(&bound[self.decode_w], &bound[self.decode_b])?)
    }

    /// Normalized `L+T` outputs for a batch of prepared histories.
    fn decode_batch(&self, gen_patches: &[&[f64]], noise_keys: Option<&[u64]>) -> Result<Tensor> {
        let tape = Tape::new();
        let bound = self.store.bind_frozen(&tape);
        let patches = batch_patches(gen_patches, &self.geometry);
        let eps = noise_keys.map(|k| noise::latent_noise(k, self.geometry.num_patches(), self.config.d_latent));
        let trace = self.run(&bound, &patches, LatentSource::Prior(eps.as_deref()))?;
        Ok(self.decode(&bound, &trace)?.value())
    }

    /// Forecasts for each history window (length `L`), on the data scale.
    ///
    /// With `noise_keys = None` the prior means are propagated (point
    /// forecast); otherwise row `r` draws its latent noise from the stream
    /// keyed by `noise_keys[r]`.
    pub fn forecast_windows(&self, histories: &[&[f64]], noise_keys: Option<&[u64]>) -> Result<Vec<Vec<f64>>> {
        if histories.is_empty() {
            return Ok(Vec::new());
        }
        let prepared = histories
            .iter()
            .map(|h| prepare_window(h, &self.config, &self.geometry))
            .collect::<Result<Vec<_>>>()?;
        let gen: Vec<&[f64]> = prepared.iter().map(|p| p.gen_patches.as_slice()).collect();
        let out = self.decode_batch(&gen, noise_keys)?;
        let l = self.geometry.lookback();
        Ok(prepared
            .iter()
            .enumerate()
            .map(|(r, p)| p.restore(out.row(r))[l..].to_vec())
            .collect())
    }

    /// Point forecast `[C×T]` and `n_samples` sampled forecasts
    /// `[n_samples×C×T]` from a history `[C×L]`, one channel at a time
    /// through shared parameters.
    pub fn forecast(&self, x_hist: &Tensor, seed: u64, n_samples: usize) -> Result<Forecast> {
        let shape = x_hist.shape();
        if shape.len() != 2 || shape[0] == 0 || shape[1] != self.geometry.lookback() {
            return Err(Error::Data(format!(
                "history must be [C×{}] with C ≥ 1, got {:?}",
                self.geometry.lookback(),
                shape
            )));
        }
        let c = shape[0];
        for ch in 0..c {
            if !x_hist.row(ch).iter().all(|v| v.is_finite()) {
                return Err(Error::Data(format!("non-finite value in channel {ch}")));
            }
        }
        let t = self.geometry.horizon();
        let rows: Vec<&[f64]> = (0..c).map(|ch| x_hist.row(ch)).collect();
        let point = self.forecast_windows(&rows, None)?;
        let point = Tensor::new(vec![c, t], point.concat())?;

        let mut histories = Vec::with_capacity(n_samples * c);
        let mut keys = Vec::with_capacity(n_samples * c);
        for s in 0..n_samples {
            for (ch, row) in rows.iter().enumerate() {
                histories.push(*row);
                keys.push(noise::key(&[seed, s as u64, ch as u64]));
            }
        }
        let samples = self.forecast_windows(&histories, Some(&keys))?;
        let samples = Tensor::new(vec![n_samples, c, t], samples.concat())?;
        Ok(Forecast { point, samples })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forecast {
    /// `[C×T]`
    pub point: Tensor,
    /// `[n_samples×C×T]`
    pub samples: Tensor,
}
