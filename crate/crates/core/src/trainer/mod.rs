//! Optimization loop: shuffled sliding windows, ELBO gradients reduced over
//! fixed-size micro-batches, global-norm clipping, RAdam with cosine
//! annealing, validation-based model selection and early stopping.

pub mod checkpoint;
mod radam;

pub use radam::{cosine_lr, RAdam};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::WindowSet;
use crate::error::{Error, Result};
use crate::generative::GenerativeModel;
use crate::loss::{ElboReport, KlDirection};
use crate::model::{elbo_objective, LossSettings, StoxModel, TrainBatch};
use crate::noise;
use crate::numerics::{Tape, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub lr_min: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta: f64,
    pub seed: u64,
    /// Global gradient-norm limit. Written as `0` in config files to disable.
    #[serde(with = "zero_is_none")]
    pub clip_norm: Option<f64>,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub patience: usize,
    pub kl_direction: KlDirection,
    /// Offset between consecutive training windows.
    pub window_stride: usize,
    /// Sequences per gradient task. Fixed, so results do not depend on the
    /// number of workers.
    pub micro_batch: usize,
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            lr_min: 0.0,
            epochs: 20,
            batch_size: 32,
            beta: 500.0,
            seed: 0,
            clip_norm: Some(1.0),
            patience: 5,
            kl_direction: KlDirection::Paper,
            window_stride: 1,
            micro_batch: 8,
            workers: 1,
        }
    }
}

mod zero_is_none {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(v.unwrap_or(0.0))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        let v = f64::deserialize(d)?;
        Ok((v != 0.0).then_some(v))
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !(self.lr_min >= 0.0) || self.lr_min > self.lr {
            return Err(Error::Config("need 0 ≤ lr_min ≤ lr and lr > 0".into()));
        }
        if self.batch_size == 0 || self.micro_batch == 0 || self.window_stride == 0 || self.workers == 0 {
            return Err(Error::Config(
                "batch_size, micro_batch, window_stride and workers must be positive".into(),
            ));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::Config("beta must be non-negative".into()));
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        Ok(())
    }

    fn settings(&self) -> LossSettings {
        LossSettings {
            beta: self.beta,
            kl_direction: self.kl_direction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Learning rate of the last step in the epoch.
    pub lr: f64,
    /// Training objective averaged over the epoch's sequences.
    pub train: ElboReport,
    /// Point-forecast MSE over the validation horizon.
    pub val_mse: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the best validation epoch (the initial model when no
    /// epoch ran).
    pub model: StoxModel,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
}

pub(crate) fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

fn add_scaled(acc: &mut ElboReport, r: &ElboReport, w: f64) {
    if acc.kl_per_step.is_empty() {
        acc.kl_per_step = vec![0.0; r.kl_per_step.len()];
    }
    acc.recon += w * r.recon;
    acc.kl_total += w * r.kl_total;
    acc.total += w * r.total;
    for (a, b) in acc.kl_per_step.iter_mut().zip(&r.kl_per_step) {
        *a += w * b;
    }
}

fn empty_report(beta: f64) -> ElboReport {
    ElboReport {
        recon: 0.0,
        kl_per_step: Vec::new(),
        kl_total: 0.0,
        beta,
        total: 0.0,
    }
}

/// Gradients of the mean objective over `ids`, accumulated from fixed-size
/// micro-batches in order.
pub fn batch_gradients(
    model: &StoxModel,
    windows: &WindowSet<'_>,
    ids: &[usize],
    noise_keys: &[u64],
    settings: LossSettings,
    micro_batch: usize,
    pool: &rayon::ThreadPool,
) -> Result<([Vec<Tensor>; 2], ElboReport)> {
    let n = ids.len();
    let chunks: Vec<(&[usize], &[u64])> = ids.chunks(micro_batch).zip(noise_keys.chunks(micro_batch)).collect();
    let parts = pool.install(|| {
        chunks
            .par_iter()
            .map(|(ids, keys)| {
                let seqs: Vec<&[f64]> = ids.iter().map(|&i| windows.window(i)).collect();
                let batch = TrainBatch::new(model, &seqs, Some(keys))?;
                let w = ids.len() as f64 / n as f64;
                let tape = Tape::new();
                let gb = model.generative.store().bind(&tape);
                let ib = model.inference.store().bind(&tape);
                let out = elbo_objective(model, &gb, &ib, &batch, settings)?;
                tape.backward(out.loss.scale(w))?;
                let grads = [
                    model.generative.store().gradients(&tape, &gb),
                    model.inference.store().gradients(&tape, &ib),
                ];
                Ok((grads, out.report, w))
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut report = empty_report(settings.beta);
    let mut total: Option<[Vec<Tensor>; 2]> = None;
    for (grads, r, w) in parts {
        add_scaled(&mut report, &r, w);
        match total.as_mut() {
            None => total = Some(grads),
            Some(acc) => {
                for (a_store, g_store) in acc.iter_mut().zip(&grads) {
                    for (a, g) in a_store.iter_mut().zip(g_store) {
                        for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
                            *x += y;
                        }
                    }
                }
            }
        }
    }
    let grads = total.ok_or_else(|| Error::Data("empty batch".into()))?;
    Ok((grads, report))
}

/// Rescales gradients in place so their joint L2 norm is at most
/// `max_norm`; returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Vec<Tensor>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flatten()
        .flat_map(|t| t.data().iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for t in grads.iter_mut().flatten() {
            for g in t.data_mut() {
                *g *= s;
            }
        }
    }
    norm
}

/// Point forecasts `[S×T]` and, when `n_samples > 0`, sampled forecasts
/// `[n_samples×S×T]` for every sequence of `windows`. Sample `m` of
/// sequence `(start, channel)` draws from the stream keyed by
/// `(seed, m, start, channel)`.
pub fn predict_windows(
    model: &GenerativeModel,
    windows: &WindowSet<'_>,
    n_samples: usize,
    seed: u64,
    workers: usize,
) -> Result<(Tensor, Tensor)> {
    const CHUNK: usize = 64;
    let pool = thread_pool(workers)?;
    let n = windows.len();
    let t = windows.horizon;
    let ids: Vec<usize> = (0..n).collect();
    let run = |keys: Option<u64>| -> Result<Vec<f64>> {
        let parts = pool.install(|| {
            ids.par_chunks(CHUNK)
                .map(|chunk| {
                    let hist: Vec<&[f64]> = chunk.iter().map(|&i| windows.history(i)).collect();
                    let keys: Option<Vec<u64>> = keys.map(|m| {
                        chunk
                            .iter()
                            .map(|&i| {
                                let (s, c) = windows.id(i);
                                noise::key(&[seed, m, s as u64, c as u64])
                            })
                            .collect()
                    });
                    model.forecast_windows(&hist, keys.as_deref())
                })
                .collect::<Result<Vec<_>>>()
        })?;
        Ok(parts.into_iter().flatten().flatten().collect())
    };
    let point = Tensor::new(vec![n, t], run(None)?)?;
    let mut samples = Vec::with_capacity(n_samples * n * t);
    for m in 0..n_samples {
        samples.extend(run(Some(m as u64))?);
    }
    Ok((point, Tensor::new(vec![n_samples, n, t], samples)?))
}

/// Mean squared error of the point forecast over every horizon step.
pub fn forecast_mse(model: &GenerativeModel, windows: &WindowSet<'_>, workers: usize) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::Data("no windows to evaluate".into()));
    }
    let (point, _) = predict_windows(model, windows, 0, 0, workers)?;
    let t = windows.horizon;
    let mut sse = 0.0;
    for i in 0..windows.len() {
        for (p, y) in point.row(i).iter().zip(windows.future(i)) {
            sse += (p - y).powi(2);
        }
    }
    Ok(sse / (windows.len() * t) as f64)
}

/// Trains `model` on `train`, selecting the epoch with the lowest
/// validation forecast MSE. `on_epoch` sees each record as it is produced.
pub fn train(
    model: StoxModel,
    train: &WindowSet<'_>,
    val: &WindowSet<'_>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Data("training split has no complete windows".into()));
    }
    if val.is_empty() {
        return Err(Error::Data("validation split has no complete windows".into()));
    }
    let pool = thread_pool(cfg.workers)?;
    let mut model = model;
    let mut best = model.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = None;
    let mut history = Vec::new();
    let mut opt = [RAdam::new(model.generative.store()), RAdam::new(model.inference.store())];
    let batches_per_epoch = train.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * batches_per_epoch;
    let mut step = 0;
    let mut stale = 0;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(noise::key(&[cfg.seed, epoch as u64, 0x5A0F])));
        let mut epoch_report = empty_report(cfg.beta);
        let mut lr = cfg.lr;
        for ids in order.chunks(cfg.batch_size) {
            let keys: Vec<u64> = ids
                .iter()
                .map(|&i| {
                    let (s, c) = train.id(i);
                    noise::key(&[cfg.seed, epoch as u64, s as u64, c as u64])
                })
                .collect();
            let (mut grads, report) =
                batch_gradients(&model, train, ids, &keys, cfg.settings(), cfg.micro_batch, &pool)?;
            add_scaled(&mut epoch_report, &report, ids.len() as f64 / train.len() as f64);
            if let Some(c) = cfg.clip_norm {
                clip_global_norm(&mut grads, c);
            }
            lr = cosine_lr(step, total_steps, cfg.lr, cfg.lr_min);
            for ((opt, store), g) in opt.iter_mut().zip(model.stores_mut()).zip(&grads) {
                opt.step(store, g, lr)?;
            }
            step += 1;
        }
        let val_mse = forecast_mse(&model.generative, val, cfg.workers)?;
        if !val_mse.is_finite() {
            return Err(Error::numeric("validation forecast", Some(epoch)));
        }
        let record = EpochRecord {
            epoch,
            lr,
            train: epoch_report,
            val_mse,
        };
        on_epoch(&record);
        history.push(record);
        if val_mse < best_val {
            best_val = val_mse;
            best = model.clone();
            best_epoch = Some(epoch);
            stale = 0;
        } else {
            stale += 1;
            if cfg.patience > 0 && stale >= cfg.patience {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        model: if best_epoch.is_some() { best } else { model },
        history,
        best_epoch,
    })
}
