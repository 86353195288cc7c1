//! Turning a raw univariate window into model inputs: trend/seasonal split,
//! instance normalization, zero padding and patching.

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};

/// Standard deviations below this are treated as a flat series.
pub const DEGENERATE_STD: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionPair {
    pub trend: Vec<f64>,
    pub seasonal: Vec<f64>,
}

/// Centered moving average with edge replication as the trend; the residual
/// is the seasonal part.
pub fn decompose(x: &[f64], kernel: usize) -> Result<DecompositionPair> {
    if kernel % 2 == 0 {
        return Err(Error::Config(format!("trend kernel {kernel} must be odd")));
    }
    if kernel > x.len() {
        return Err(Error::Config(format!(
            "trend kernel {kernel} exceeds series length {}",
            x.len()
        )));
    }
    let half = kernel / 2;
    let last = x.len() - 1;
    let at = |i: isize| x[i.clamp(0, last as isize) as usize];
    let trend: Vec<f64> = (0..x.len() as isize)
        .map(|i| {
            let s: f64 = (i - half as isize..=i + half as isize).map(at).sum();
            s / kernel as f64
        })
        .collect();
    let seasonal = x.iter().zip(&trend).map(|(v, t)| v - t).collect();
    Ok(DecompositionPair { trend, seasonal })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZScore {
    pub normalized: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation, replaced by 1 for flat series.
    pub std: f64,
    pub degenerate: bool,
}

pub fn zscore(x: &[f64]) -> Result<ZScore> {
    if x.len() < 2 {
        return Err(Error::Contract(format!(
            "z-score needs at least 2 values, got {}",
            x.len()
        )));
    }
    let (mean, mut std) = mean_std(x);
    let degenerate = std < DEGENERATE_STD;
    if degenerate {
        std = 1.0;
    }
    Ok(ZScore {
        normalized: x.iter().map(|v| (v - mean) / std).collect(),
        mean,
        std,
        degenerate,
    })
}

pub fn unzscore(z: &[f64], mean: f64, std: f64) -> Vec<f64> {
    z.iter().map(|v| v * std + mean).collect()
}

/// Mean and population standard deviation.
pub fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `⌈(L+T+S−P)/S⌉`, the number of stride steps covering the padded window.
pub fn patch_count(lookback: usize, horizon: usize, patch: usize, stride: usize) -> Result<usize> {
    check_patching(lookback, horizon, patch, stride)?;
    Ok((lookback + horizon + stride - patch).div_ceil(stride))
}

fn check_patching(lookback: usize, horizon: usize, patch: usize, stride: usize) -> Result<()> {
    if stride == 0 {
        return Err(Error::Config("stride must be positive".into()));
    }
    if patch < stride {
        return Err(Error::Config(format!(
            "patch size {patch} is smaller than stride {stride}; windows would skip data"
        )));
    }
    if lookback + horizon + stride < patch {
        return Err(Error::Config(format!(
            "patch size {patch} exceeds the padded window length {}",
            lookback + horizon + stride
        )));
    }
    Ok(())
}

/// Window layout shared by the generative and inference inputs.
///
/// Both inputs have length `S + L + T`. Windows `0..N` start at `j·S`; the
/// final window `N` ends exactly at the end of the input, so no padding is
/// added behind the horizon beyond what the generative input already has.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGeometry {
    lookback: usize,
    horizon: usize,
    patch: usize,
    stride: usize,
    count: usize,
}

impl PatchGeometry {
    pub fn new(lookback: usize, horizon: usize, patch: usize, stride: usize) -> Result<Self> {
        let count = patch_count(lookback, horizon, patch, stride)?;
        Ok(Self {
            lookback,
            horizon,
            patch,
            stride,
            count,
        })
    }

    pub fn lookback(&self) -> usize {
        self.lookback
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn patch(&self) -> usize {
        self.patch
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    /// `N`; there are `N + 1` patches.
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn num_patches(&self) -> usize {
        self.count + 1
    }

    /// Length of the padded input, `S + L + T`.
    pub fn padded_len(&self) -> usize {
        self.stride + self.lookback + self.horizon
    }

    /// Start offset of window `j` inside the padded input.
    pub fn start(&self, j: usize) -> usize {
        if j < self.count {
            j * self.stride
        } else {
            self.padded_len() - self.patch
        }
    }

    fn slice(&self, padded: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_patches() * self.patch);
        for j in 0..self.num_patches() {
            let s = self.start(j);
            out.extend_from_slice(&padded[s..s + self.patch]);
        }
        out
    }
}

/// Unembedded windows, one row per patch.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPatches {
    pub data: Tensor,
    pub pad_front: usize,
    pub pad_back: usize,
}

/// Windows over `[0×S, x_{1:L}, 0×T]`.
pub fn pad_patch_generative(x: &[f64], geometry: &PatchGeometry) -> Result<RawPatches> {
    if x.len() != geometry.lookback {
        return Err(Error::Contract(format!(
            "generative input has {} values, lookback is {}",
            x.len(),
            geometry.lookback
        )));
    }
    let mut padded = vec![0.0; geometry.padded_len()];
    padded[geometry.stride..geometry.stride + x.len()].copy_from_slice(x);
    Ok(RawPatches {
        data: Tensor::new(vec![geometry.num_patches(), geometry.patch], geometry.slice(&padded))?,
        pad_front: geometry.stride,
        pad_back: geometry.horizon,
    })
}

/// Windows over `[0×S, x_{1:L+T}]`.
pub fn pad_patch_inference(x: &[f64], geometry: &PatchGeometry) -> Result<RawPatches> {
    if x.len() != geometry.lookback + geometry.horizon {
        return Err(Error::Contract(format!(
            "inference input has {} values, expected {}",
            x.len(),
            geometry.lookback + geometry.horizon
        )));
    }
    let mut padded = vec![0.0; geometry.padded_len()];
    padded[geometry.stride..].copy_from_slice(x);
    Ok(RawPatches {
        data: Tensor::new(vec![geometry.num_patches(), geometry.patch], geometry.slice(&padded))?,
        pad_front: geometry.stride,
        pad_back: 0,
    })
}

/// Embedded patch series `x_{p0:pN}` with its bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSequence {
    pub patches: Tensor,
    pub geometry: PatchGeometry,
    pub pad_front: usize,
    pub pad_back: usize,
}

/// Affine patch embedding `raw·W + b` on the tape.
pub fn embed<'t>(raw: &Var<'t>, w: &Var<'t>, b: &Var<'t>) -> Result<Var<'t>> {
    Ok(raw.affine(w, b)?)
}

impl PatchSequence {
    pub fn embed(raw: &RawPatches, geometry: PatchGeometry, w: &Tensor, b: &Tensor) -> Result<Self> {
        let tape = Tape::new();
        let out = embed(
            &tape.constant(raw.data.clone()),
            &tape.constant(w.clone()),
            &tape.constant(b.clone()),
        )?;
        Ok(Self {
            patches: out.value(),
            geometry,
            pad_front: raw.pad_front,
            pad_back: raw.pad_back,
        })
    }
}

/// One channel window after decomposition and normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSeries {
    /// Generative patches, `(N+1)·P` values, row-major.
    pub gen_patches: Vec<f64>,
    /// Inference patches over the full window, present when the future is known.
    pub inf_patches: Option<Vec<f64>>,
    /// Normalized detrended window `x_{1:L+T}`, present when the future is known.
    pub target: Option<Vec<f64>>,
    /// Trend over the history followed by its last value repeated over the horizon.
    pub trend: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl PreparedSeries {
    /// Maps normalized model output over `L+T` steps back to the data scale.
    pub fn restore(&self, normalized: &[f64]) -> Vec<f64> {
        normalized
            .iter()
            .zip(&self.trend)
            .map(|(v, t)| v * self.std + self.mean + t)
            .collect()
    }
}

/// Prepares one channel window. `window` holds either the `L` history values
/// (forecasting) or `L+T` values (training, where the future is the target).
pub fn prepare_window(window: &[f64], config: &ModelConfig, geometry: &PatchGeometry) -> Result<PreparedSeries> {
    let l = geometry.lookback;
    let t = geometry.horizon;
    if window.len() != l && window.len() != l + t {
        return Err(Error::Contract(format!(
            "window has {} values, expected {} or {}",
            window.len(),
            l,
            l + t
        )));
    }
    if let Some(i) = window.iter().position(|v| !v.is_finite()) {
        return Err(Error::Data(format!("non-finite value at offset {i} of the window")));
    }
    let history = &window[..l];
    let (hist_trend, seasonal) = if config.use_decomposition {
        let d = decompose(history, config.kernel)?;
        (d.trend, d.seasonal)
    } else {
        (vec![0.0; l], history.to_vec())
    };
    let last = *hist_trend.last().expect("lookback is positive");
    let mut trend = hist_trend;
    trend.resize(l + t, last);

    let z = zscore(&seasonal)?;
    let gen = pad_patch_generative(&z.normalized, geometry)?;

    let (inf_patches, target) = if window.len() == l + t {
        let target: Vec<f64> = window
            .iter()
            .zip(&trend)
            .map(|(v, tr)| (v - tr - z.mean) / z.std)
            .collect();
        let inf = pad_patch_inference(&target, geometry)?;
        (Some(inf.data.into_vec()), Some(target))
    } else {
        (None, None)
    };
    Ok(PreparedSeries {
        gen_patches: gen.data.into_vec(),
        inf_patches,
        target,
        trend,
        mean: z.mean,
        std: z.std,
    })
}

/// Regroups per-sequence patches into one `[B×P]` tensor per patch index.
pub fn batch_patches(series: &[&[f64]], geometry: &PatchGeometry) -> Vec<Tensor> {
    let p = geometry.patch;
    (0..geometry.num_patches())
        .map(|j| {
            let mut data = Vec::with_capacity(series.len() * p);
            for s in series {
                data.extend_from_slice(&s[j * p..(j + 1) * p]);
            }
            Tensor::new(vec![series.len(), p], data).expect("patch buffers have fixed width")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_series_has_flat_trend() {
        let d = decompose(&[2.5; 10], 5).unwrap();
        assert!(d.trend.iter().all(|&v| (v - 2.5).abs() < 1e-15));
        assert!(d.seasonal.iter().all(|&v| v.abs() < 1e-15));
    }

    #[test]
    fn hand_moving_average_with_edge_replication() {
        let d = decompose(&[1.0, 2.0, 3.0, 4.0, 5.0], 3).unwrap();
        let expected = [4.0 / 3.0, 2.0, 3.0, 4.0, 14.0 / 3.0];
        for (a, b) in d.trend.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(matches!(decompose(&[1.0; 5], 4), Err(Error::Config(_))));
        assert!(matches!(decompose(&[1.0; 5], 7), Err(Error::Config(_))));
    }

    #[test]
    fn zscore_small_cases() {
        let z = zscore(&[0.0, 0.0, 0.0]).unwrap();
        assert_eq!((z.normalized.clone(), z.mean, z.std, z.degenerate), (vec![0.0; 3], 0.0, 1.0, true));
        let z = zscore(&[1.0, 3.0]).unwrap();
        assert_eq!((z.normalized, z.mean, z.std), (vec![-1.0, 1.0], 2.0, 1.0));
        assert!(zscore(&[1.0]).is_err());
    }

    #[test]
    fn default_geometry_has_eighteen_patches() {
        let g = PatchGeometry::new(336, 96, 56, 24).unwrap();
        assert_eq!(g.count(), 17);
        let x: Vec<f64> = (0..336).map(|i| i as f64 + 1.0).collect();
        assert_eq!(pad_patch_generative(&x, &g).unwrap().data.shape(), &[18, 56]);
        let y: Vec<f64> = (0..432).map(|i| i as f64 + 1.0).collect();
        assert_eq!(pad_patch_inference(&y, &g).unwrap().data.shape(), &[18, 56]);
    }

    #[test]
    fn boundary_gives_single_patch_of_prefix_and_history() {
        // L = P − S, T = 0
        let g = PatchGeometry::new(4, 0, 6, 2).unwrap();
        assert_eq!(g.count(), 0);
        let raw = pad_patch_generative(&[1.0, 2.0, 3.0, 4.0], &g).unwrap();
        assert_eq!(raw.data.data(), &[0.0, 0.0, 1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn patch_smaller_than_stride_is_rejected() {
        assert!(matches!(PatchGeometry::new(10, 2, 2, 3), Err(Error::Config(_))));
    }

    #[test]
    fn padding_positions_are_zero_and_last_inference_patch_ends_the_window() {
        let g = PatchGeometry::new(10, 5, 4, 3).unwrap();
        let x: Vec<f64> = (1..=10).map(f64::from).collect();
        let raw = pad_patch_generative(&x, &g).unwrap();
        let p = g.patch();
        for j in 0..g.num_patches() {
            for k in 0..p {
                let pos = g.start(j) + k;
                let v = raw.data.data()[j * p + k];
                if pos < 3 || pos >= 13 {
                    assert_eq!(v, 0.0);
                } else {
                    assert_eq!(v, (pos - 2) as f64);
                }
            }
        }
        let y: Vec<f64> = (1..=15).map(f64::from).collect();
        let inf = pad_patch_inference(&y, &g).unwrap();
        let last = inf.data.row(g.count());
        assert_eq!(last, &[12.0, 13.0, 14.0, 15.0]);
    }

    #[test]
    fn embed_with_identity_passes_through() {
        let g = PatchGeometry::new(4, 2, 2, 2).unwrap();
        let raw = pad_patch_generative(&[1.0, 2.0, 3.0, 4.0], &g).unwrap();
        let eye = Tensor::matrix(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let seq = PatchSequence::embed(&raw, g, &eye, &Tensor::zeros(&[2])).unwrap();
        assert_eq!(seq.patches, raw.data);
        let zero = PatchSequence::embed(&raw, g, &Tensor::zeros(&[2, 2]), &Tensor::zeros(&[2])).unwrap();
        assert!(zero.patches.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn prepared_window_restores_history() {
        let cfg = ModelConfig {
            lookback: 12,
            horizon: 4,
            patch_size: 4,
            stride: 2,
            kernel: 5,
            ..Default::default()
        };
        let g = cfg.geometry().unwrap();
        let w: Vec<f64> = (0..16).map(|i| (i as f64 * 0.7).sin() + 0.1 * i as f64).collect();
        let p = prepare_window(&w, &cfg, &g).unwrap();
        let back = p.restore(p.target.as_ref().unwrap());
        for (a, b) in back.iter().zip(&w) {
            assert!((a - b).abs() < 1e-12);
        }
        let mut bad = w.clone();
        bad[3] = f64::NAN;
        assert!(matches!(prepare_window(&bad, &cfg, &g), Err(Error::Data(_))));
    }
}
