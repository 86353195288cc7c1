use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::PatchGeometry;

/// Activation applied by the per-step output head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Identity,
    Tanh,
}

/// Architecture and preprocessing settings shared by both models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub lookback: usize,
    pub horizon: usize,
    pub patch_size: usize,
    pub stride: usize,
    pub d_model: usize,
    pub d_latent: usize,
    /// Block pattern of each recurrent unit, `m` for mLSTM and `s` for sLSTM.
    pub pattern: String,
    /// Moving-average kernel of the trend filter (odd).
    pub kernel: usize,
    pub activation: Activation,
    pub stochastic: bool,
    pub use_decomposition: bool,
    /// When false the series is fed one step at a time (P = S = 1).
    pub use_patching: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            lookback: 336,
            horizon: 96,
            patch_size: 56,
            stride: 24,
            d_model: 64,
            d_latent: 16,
            pattern: "ms".into(),
            kernel: 25,
            activation: Activation::Identity,
            stochastic: true,
            use_decomposition: true,
            use_patching: true,
        }
    }
}

impl ModelConfig {
    /// Patch size and stride actually used, after the patching switch.
    pub fn effective_patching(&self) -> (usize, usize) {
        if self.use_patching {
            (self.patch_size, self.stride)
        } else {
            (1, 1)
        }
    }

    pub fn geometry(&self) -> Result<PatchGeometry> {
        let (p, s) = self.effective_patching();
        PatchGeometry::new(self.lookback, self.horizon, p, s)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lookback", self.lookback),
            ("d_model", self.d_model),
            ("d_latent", self.d_latent),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.lookback < 2 {
            return Err(Error::Config("lookback must be at least 2".into()));
        }
        if self.pattern.is_empty() || !self.pattern.chars().all(|c| c == 'm' || c == 's') {
            return Err(Error::Config(format!(
                "block pattern {:?} must be a non-empty string of 'm' and 's'",
                self.pattern
            )));
        }
        if self.use_decomposition {
            if self.kernel % 2 == 0 {
                return Err(Error::Config(format!("trend kernel {} must be odd", self.kernel)));
            }
            if self.kernel > self.lookback {
                return Err(Error::Config(format!(
                    "trend kernel {} exceeds lookback {}",
                    self.kernel, self.lookback
                )));
            }
        }
        self.geometry().map(|_| ())
    }
}
