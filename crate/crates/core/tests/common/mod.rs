#![allow(dead_code)]

use stoxlstm::dataio::synthetic::sine;
use stoxlstm::numerics::Tensor;
use stoxlstm::ModelConfig;

/// d_model 4, d_latent 2, N = 3 (four steps), both cell kinds.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        lookback: 16,
        horizon: 8,
        patch_size: 8,
        stride: 8,
        d_model: 4,
        d_latent: 2,
        pattern: "ms".into(),
        kernel: 5,
        ..ModelConfig::default()
    }
}

/// `[channels×len]` noisy sines with channel-specific phase and period.
pub fn sines(channels: usize, len: usize, seed: u64) -> Tensor {
    let data = (0..channels)
        .flat_map(|c| {
            let s = sine(len + 3 * c, 12.0 + 2.0 * c as f64, 1.0 + 0.3 * c as f64, 0.05, seed + c as u64);
            s[3 * c..].to_vec()
        })
        .collect();
    Tensor::new(vec![channels, len], data).unwrap()
}

pub fn bits(t: &Tensor) -> Vec<u64> {
    t.data().iter().map(|v| v.to_bits()).collect()
}
