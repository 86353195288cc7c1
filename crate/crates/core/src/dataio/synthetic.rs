//! Deterministic synthetic series for fixtures and smoke tests.

use std::fmt::Write as _;
use std::path::Path;

use chrono::{Duration, NaiveDate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::export::write_atomic;
use crate::error::Result;

/// `amplitude·sin(2πt/period) + N(0, noise_sd²)`.
pub fn sine(len: usize, period: f64, amplitude: f64, noise_sd: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_sd.max(0.0)).expect("finite standard deviation");
    (0..len)
        .map(|t| amplitude * (2.0 * std::f64::consts::PI * t as f64 / period).sin() + noise.sample(&mut rng))
        .collect()
}

/// Column names of the electricity-transformer hourly format.
pub const ETT_COLUMNS: [&str; 7] = ["HUFL", "HULL", "MUFL", "MULL", "LUFL", "LULL", "OT"];

/// Hourly transformer-load-like table: daily and weekly cycles, slowly
/// drifting levels and persistent AR(1) disturbances shared partly across
/// channels. Returns one vector per column of [`ETT_COLUMNS`].
pub fn ett_like(rows: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let tau = 2.0 * std::f64::consts::PI;
    // (level, daily amplitude, daily phase, weekly amplitude, ar noise sd)
    let shape: [(f64, f64, f64, f64, f64); 7] = [
        (8.0, 2.2, 0.3, 0.8, 0.45),
        (2.5, 0.9, 1.1, 0.3, 0.25),
        (5.5, 1.8, 0.5, 0.6, 0.40),
        (1.4, 0.7, 1.3, 0.2, 0.20),
        (3.0, 1.0, 2.0, 0.3, 0.20),
        (0.9, 0.4, 2.4, 0.1, 0.10),
        (15.0, 2.5, 3.5, 1.2, 0.35),
    ];
    let mut common = 0.0;
    let mut drift = [0.0f64; 7];
    let mut ar = [0.0f64; 7];
    let mut out = vec![Vec::with_capacity(rows); 7];
    for t in 0..rows {
        common = 0.97 * common + 0.3 * std_normal.sample(&mut rng);
        let hour = t as f64;
        for (k, &(level, da, dp, wa, sd)) in shape.iter().enumerate() {
            drift[k] = 0.999 * drift[k] + 0.02 * level.sqrt() * std_normal.sample(&mut rng);
            ar[k] = 0.9 * ar[k] + sd * std_normal.sample(&mut rng);
            let daily = da * (tau * hour / 24.0 + dp).sin() + 0.35 * da * (2.0 * tau * hour / 24.0 + 2.0 * dp).sin();
            let weekly = wa * (tau * hour / 168.0 + dp).sin();
            let coupling = if k == 6 { 0.5 } else { 1.0 };
            let v = level + drift[k] + daily + weekly + ar[k] + coupling * common * da / 2.0;
            out[k].push((v * 1000.0).round() / 1000.0);
        }
    }
    out
}

/// Writes [`ett_like`] as a CSV with an hourly `date` column.
pub fn write_ett_like_csv(path: &Path, rows: usize, seed: u64) -> Result<()> {
    let cols = ett_like(rows, seed);
    let start = NaiveDate::from_ymd_opt(2016, 7, 1)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .expect("valid start date");
    let mut csv = String::from("date");
    for c in ETT_COLUMNS {
        csv.push(',');
        csv.push_str(c);
    }
    csv.push('\n');
    for t in 0..rows {
        let ts = start + Duration::hours(t as i64);
        let _ = write!(csv, "{}", ts.format("%Y-%m-%d %H:%M:%S"));
        for col in &cols {
            let _ = write!(csv, ",{:.3}", col[t]);
        }
        csv.push('\n');
    }
    write_atomic(path, csv.as_bytes())
}

/// Writes a single-channel CSV (`value` column, no date).
pub fn write_series_csv(path: &Path, name: &str, values: &[f64]) -> Result<()> {
    let mut csv = format!("{name}\n");
    for v in values {
        let _ = writeln!(csv, "{v:.16e}");
    }
    write_atomic(path, csv.as_bytes())
}
