//! Point-forecast errors and the empirical CRPS.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Default stabilizer of the MAPE denominator.
pub const MAPE_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mae: f64,
    pub mse: f64,
    pub rmse: f64,
    pub mape: f64,
    pub crps: Option<f64>,
    pub epsilon: f64,
}

/// Mean over rows of per-row means. Shared by MAE and CRPS so that a
/// one-sample CRPS reproduces MAE bit for bit.
fn mean_of_row_means(rows: usize, cols: usize, mut term: impl FnMut(usize, usize) -> f64) -> f64 {
    let mut total = 0.0;
    for r in 0..rows {
        let mut s = 0.0;
        for c in 0..cols {
            s += term(r, c);
        }
        total += s / cols as f64;
    }
    total / rows as f64
}

fn check_pair(y: &Tensor, yhat: &Tensor) -> Result<(usize, usize)> {
    match (y.shape(), yhat.shape()) {
        ([c, t], [c2, t2]) if c == c2 && t == t2 && *c > 0 && *t > 0 => Ok((*c, *t)),
        (a, b) => Err(Error::Contract(format!(
            "metric inputs must be equal non-empty [C×T] shapes, got {a:?} and {b:?}"
        ))),
    }
}

/// MAE, MSE, RMSE and MAPE (in percent, denominator `|y|+ε`) per channel
/// over the horizon, averaged across channels. Rows of `y` are channels (or
/// any independent series).
pub fn point_metrics(y: &Tensor, yhat: &Tensor, epsilon: f64) -> Result<EvalReport> {
    let (c, t) = check_pair(y, yhat)?;
    if !(epsilon > 0.0) {
        return Err(Error::Config("MAPE epsilon must be positive".into()));
    }
    let err = |r: usize, s: usize| yhat.at(r, s) - y.at(r, s);
    let mae = mean_of_row_means(c, t, |r, s| err(r, s).abs());
    let mse = mean_of_row_means(c, t, |r, s| err(r, s).powi(2));
    let mape = 100.0 * mean_of_row_means(c, t, |r, s| err(r, s).abs() / (y.at(r, s).abs() + epsilon));
    Ok(EvalReport {
        mae,
        mse,
        rmse: mse.sqrt(),
        mape,
        crps: None,
        epsilon,
    })
}

/// Energy-form CRPS of each step, `mean|X−y| − ½·mean|X−X′|`.
fn crps_steps(samples: &Tensor, y: &[f64]) -> Result<Vec<f64>> {
    let (m, t) = match samples.shape() {
        [m, t] => (*m, *t),
        s => return Err(Error::Contract(format!("samples must be [M×T], got {s:?}"))),
    };
    if m == 0 {
        return Err(Error::Contract("CRPS needs at least one sample".into()));
    }
    if t != y.len() {
        return Err(Error::Contract(format!("{t} sample steps but {} observations", y.len())));
    }
    Ok((0..t)
        .map(|s| {
            let x = |i: usize| samples.at(i, s);
            let mut abs_err = 0.0;
            for i in 0..m {
                abs_err += (x(i) - y[s]).abs();
            }
            let mut spread = 0.0;
            for i in 0..m {
                for j in 0..m {
                    spread += (x(i) - x(j)).abs();
                }
            }
            abs_err / m as f64 - 0.5 * spread / (m * m) as f64
        })
        .collect())
}

/// CRPS of an `M`-member ensemble against `y`, averaged over the horizon.
pub fn crps_empirical(samples: &Tensor, y: &[f64]) -> Result<f64> {
    let steps = crps_steps(samples, y)?;
    Ok(mean_of_row_means(1, steps.len(), |_, s| steps[s]))
}

/// CRPS over several series: `samples` is `[M×C×T]`, `y` is `[C×T]`;
/// averaged over steps, then series.
pub fn crps_multi(samples: &Tensor, y: &Tensor) -> Result<f64> {
    let (m, c, t) = match samples.shape() {
        [m, c, t] => (*m, *c, *t),
        s => return Err(Error::Contract(format!("samples must be [M×C×T], got {s:?}"))),
    };
    if y.shape() != [c, t] || c == 0 || t == 0 {
        return Err(Error::Contract("CRPS targets must be [C×T] matching the samples".into()));
    }
    let per_series = (0..c)
        .map(|ch| {
            let data = (0..m).flat_map(|i| samples.data()[(i * c + ch) * t..(i * c + ch + 1) * t].to_vec()).collect();
            crps_steps(&Tensor::new(vec![m, t], data)?, y.row(ch))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_of_row_means(c, t, |r, s| per_series[r][s]))
}

/// Forecast repeating the last `period` observations of the history.
pub fn seasonal_naive(history: &[f64], horizon: usize, period: usize) -> Result<Vec<f64>> {
    if period == 0 || history.len() < period {
        return Err(Error::Config(format!(
            "seasonal period {period} needs at least that many history values (have {})",
            history.len()
        )));
    }
    let tail = &history[history.len() - period..];
    Ok((0..horizon).map(|h| tail[h % period]).collect())
}
