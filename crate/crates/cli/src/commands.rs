use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use anyhow::Context;
use serde::Serialize;
use serde_json::json;
use stoxlstm::dataio::{export_forecast, export_latents, load_csv, write_atomic, Dataset, Split, WindowSet};
use stoxlstm::metrics::{crps_multi, point_metrics, seasonal_naive, EvalReport};
use stoxlstm::model::{elbo_objective, LossSettings, TrainBatch};
use stoxlstm::numerics::{Tape, Tensor};
use stoxlstm::trainer::checkpoint::{load_model, save_model};
use stoxlstm::trainer::{forecast_mse, predict_windows, train, EpochRecord};
use stoxlstm::{noise, Error, ModelConfig, StoxModel};

use crate::config::{echo, Resolved, RunConfig};

fn load_dataset(run: &RunConfig) -> anyhow::Result<(Dataset, Tensor)> {
    let mut ds = load_csv(&run.data.spec()?)?;
    if run.data.rows > 0 {
        ds.truncate(run.data.rows)?;
    }
    let norm = ds.normalized();
    Ok((ds, norm))
}

/// Loads the configured checkpoint; an explicitly configured architecture
/// must match the stored one.
fn load_checked(r: &Resolved) -> anyhow::Result<StoxModel> {
    let path = r.run.checkpoint_path();
    let (model, _) = load_model(&path).with_context(|| format!("loading {}", path.display()))?;
    if r.model_explicit && model.config() != &r.run.model {
        return Err(Error::Config(format!(
            "checkpoint {} was trained with {:?}, configuration asks for {:?}",
            path.display(),
            model.config(),
            r.run.model
        ))
        .into());
    }
    Ok(model)
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,lr,recon,kl_total,total,val_mse\n");
    for r in history {
        let _ = writeln!(
            out,
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            r.epoch, r.lr, r.train.recon, r.train.kl_total, r.train.total, r.val_mse
        );
    }
    out
}

pub fn run_train(r: &Resolved) -> anyhow::Result<()> {
    let run = &r.run;
    run.model.validate()?;
    let (ds, norm) = load_dataset(run)?;
    let (l, t) = (run.model.lookback, run.model.horizon);
    let train_ws = WindowSet::for_split(&norm, &ds, Split::Train, l, t, run.train.window_stride);
    let val_ws = WindowSet::for_split(&norm, &ds, Split::Val, l, t, 1);
    echo(run, &run.out_dir)?;

    let model = StoxModel::new(&run.model, run.train.seed)?;
    eprintln!(
        "training {} parameters on {} sequences ({} validation)",
        model.num_parameters(),
        train_ws.len(),
        val_ws.len()
    );
    let outcome = train(model, &train_ws, &val_ws, &run.train, |rec| {
        eprintln!(
            "epoch {:>4}  lr {:.2e}  recon {:.5}  kl {:.4}  loss {:.5}  val mse {:.5}",
            rec.epoch, rec.lr, rec.train.recon, rec.train.kl_total, rec.train.total, rec.val_mse
        );
    })?;
    let train_mse = forecast_mse(&outcome.model.generative, &train_ws, run.train.workers)?;
    let best_val = outcome.best_epoch.map(|e| outcome.history[e].val_mse);

    let ckpt = run.checkpoint_path();
    let meta = json!({
        "best_epoch": outcome.best_epoch,
        "columns": ds.columns,
        "train_stats": ds.train_stats,
    });
    save_model(&ckpt, &outcome.model, meta)?;
    write_atomic(&run.out_dir.join("history.csv"), history_csv(&outcome.history).as_bytes())?;
    write_json(
        &run.out_dir.join("train_summary.json"),
        &json!({
            "epochs_run": outcome.history.len(),
            "best_epoch": outcome.best_epoch,
            "best_val_mse": best_val,
            "train_mse": train_mse,
            "parameters": outcome.model.num_parameters(),
        }),
    )?;
    println!("train_mse {train_mse:.6e}");
    if let Some(v) = best_val {
        println!("best_val_mse {v:.6e}");
    }
    println!("checkpoint {}", ckpt.display());
    Ok(())
}

pub fn run_predict(r: &Resolved, origin: Option<usize>) -> anyhow::Result<()> {
    let run = &r.run;
    let model = load_checked(r)?;
    let cfg = model.config().clone();
    let (ds, norm) = load_dataset(run)?;
    let rows = ds.rows();
    let origin = origin.unwrap_or(rows);
    if origin < cfg.lookback || origin > rows {
        return Err(Error::Data(format!(
            "forecast origin {origin} needs {} history rows inside the {rows}-row file",
            cfg.lookback
        ))
        .into());
    }
    let c = ds.channels();
    let hist: Vec<f64> = (0..c)
        .flat_map(|ch| norm.row(ch)[origin - cfg.lookback..origin].to_vec())
        .collect();
    let fc = model
        .generative
        .forecast(&Tensor::new(vec![c, cfg.lookback], hist)?, run.train.seed, run.eval.n_samples)?;

    let restore = |t: &Tensor| -> anyhow::Result<Tensor> {
        let width = cfg.horizon;
        let data = t
            .data()
            .chunks(width.max(1))
            .enumerate()
            .flat_map(|(i, row)| {
                let (mean, std) = ds.train_stats[i % c];
                let std = if std < stoxlstm::preprocess::DEGENERATE_STD { 1.0 } else { std };
                row.iter().map(move |v| v * std + mean)
            })
            .collect();
        Ok(Tensor::new(t.shape().to_vec(), data)?)
    };
    let point = restore(&fc.point)?;
    let samples = restore(&fc.samples)?;
    let truth = (origin + cfg.horizon <= rows)
        .then(|| {
            let v = (0..c)
                .flat_map(|ch| ds.data.row(ch)[origin..origin + cfg.horizon].to_vec())
                .collect();
            Tensor::new(vec![c, cfg.horizon], v)
        })
        .transpose()?;
    echo(run, &run.out_dir)?;
    let files = export_forecast(&run.out_dir, &ds.columns, &point, &samples, truth.as_ref())?;
    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalOutput {
    sequences: usize,
    n_samples: usize,
    model: EvalReport,
    seasonal_naive: EvalReport,
    /// `1 − MSE(model) / MSE(seasonal naive)`.
    mse_improvement: f64,
}

fn report_row(name: &str, r: &EvalReport) -> String {
    let crps = r.crps.map(|v| format!("{v:.16e}")).unwrap_or_default();
    format!(
        "{name},{:.16e},{:.16e},{:.16e},{:.16e},{crps}\n",
        r.mae, r.mse, r.rmse, r.mape
    )
}

pub fn run_eval(r: &Resolved) -> anyhow::Result<()> {
    let run = &r.run;
    let model = load_checked(r)?;
    let cfg = model.config().clone();
    let (ds, norm) = load_dataset(run)?;
    let ws = WindowSet::for_split(&norm, &ds, Split::Test, cfg.lookback, cfg.horizon, run.eval.stride);
    if ws.is_empty() {
        return Err(Error::Data("test split has no complete windows".into()).into());
    }
    let n = ws.len();
    let t = cfg.horizon;
    let m = if run.eval.n_samples >= 2 { run.eval.n_samples } else { 0 };
    let (point, samples) = predict_windows(&model.generative, &ws, m, run.train.seed, run.train.workers)?;
    let y = Tensor::new(vec![n, t], (0..n).flat_map(|i| ws.future(i).to_vec()).collect())?;

    let mut report = point_metrics(&y, &point, run.eval.mape_epsilon)?;
    let ensemble = if m == 0 { point.reshape(&[1, n, t])? } else { samples };
    report.crps = Some(crps_multi(&ensemble, &y)?);

    let naive = (0..n)
        .map(|i| seasonal_naive(ws.history(i), t, run.eval.seasonal_period))
        .collect::<stoxlstm::Result<Vec<_>>>()?;
    let naive = Tensor::new(vec![n, t], naive.concat())?;
    let mut naive_report = point_metrics(&y, &naive, run.eval.mape_epsilon)?;
    naive_report.crps = Some(crps_multi(&naive.reshape(&[1, n, t])?, &y)?);

    let out = EvalOutput {
        sequences: n,
        n_samples: run.eval.n_samples,
        mse_improvement: 1.0 - report.mse / naive_report.mse,
        model: report,
        seasonal_naive: naive_report,
    };
    echo(run, &run.out_dir)?;
    write_json(&run.out_dir.join("eval.json"), &out)?;
    let csv = String::from("name,mae,mse,rmse,mape,crps\n")
        + &report_row("model", &out.model)
        + &report_row("seasonal_naive", &out.seasonal_naive);
    write_atomic(&run.out_dir.join("eval.csv"), csv.as_bytes())?;
    println!(
        "model          mse {:.6e}  mae {:.6e}  crps {:.6e}",
        out.model.mse,
        out.model.mae,
        out.model.crps.unwrap_or(f64::NAN)
    );
    println!(
        "seasonal naive mse {:.6e}  mae {:.6e}",
        out.seasonal_naive.mse, out.seasonal_naive.mae
    );
    println!("mse improvement {:.4}", out.mse_improvement);
    Ok(())
}

pub fn run_dump_latents(r: &Resolved) -> anyhow::Result<()> {
    let run = &r.run;
    let model = load_checked(r)?;
    let cfg = model.config().clone();
    let (ds, norm) = load_dataset(run)?;
    let ws = WindowSet::for_split(&norm, &ds, Split::Test, cfg.lookback, cfg.horizon, 1);
    let i = run.eval.window;
    if i >= ws.len() {
        return Err(Error::Data(format!("test split has {} sequences, asked for {i}", ws.len())).into());
    }
    let (start, ch) = ws.id(i);
    let key = noise::key(&[run.train.seed, start as u64, ch as u64]);
    let batch = TrainBatch::new(&model, &[ws.window(i)], Some(&[key]))?;
    let tape = Tape::new();
    let gb = model.generative.store().bind_frozen(&tape);
    let ib = model.inference.store().bind_frozen(&tape);
    let settings = LossSettings {
        beta: run.train.beta,
        kl_direction: run.train.kl_direction,
    };
    let out = elbo_objective(&model, &gb, &ib, &batch, settings)?;
    echo(run, &run.out_dir)?;
    let files = export_latents(&run.out_dir, &out.generative, &out.posterior, 0)?;
    write_json(
        &run.out_dir.join("latents.json"),
        &json!({ "start": start, "channel": ds.columns[ch], "report": out.report }),
    )?;
    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct BenchPoint {
    lookback: usize,
    horizon: usize,
    channels: usize,
    steps: usize,
    seconds: f64,
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (lx, ly): (Vec<f64>, Vec<f64>) = points.iter().map(|&(x, y)| (x.ln(), y.ln())).unzip();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

fn time_forward(cfg: &ModelConfig, channels: usize, seed: u64, repeats: usize) -> anyhow::Result<BenchPoint> {
    let model = StoxModel::new(cfg, seed)?;
    let data = noise::normals(&mut noise::stream(&[seed, channels as u64]), channels * cfg.lookback);
    let hist = Tensor::new(vec![channels, cfg.lookback], data)?;
    let mut best = f64::INFINITY;
    for _ in 0..repeats.max(1) {
        let t0 = Instant::now();
        let fc = model.generative.forecast(&hist, seed, 0)?;
        best = best.min(t0.elapsed().as_secs_f64());
        std::hint::black_box(fc);
    }
    Ok(BenchPoint {
        lookback: cfg.lookback,
        horizon: cfg.horizon,
        channels,
        steps: model.generative.geometry().num_patches(),
        seconds: best,
    })
}

pub fn run_bench(r: &Resolved) -> anyhow::Result<()> {
    let run = &r.run;
    let b = &run.bench;
    if b.lengths.len() < 2 || b.channels.len() < 2 {
        return Err(Error::Config("bench needs at least two lengths and two channel counts".into()).into());
    }
    let at = |len: usize| {
        let horizon = (len / 4).max(1);
        ModelConfig {
            lookback: len - horizon,
            horizon,
            kernel: run.model.kernel.min((len - horizon) | 1),
            ..run.model.clone()
        }
    };
    let base_channels = b.channels[0];
    let mut by_length = Vec::new();
    for &len in &b.lengths {
        let cfg = at(len);
        cfg.validate()?;
        let p = time_forward(&cfg, base_channels, run.train.seed, b.repeats)?;
        eprintln!("L+T {len:>6}  C {base_channels:>3}  steps {:>4}  {:.4e} s", p.steps, p.seconds);
        by_length.push(p);
    }
    let mut by_channels = Vec::new();
    for &c in &b.channels {
        let p = time_forward(&at(b.lengths[0]), c, run.train.seed, b.repeats)?;
        eprintln!("L+T {:>6}  C {c:>3}  {:.4e} s", b.lengths[0], p.seconds);
        by_channels.push(p);
    }
    let exponent_length = log_log_slope(
        &by_length
            .iter()
            .map(|p| ((p.lookback + p.horizon) as f64, p.seconds))
            .collect::<Vec<_>>(),
    );
    let exponent_channels =
        log_log_slope(&by_channels.iter().map(|p| (p.channels as f64, p.seconds)).collect::<Vec<_>>());

    echo(run, &run.out_dir)?;
    let mut csv = String::from("series,lookback,horizon,channels,steps,seconds\n");
    for (name, pts) in [("length", &by_length), ("channels", &by_channels)] {
        for p in pts {
            let _ = writeln!(
                csv,
                "{name},{},{},{},{},{:.6e}",
                p.lookback, p.horizon, p.channels, p.steps, p.seconds
            );
        }
    }
    write_atomic(&run.out_dir.join("bench.csv"), csv.as_bytes())?;
    write_json(
        &run.out_dir.join("bench.json"),
        &json!({
            "by_length": by_length,
            "by_channels": by_channels,
            "exponent_length": exponent_length,
            "exponent_channels": exponent_channels,
        }),
    )?;
    println!("exponent_length {exponent_length:.4}");
    println!("exponent_channels {exponent_channels:.4}");
    Ok(())
}
