//! Run configuration: a TOML file with `[data]`, `[model]`, `[train]`,
//! `[eval]` and `[bench]` tables, overridden by command-line flags.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use stoxlstm::dataio::DatasetSpec;
use stoxlstm::loss::KlDirection;
use stoxlstm::trainer::TrainConfig;
use stoxlstm::{Error, ModelConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Empty when not configured.
    pub path: PathBuf,
    /// Timestamp column to skip; empty when the file has none.
    pub date_column: String,
    pub value_columns: Vec<String>,
    pub splits: [usize; 3],
    /// Use only the first `rows` rows (0 keeps all).
    pub rows: usize,
    pub frequency: String,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            path: PathBuf::new(),
            date_column: String::new(),
            value_columns: Vec::new(),
            splits: [8640, 2880, 2880],
            rows: 0,
            frequency: String::new(),
        }
    }
}

impl DataSection {
    pub fn spec(&self) -> stoxlstm::Result<DatasetSpec> {
        if self.path.as_os_str().is_empty() {
            return Err(Error::Config("no dataset path (set [data] path or --data)".into()));
        }
        Ok(DatasetSpec {
            path: self.path.clone(),
            date_column: (!self.date_column.is_empty()).then(|| self.date_column.clone()),
            value_columns: self.value_columns.clone(),
            splits: self.splits,
            frequency: self.frequency.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Sampled forecasts per sequence. With 0 or 1 the point forecast is
    /// scored as a one-member ensemble.
    pub n_samples: usize,
    pub seasonal_period: usize,
    pub mape_epsilon: f64,
    /// Offset between consecutive test windows.
    pub stride: usize,
    /// Test sequence used by `dump-latents`.
    pub window: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            n_samples: 100,
            seasonal_period: 24,
            mape_epsilon: stoxlstm::metrics::MAPE_EPSILON,
            stride: 1,
            window: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    /// Values of `L+T`; the horizon is a quarter of each.
    pub lengths: Vec<usize>,
    /// Channel counts timed at the first length.
    pub channels: Vec<usize>,
    /// Timed repetitions per point; the minimum is reported.
    pub repeats: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            lengths: vec![96, 192, 384, 768],
            channels: vec![16, 32, 64],
            repeats: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    /// Checkpoint read by predict, eval and dump-latents. Empty means
    /// `<out_dir>/model.ckpt`.
    pub checkpoint: PathBuf,
    pub data: DataSection,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalSection,
    pub bench: BenchSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("out"),
            checkpoint: PathBuf::new(),
            data: DataSection::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalSection::default(),
            bench: BenchSection::default(),
        }
    }
}

impl RunConfig {
    pub fn checkpoint_path(&self) -> PathBuf {
        if self.checkpoint.as_os_str().is_empty() {
            self.out_dir.join("model.ckpt")
        } else {
            self.checkpoint.clone()
        }
    }
}

/// Flags shared by every subcommand. Each one, when given, replaces the
/// matching config-file value.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lookback: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Patch length P [default: 56]
    #[arg(long)]
    pub patch_size: Option<usize>,
    /// Patch stride S [default: 24]
    #[arg(long)]
    pub stride: Option<usize>,
    /// [default: 64]
    #[arg(long)]
    pub d_model: Option<usize>,
    /// [default: 16]
    #[arg(long)]
    pub d_latent: Option<usize>,
    /// Odd moving-average length of the trend filter [default: 25]
    #[arg(long)]
    pub kernel: Option<usize>,
    /// KL weight [default: 500]
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub kl_direction: Option<KlDirection>,
    #[arg(long)]
    pub n_samples: Option<usize>,
    /// Upper bound on worker threads.
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Dataset CSV.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub date_column: Option<String>,
    /// Train, validation and test rows, e.g. `2000,500,500`.
    #[arg(long, value_parser = parse_splits)]
    pub splits: Option<[usize; 3]>,
    /// Keep only the first N rows of the dataset.
    #[arg(long)]
    pub rows: Option<usize>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Offset between training windows.
    #[arg(long)]
    pub window_stride: Option<usize>,
    /// Propagate latent means instead of sampling.
    #[arg(long)]
    pub no_stochastic: bool,
    /// Skip the trend/seasonal split.
    #[arg(long)]
    pub no_decomposition: bool,
    /// Feed the series one value per step (P = S = 1).
    #[arg(long)]
    pub no_patching: bool,
}

fn parse_splits(s: &str) -> Result<[usize; 3], String> {
    let parts = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    parts
        .try_into()
        .map_err(|_| "expected three comma-separated row counts".to_string())
}

/// The effective configuration, plus whether the model architecture was
/// stated explicitly (in the file's `[model]` table or by a flag).
pub struct Resolved {
    pub run: RunConfig,
    pub model_explicit: bool,
}

fn read_config(path: &Path) -> anyhow::Result<(RunConfig, bool)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: toml::Table = text
        .parse()
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let explicit = value.contains_key("model");
    let run: RunConfig =
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    Ok((run, explicit))
}

impl Overrides {
    pub fn resolve(&self) -> anyhow::Result<Resolved> {
        let (mut run, mut model_explicit) = match &self.config {
            Some(p) => read_config(p)?,
            None => (RunConfig::default(), false),
        };
        let m = &mut run.model;
        for (flag, slot) in [
            (self.lookback, &mut m.lookback),
            (self.horizon, &mut m.horizon),
            (self.patch_size, &mut m.patch_size),
            (self.stride, &mut m.stride),
            (self.d_model, &mut m.d_model),
            (self.d_latent, &mut m.d_latent),
            (self.kernel, &mut m.kernel),
        ] {
            if let Some(v) = flag {
                *slot = v;
                model_explicit = true;
            }
        }
        for (flag, slot) in [
            (self.no_stochastic, &mut m.stochastic),
            (self.no_decomposition, &mut m.use_decomposition),
            (self.no_patching, &mut m.use_patching),
        ] {
            if flag {
                *slot = false;
                model_explicit = true;
            }
        }

        let t = &mut run.train;
        if let Some(v) = self.seed {
            t.seed = v;
        }
        if let Some(v) = self.beta {
            t.beta = v;
        }
        if let Some(v) = self.kl_direction {
            t.kl_direction = v;
        }
        if let Some(v) = self.workers {
            t.workers = v;
        }
        if let Some(v) = self.epochs {
            t.epochs = v;
        }
        if let Some(v) = self.lr {
            t.lr = v;
            t.lr_min = t.lr_min.min(v);
        }
        if let Some(v) = self.batch_size {
            t.batch_size = v;
        }
        if let Some(v) = self.patience {
            t.patience = v;
        }
        if let Some(v) = self.window_stride {
            t.window_stride = v;
        }
        if let Some(v) = self.n_samples {
            run.eval.n_samples = v;
        }
        if let Some(v) = &self.out_dir {
            run.out_dir = v.clone();
        }
        if let Some(v) = &self.checkpoint {
            run.checkpoint = v.clone();
        }
        if let Some(v) = &self.data {
            run.data.path = v.clone();
        }
        if let Some(v) = &self.date_column {
            run.data.date_column = v.clone();
        }
        if let Some(v) = &self.splits {
            run.data.splits = *v;
        }
        if let Some(v) = self.rows {
            run.data.rows = v;
        }
        run.train.validate()?;
        if run.eval.stride == 0 {
            return Err(Error::Config("eval stride must be positive".into()).into());
        }
        Ok(Resolved { run, model_explicit })
    }
}

/// Writes the effective configuration into `dir` as `config.toml`.
pub fn echo(run: &RunConfig, dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let text = toml::to_string(run).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))?;
    stoxlstm::dataio::write_atomic(&dir.join("config.toml"), text.as_bytes())?;
    Ok(())
}
