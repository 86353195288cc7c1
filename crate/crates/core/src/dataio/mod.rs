//! Dataset ingestion, split bookkeeping, sliding windows and result files.

mod export;
pub mod synthetic;

pub use export::{export_forecast, export_latents, quantile, write_atomic, write_matrix_csv};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::preprocess::mean_std;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub path: PathBuf,
    /// Column ignored for modeling; `None` when the file has no timestamp.
    #[serde(default)]
    pub date_column: Option<String>,
    /// Channels to load, in order. Empty means every non-date column.
    #[serde(default)]
    pub value_columns: Vec<String>,
    /// Train, validation and test lengths in rows.
    pub splits: [usize; 3],
    #[serde(default)]
    pub frequency: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub columns: Vec<String>,
    /// Raw values `[C×rows]`.
    pub data: Tensor,
    pub splits: [usize; 3],
    /// Per-channel mean and population std over the training rows.
    pub train_stats: Vec<(f64, f64)>,
}

/// Reads a headed CSV into channel-major form.
pub fn load_csv(spec: &DatasetSpec) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(&spec.path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", spec.path.display())))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Data(format!("{}: unreadable header: {e}", spec.path.display())))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("column {name:?} not found in {}", spec.path.display())))
    };
    let date_idx = spec.date_column.as_deref().map(find).transpose()?;
    let (columns, indices): (Vec<String>, Vec<usize>) = if spec.value_columns.is_empty() {
        headers
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != date_idx)
            .map(|(i, h)| (h.clone(), i))
            .unzip()
    } else {
        let idx = spec.value_columns.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;
        (spec.value_columns.clone(), idx)
    };
    if columns.is_empty() {
        return Err(Error::Data("no value columns".into()));
    }

    let mut channels: Vec<Vec<f64>> = vec![Vec::new(); columns.len()];
    for (r, record) in reader.records().enumerate() {
        let line = r + 2;
        let record = record.map_err(|e| Error::Data(format!("{}: line {line}: {e}", spec.path.display())))?;
        for (k, &i) in indices.iter().enumerate() {
            let cell = record.get(i).unwrap_or("").trim();
            let v: f64 = cell.parse().map_err(|_| {
                Error::Data(format!(
                    "line {line}, column {:?}: cannot parse {cell:?} as a number",
                    columns[k]
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::Data(format!(
                    "line {line}, column {:?}: non-finite value {cell:?}",
                    columns[k]
                )));
            }
            channels[k].push(v);
        }
    }
    let rows = channels[0].len();
    let [train, val, test] = spec.splits;
    if train + val + test > rows {
        return Err(Error::Data(format!(
            "splits {train}+{val}+{test} exceed the {rows} rows of {}",
            spec.path.display()
        )));
    }
    if train < 2 {
        return Err(Error::Data("training split needs at least 2 rows".into()));
    }
    let train_stats = channels.iter().map(|c| mean_std(&c[..train])).collect();
    let data = Tensor::new(vec![columns.len(), rows], channels.concat())?;
    Ok(Dataset {
        columns,
        data,
        splits: spec.splits,
        train_stats,
    })
}

impl Dataset {
    pub fn channels(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn rows(&self) -> usize {
        self.data.shape()[1]
    }

    /// Keeps the first `rows` rows.
    pub fn truncate(&mut self, rows: usize) -> Result<()> {
        if rows > self.rows() || self.splits.iter().sum::<usize>() > rows {
            return Err(Error::Data(format!("cannot truncate to {rows} rows")));
        }
        let data: Vec<f64> = (0..self.channels()).flat_map(|c| self.data.row(c)[..rows].to_vec()).collect();
        self.data = Tensor::new(vec![self.channels(), rows], data)?;
        Ok(())
    }

    /// Values z-scored per channel with the training statistics.
    pub fn normalized(&self) -> Tensor {
        let mut out = self.data.clone();
        let rows = self.rows();
        for (c, &(mean, std)) in self.train_stats.iter().enumerate() {
            let std = if std < crate::preprocess::DEGENERATE_STD { 1.0 } else { std };
            for v in &mut out.data_mut()[c * rows..(c + 1) * rows] {
                *v = (*v - mean) / std;
            }
        }
        out
    }

    /// Row range `[first history row, end)` of a split. Validation and test
    /// histories reach `lookback` rows back into the preceding split.
    pub fn split_range(&self, split: Split, lookback: usize) -> (usize, usize) {
        let [train, val, test] = self.splits;
        match split {
            Split::Train => (0, train),
            Split::Val => (train.saturating_sub(lookback), train + val),
            Split::Test => ((train + val).saturating_sub(lookback), train + val + test),
        }
    }
}

/// Sliding windows of length `L+T` over a channel-major series.
#[derive(Debug, Clone)]
pub struct WindowSet<'a> {
    pub data: &'a Tensor,
    pub starts: Vec<usize>,
    pub lookback: usize,
    pub horizon: usize,
}

impl<'a> WindowSet<'a> {
    /// Windows starting every `stride` rows inside `[begin, end)`.
    pub fn new(data: &'a Tensor, range: (usize, usize), lookback: usize, horizon: usize, stride: usize) -> Self {
        let len = lookback + horizon;
        let (begin, end) = range;
        let starts = if end >= begin + len && stride > 0 {
            (begin..=end - len).step_by(stride).collect()
        } else {
            Vec::new()
        };
        Self {
            data,
            starts,
            lookback,
            horizon,
        }
    }

    pub fn for_split(data: &'a Tensor, dataset: &Dataset, split: Split, lookback: usize, horizon: usize, stride: usize) -> Self {
        Self::new(data, dataset.split_range(split, lookback), lookback, horizon, stride)
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[0]
    }

    /// Number of (window, channel) sequences.
    pub fn len(&self) -> usize {
        self.starts.len() * self.channels()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Sequence `i` as `(start, channel)`; channels vary fastest.
    pub fn id(&self, i: usize) -> (usize, usize) {
        let c = self.channels();
        (self.starts[i / c], i % c)
    }

    /// Full `L+T` window of sequence `i`.
    pub fn window(&self, i: usize) -> &'a [f64] {
        let (s, c) = self.id(i);
        &self.data.row(c)[s..s + self.lookback + self.horizon]
    }

    pub fn history(&self, i: usize) -> &'a [f64] {
        &self.window(i)[..self.lookback]
    }

    pub fn future(&self, i: usize) -> &'a [f64] {
        &self.window(i)[self.lookback..]
    }
}

/// Reads a CSV matrix written by [`write_matrix_csv`] or the forecast export.
pub fn read_numeric_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        rows.push(
            rec.iter()
                .map(|c| c.parse::<f64>().map_err(|e| Error::Data(format!("{}: {e}", path.display()))))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    Ok((headers, rows))
}
