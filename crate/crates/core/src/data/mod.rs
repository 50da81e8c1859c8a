//! Multichannel sensor series: ingestion, resampling, chronological
//! splitting, normalization and windowing.

mod synth;
mod window;

pub use synth::{synth_gait, synth_gait_with, SynthConfig};
pub use window::{collate, make_windows, time_marks, Window, WindowSpec, TIME_FEATURES};

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column layout of an input CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CsvSchema {
    pub time_column: String,
    pub target: String,
    /// Feature subset; `None` keeps every non-time column.
    pub features: Option<Vec<String>>,
    /// Whether the target channel is also fed to the model as an input.
    pub target_as_input: bool,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            time_column: "time_ms".into(),
            target: "knee_angle".into(),
            features: None,
            target_as_input: true,
        }
    }
}

/// Equal-length named channels on a strictly increasing millisecond grid.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesTable {
    time_ms: Vec<f64>,
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
    target: usize,
    target_as_input: bool,
    dropped_rows: usize,
}

impl SeriesTable {
    pub fn new(
        time_ms: Vec<f64>,
        names: Vec<String>,
        columns: Vec<Vec<f64>>,
        target: &str,
    ) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(Error::Data(format!(
                "{} channel names for {} columns",
                names.len(),
                columns.len()
            )));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = names.iter().find(|n| !seen.insert(n.as_str())) {
            return Err(Error::Data(format!("duplicate channel '{dup}'")));
        }
        let target = names
            .iter()
            .position(|n| n == target)
            .ok_or_else(|| Error::Data(format!("target channel '{target}' not found")))?;
        if let Some((i, c)) = columns.iter().enumerate().find(|(_, c)| c.len() != time_ms.len()) {
            return Err(Error::Data(format!(
                "channel '{}' has {} samples, time axis has {}",
                names[i],
                c.len(),
                time_ms.len()
            )));
        }
        if columns.iter().flatten().chain(&time_ms).any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite sample in table".into()));
        }
        if let Some(i) = (1..time_ms.len()).find(|&i| time_ms[i] <= time_ms[i - 1]) {
            return Err(Error::Data(format!(
                "timestamps not strictly increasing at row {i}: {} after {}",
                time_ms[i],
                time_ms[i - 1]
            )));
        }
        Ok(SeriesTable {
            time_ms,
            names,
            columns,
            target,
            target_as_input: true,
            dropped_rows: 0,
        })
    }

    pub fn with_target_as_input(mut self, yes: bool) -> Self {
        self.target_as_input = yes;
        self
    }

    pub fn len(&self) -> usize {
        self.time_ms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time_ms.is_empty()
    }

    pub fn time_ms(&self) -> &[f64] {
        &self.time_ms
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn channel(&self, name: &str) -> Option<&[f64]> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(&self.columns[i])
    }

    pub fn target_name(&self) -> &str {
        &self.names[self.target]
    }

    pub fn target(&self) -> &[f64] {
        &self.columns[self.target]
    }

    /// Rows with a NaN cell dropped during ingestion.
    pub fn dropped_rows(&self) -> usize {
        self.dropped_rows
    }

    /// Column indices fed to the model: every non-target channel in table
    /// order, then the target when it is an input.
    pub fn input_indices(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.columns.len()).filter(|&i| i != self.target).collect();
        if self.target_as_input {
            idx.push(self.target);
        }
        idx
    }

    pub fn input_channels(&self) -> usize {
        self.columns.len() - usize::from(!self.target_as_input)
    }

    /// Rows `[from, to)`.
    pub fn slice(&self, from: usize, to: usize) -> SeriesTable {
        SeriesTable {
            time_ms: self.time_ms[from..to].to_vec(),
            names: self.names.clone(),
            columns: self.columns.iter().map(|c| c[from..to].to_vec()).collect(),
            target: self.target,
            target_as_input: self.target_as_input,
            dropped_rows: 0,
        }
    }

    fn with_columns(&self, names: Vec<String>, columns: Vec<Vec<f64>>, time_ms: Vec<f64>) -> Self {
        let target = names.iter().position(|n| n == self.target_name()).expect("target kept");
        SeriesTable {
            time_ms,
            names,
            columns,
            target,
            target_as_input: self.target_as_input,
            dropped_rows: self.dropped_rows,
        }
    }
}

/// Reads a headered CSV. Rows containing a NaN cell are dropped and counted;
/// any other unparseable cell is an error naming the file and line.
pub fn ingest_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<SeriesTable> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::file(path, e))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::file(path, e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let find = |name: &str| header.iter().position(|h| h == name);
    let time_col = find(&schema.time_column).ok_or_else(|| {
        Error::file(path, format!("missing time column '{}'", schema.time_column))
    })?;
    let target_col = find(&schema.target)
        .ok_or_else(|| Error::file(path, format!("missing target channel '{}'", schema.target)))?;

    let mut selected: Vec<usize> = match &schema.features {
        Some(features) => features
            .iter()
            .map(|f| find(f).ok_or_else(|| Error::file(path, format!("missing feature '{f}'"))))
            .collect::<Result<_>>()?,
        None => (0..header.len()).filter(|&i| i != time_col).collect(),
    };
    selected.retain(|&i| i != time_col);
    if !selected.contains(&target_col) {
        selected.push(target_col);
    }

    let mut time_ms = Vec::new();
    let mut columns = vec![Vec::new(); selected.len()];
    let mut dropped = 0;
    for record in reader.records() {
        let record = record.map_err(|e| Error::file(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let parse = |col: usize| -> Result<f64> {
            let cell = record.get(col).unwrap_or("").trim();
            cell.parse::<f64>().map_err(|_| {
                Error::file(path, format!("line {line}: cannot parse '{cell}' in column '{}'", header[col]))
            })
        };
        let t = parse(time_col)?;
        let row = selected.iter().map(|&c| parse(c)).collect::<Result<Vec<_>>>()?;
        if t.is_nan() || row.iter().any(|v| v.is_nan()) {
            dropped += 1;
            continue;
        }
        if let Some(&prev) = time_ms.last() {
            if t <= prev {
                return Err(Error::file(
                    path,
                    format!("line {line}: timestamp {t} does not increase (previous {prev})"),
                ));
            }
        }
        time_ms.push(t);
        for (c, v) in columns.iter_mut().zip(row) {
            c.push(v);
        }
    }
    if dropped > 0 {
        log::warn!("{}: dropped {dropped} rows containing NaN", path.display());
    }
    let names = selected.iter().map(|&i| header[i].clone()).collect();
    let mut table =
        SeriesTable::new(time_ms, names, columns, &schema.target).map_err(|e| Error::file(path, e))?;
    table.dropped_rows = dropped;
    Ok(table.with_target_as_input(schema.target_as_input))
}

fn check_grid(table: &SeriesTable, period: f64) -> Result<()> {
    let t = table.time_ms();
    for i in 1..t.len() {
        if ((t[i] - t[i - 1]) - period).abs() > 1e-9 * period.max(1.0) {
            return Err(Error::Data(format!(
                "sampling period {} ms at row {i} does not match {period} ms",
                t[i] - t[i - 1]
            )));
        }
    }
    Ok(())
}

fn period_ratio(coarse: f64, fine: f64) -> Result<usize> {
    if !(coarse > 0.0 && fine > 0.0) {
        return Err(Error::Data("sampling periods must be positive".into()));
    }
    let r = coarse / fine;
    if (r - r.round()).abs() > 1e-9 || r.round() < 1.0 {
        return Err(Error::Data(format!("{coarse} ms is not a multiple of {fine} ms")));
    }
    Ok(r.round() as usize)
}

/// Piecewise-linear resampling onto a grid `ratio` times finer. Original
/// samples are kept bit-for-bit at coincident timestamps.
pub fn upsample_linear(table: &SeriesTable, from_period: f64, to_period: f64) -> Result<SeriesTable> {
    let ratio = period_ratio(from_period, to_period)?;
    check_grid(table, from_period)?;
    let n = table.len();
    if n == 0 {
        return Ok(table.clone());
    }
    let out_len = (n - 1) * ratio + 1;
    let t0 = table.time_ms[0];
    let time_ms = (0..out_len)
        .map(|j| if j % ratio == 0 { table.time_ms[j / ratio] } else { t0 + j as f64 * to_period })
        .collect();
    let columns = table
        .columns
        .iter()
        .map(|c| {
            (0..out_len)
                .map(|j| {
                    let (i, r) = (j / ratio, j % ratio);
                    if r == 0 {
                        c[i]
                    } else {
                        let f = r as f64 / ratio as f64;
                        c[i] + (c[i + 1] - c[i]) * f
                    }
                })
                .collect()
        })
        .collect();
    Ok(table.with_columns(table.names.clone(), columns, time_ms))
}

/// Keeps every sample whose index is a multiple of `to_period / from_period`.
pub fn downsample(table: &SeriesTable, from_period: f64, to_period: f64) -> Result<SeriesTable> {
    let ratio = period_ratio(to_period, from_period)?;
    check_grid(table, from_period)?;
    let pick = |v: &[f64]| v.iter().step_by(ratio).copied().collect::<Vec<_>>();
    let columns = table.columns.iter().map(|c| pick(c)).collect();
    Ok(table.with_columns(table.names.clone(), columns, pick(&table.time_ms)))
}

/// Chronological split: the first `round(len * ratio)` rows train, the rest
/// test. Each side must hold at least `min_rows` rows.
pub fn split_train_test(
    table: &SeriesTable,
    ratio: f64,
    min_rows: usize,
) -> Result<(SeriesTable, SeriesTable)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio {ratio} not in (0, 1)")));
    }
    let n = table.len();
    let cut = (n as f64 * ratio).round() as usize;
    if cut < min_rows.max(1) || n - cut < min_rows.max(1) {
        return Err(Error::Data(format!(
            "{n} rows split at {cut} leaves fewer than {min_rows} rows on one side"
        )));
    }
    Ok((table.slice(0, cut), table.slice(cut, n)))
}

/// Per-channel mean and population standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub names: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Zero-variance channels excluded from the normalized tables.
    pub dropped: Vec<String>,
    pub target: String,
}

impl NormStats {
    fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Maps a normalized target value back to its original units.
    pub fn denormalize_target(&self, v: f64) -> f64 {
        let i = self.index(&self.target).expect("target has stats");
        v * self.std[i] + self.mean[i]
    }

    pub fn target_std(&self) -> f64 {
        self.std[self.index(&self.target).expect("target has stats")]
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Fits normalization statistics. Constant channels are dropped with a
/// warning; a constant target is an error.
pub fn fit_normalize(train: &SeriesTable) -> Result<NormStats> {
    if train.is_empty() {
        return Err(Error::Data("cannot fit normalization on an empty table".into()));
    }
    let mut stats = NormStats {
        names: Vec::new(),
        mean: Vec::new(),
        std: Vec::new(),
        dropped: Vec::new(),
        target: train.target_name().to_string(),
    };
    for (name, col) in train.names.iter().zip(&train.columns) {
        let (mean, std) = mean_std(col);
        if std <= 1e-12 * mean.abs().max(1.0) {
            if name == train.target_name() {
                return Err(Error::Data(format!("target channel '{name}' has zero variance")));
            }
            log::warn!("dropping zero-variance channel '{name}'");
            stats.dropped.push(name.clone());
            continue;
        }
        stats.names.push(name.clone());
        stats.mean.push(mean);
        stats.std.push(std);
    }
    Ok(stats)
}

/// Standardizes every channel that has stats; dropped channels are removed.
pub fn apply_normalize(table: &SeriesTable, stats: &NormStats) -> Result<SeriesTable> {
    let mut names = Vec::with_capacity(stats.names.len());
    let mut columns = Vec::with_capacity(stats.names.len());
    for (i, name) in stats.names.iter().enumerate() {
        let col = table
            .channel(name)
            .ok_or_else(|| Error::Data(format!("channel '{name}' missing from table")))?;
        names.push(name.clone());
        columns.push(col.iter().map(|v| (v - stats.mean[i]) / stats.std[i]).collect());
    }
    if table.target_name() != stats.target {
        return Err(Error::Data(format!(
            "table target '{}' differs from stats target '{}'",
            table.target_name(),
            stats.target
        )));
    }
    Ok(table.with_columns(names, columns, table.time_ms.clone()))
}
