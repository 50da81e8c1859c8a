//! End-to-end runs: data preparation, per-horizon training, evaluation,
//! report files and the run manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use crate::data::{
    apply_normalize, fit_normalize, ingest_csv, make_windows, split_train_test, synth_gait_with,
    upsample_linear, CsvSchema, NormStats, SeriesTable, SynthConfig, Window, WindowSpec,
};
use crate::error::{Error, Result};
use crate::model::{EmbeddingMode, Model, ModelConfig, ModelKind};
use crate::report::{
    bench, box_plot_svg, forecast_svg, BenchConfig, BenchReport, HorizonTable, MetricCell,
    MetricsReport, Series,
};
use crate::train::{evaluate, forecasts, train_repeated, write_history, TrainConfig, WindowSet};

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const METRICS_FILE: &str = "metrics.csv";
pub const IMPROVEMENT_FILE: &str = "improvement.csv";
pub const CELLS_FILE: &str = "cells.csv";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const BENCH_FILE: &str = "bench.csv";
pub const BOX_PLOT_FILE: &str = "mae_box.svg";

/// Forecast horizons evaluated when none are given, in steps.
pub const DEFAULT_HORIZONS: [usize; 6] = [1, 20, 40, 60, 80, 100];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synth {
        len: usize,
        seed: u64,
        #[serde(default)]
        generator: SynthConfig,
    },
    Csv {
        path: PathBuf,
        #[serde(default)]
        schema: CsvSchema,
        /// Sampling period of the file; other periods are linearly
        /// upsampled to 1 ms.
        #[serde(default = "one_ms")]
        period_ms: f64,
    },
}

fn one_ms() -> f64 {
    1.0
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synth {
            len: 20_000,
            seed: 7,
            generator: SynthConfig::default(),
        }
    }
}

/// Everything needed to reproduce a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSpec {
    pub models: Vec<ModelKind>,
    pub horizons: Vec<usize>,
    pub out: PathBuf,
    /// Fraction of rows in the chronological training partition.
    pub split_ratio: f64,
    pub train_stride: usize,
    pub eval_stride: usize,
    /// Test window drawn in each `forecast_<h>.svg`.
    pub plot_window: usize,
    /// Layer counts of the plain Transformer; its other dimensions follow `model`.
    pub vanilla_enc: usize,
    pub vanilla_dec: usize,
    pub data: DataSource,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub bench: BenchConfig,
}

impl Default for RunSpec {
    fn default() -> Self {
        let vanilla = ModelConfig::vanilla_transformer();
        RunSpec {
            models: vec![ModelKind::Temponet],
            horizons: DEFAULT_HORIZONS.to_vec(),
            out: PathBuf::from("runs"),
            split_ratio: 0.8,
            train_stride: 1,
            eval_stride: 1,
            plot_window: 0,
            vanilla_enc: vanilla.n_enc,
            vanilla_dec: vanilla.n_dec,
            data: DataSource::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

impl RunSpec {
    /// Sorts and deduplicates the horizon and model lists, then validates.
    pub fn normalize(mut self) -> Result<Self> {
        self.horizons.sort_unstable();
        self.horizons.dedup();
        let mut models = Vec::new();
        for m in self.models {
            if !models.contains(&m) {
                models.push(m);
            }
        }
        self.models = models;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.into()));
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return fail("horizons must be a non-empty list of positive steps");
        }
        if self.horizons.windows(2).any(|w| w[0] >= w[1]) {
            return fail("horizons must be sorted and free of duplicates");
        }
        if self.models.is_empty() {
            return fail("at least one model is required");
        }
        if self.train_stride == 0 || self.eval_stride == 0 {
            return fail("strides must be >= 1");
        }
        if self.vanilla_enc == 0 {
            return fail("the plain Transformer needs at least one encoder layer");
        }
        self.train.validate()?;
        Ok(())
    }

    /// Architecture of `kind` for one horizon and input width.
    pub fn model_config(&self, kind: ModelKind, horizon: usize, in_channels: usize) -> ModelConfig {
        let mut c = ModelConfig {
            horizon,
            in_channels,
            ..self.model.clone()
        };
        if kind == ModelKind::VanillaTransformer {
            c.n_enc = self.vanilla_enc;
            c.n_dec = self.vanilla_dec;
            c.n_temporal_blocks = 0;
            c.embedding_mode = EmbeddingMode::ValueTemporal;
        }
        c
    }

    pub fn window_spec(&self, horizon: usize, stride: usize) -> WindowSpec {
        WindowSpec {
            lookback: self.model.lookback,
            horizon,
            label_len: self.model.label_len,
            stride,
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize run spec: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        toml::from_str(&text).map_err(|e| Error::file(path, e))
    }

    pub fn checkpoint_path(&self, dir: &Path, kind: ModelKind, horizon: usize) -> PathBuf {
        dir.join(format!("{kind}_h{horizon}.ckpt"))
    }

    pub fn history_path(&self, kind: ModelKind, horizon: usize) -> PathBuf {
        self.out.join(format!("{kind}_h{horizon}_history.csv"))
    }
}

/// Normalized train and test partitions plus the training statistics.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub train: SeriesTable,
    pub test: SeriesTable,
    pub stats: NormStats,
}

pub fn load_source(source: &DataSource) -> Result<SeriesTable> {
    match source {
        DataSource::Synth { len, seed, generator } => synth_gait_with(*len, *seed, generator),
        DataSource::Csv { path, schema, period_ms } => {
            let table = ingest_csv(path, schema)?;
            if *period_ms == 1.0 {
                Ok(table)
            } else {
                upsample_linear(&table, *period_ms, 1.0)
            }
        }
    }
}

/// Loads the data, splits it chronologically and normalizes both parts with
/// statistics of the training part.
pub fn prepare(spec: &RunSpec) -> Result<Prepared> {
    let raw = load_source(&spec.data)?;
    let longest = spec.horizons.iter().copied().max().unwrap_or(1);
    let (train, test) = split_train_test(&raw, spec.split_ratio, spec.model.lookback + longest)?;
    let stats = fit_normalize(&train)?;
    Ok(Prepared {
        train: apply_normalize(&train, &stats)?,
        test: apply_normalize(&test, &stats)?,
        stats,
    })
}

/// One row of `train_log.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub model: String,
    pub horizon: usize,
    pub repetition: usize,
    pub best_epoch: usize,
    pub best_val_mae: f64,
    pub steps: usize,
    pub param_count: usize,
    /// Wall time of all repetitions together.
    pub train_ms: f64,
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::file(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::file(path, e))?;
    }
    w.flush().map_err(|e| Error::file(path, e))
}

pub fn read_train_log(path: impl AsRef<Path>) -> Result<Vec<TrainRecord>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::file(path, e))?;
    r.deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::file(path, e))
}

fn create_out(spec: &RunSpec) -> Result<()> {
    std::fs::create_dir_all(&spec.out).map_err(|e| Error::file(&spec.out, e))
}

pub fn write_manifest(spec: &RunSpec) -> Result<PathBuf> {
    create_out(spec)?;
    let path = spec.out.join(MANIFEST_FILE);
    std::fs::write(&path, spec.to_toml()?).map_err(|e| Error::file(&path, e))?;
    Ok(path)
}

fn windows(table: &SeriesTable, spec: &WindowSpec) -> Result<Vec<Window>> {
    let w = make_windows(table, spec)?;
    if w.is_empty() {
        return Err(Error::Data(format!(
            "{} rows are too few for a {}-step window",
            table.len(),
            spec.span()
        )));
    }
    Ok(w)
}

/// Trains every model at every horizon and writes checkpoints, histories,
/// the training log and the manifest under `spec.out`.
pub fn train_all(spec: &RunSpec, data: &Prepared) -> Result<Vec<TrainRecord>> {
    write_manifest(spec)?;
    let channels = data.train.input_channels();
    let mut log = Vec::new();
    for &h in &spec.horizons {
        let wspec = spec.window_spec(h, spec.train_stride);
        let all = windows(&data.train, &wspec)?;
        let set = WindowSet::new(&data.train, &all, wspec);
        let (train_set, val_set) = set.split_tail(spec.train.val_fraction);
        if train_set.is_empty() || val_set.is_empty() {
            return Err(Error::Data(format!(
                "horizon {h}: {} windows cannot be split into training and validation",
                set.len()
            )));
        }
        for &kind in &spec.models {
            let cfg = spec.model_config(kind, h, channels);
            info!("training {kind} at horizon {h} on {} windows", train_set.len());
            let reps = train_repeated(kind, &cfg, &train_set, &val_set, &spec.train)?;
            let best = &reps.best;
            best.best.save(spec.checkpoint_path(&spec.out, kind, h))?;
            write_history(spec.history_path(kind, h), &best.history)?;
            log.push(TrainRecord {
                model: kind.to_string(),
                horizon: h,
                repetition: reps.best_index,
                best_epoch: best.best_epoch,
                best_val_mae: best.best_val_mae,
                steps: best.steps,
                param_count: best.best.param_count(),
                train_ms: reps.runs.iter().map(|r| r.wall_ms).sum(),
            });
        }
    }
    write_csv(&spec.out.join(TRAIN_LOG_FILE), &log)?;
    Ok(log)
}

/// Rejects a checkpoint that cannot run on this data at this horizon.
pub fn check_compatible(model: &Model, kind: ModelKind, expected: &ModelConfig) -> Result<()> {
    let c = model.config();
    let mismatch = |what: &str, got: usize, want: usize| {
        Err(Error::Data(format!(
            "{kind} checkpoint has {what} {got} but the run needs {want}"
        )))
    };
    if model.kind() != kind {
        return Err(Error::Data(format!("checkpoint holds a {} model, not {kind}", model.kind())));
    }
    if c.in_channels != expected.in_channels {
        return mismatch("in_channels", c.in_channels, expected.in_channels);
    }
    if c.horizon != expected.horizon {
        return mismatch("horizon", c.horizon, expected.horizon);
    }
    if c.lookback != expected.lookback {
        return mismatch("lookback", c.lookback, expected.lookback);
    }
    if c.label_len != expected.label_len {
        return mismatch("label_len", c.label_len, expected.label_len);
    }
    Ok(())
}

/// Everything `cmd_eval` writes.
#[derive(Clone, Debug)]
pub struct EvalOutput {
    pub report: MetricsReport,
    pub mae: HorizonTable,
    pub improvement: Option<HorizonTable>,
    /// Per-window MAE of each model, pooled over horizons.
    pub window_mae: BTreeMap<String, Vec<f64>>,
    /// `forecast_<h>.svg` contents per horizon.
    pub plots: Vec<(usize, String)>,
}

fn load_model(spec: &RunSpec, dir: &Path, kind: ModelKind, cfg: &ModelConfig) -> Result<Option<Model>> {
    if kind == ModelKind::Persistence {
        return Model::new(kind, cfg.clone(), 0).map(Some);
    }
    let path = spec.checkpoint_path(dir, kind, cfg.horizon);
    if !path.exists() {
        return Ok(None);
    }
    let model = Model::load(&path)?;
    check_compatible(&model, kind, cfg).map_err(|e| Error::file(&path, e))?;
    Ok(Some(model))
}

/// Evaluates the checkpoints in `dir` on the test partition.
pub fn evaluate_all(spec: &RunSpec, data: &Prepared, dir: &Path) -> Result<EvalOutput> {
    let channels = data.test.input_channels();
    let train_log: Vec<TrainRecord> = read_train_log(dir.join(TRAIN_LOG_FILE)).unwrap_or_default();
    let mut cells = Vec::new();
    let mut window_mae: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut plots = Vec::new();
    for &h in &spec.horizons {
        let wspec = spec.window_spec(h, spec.eval_stride);
        let all = windows(&data.test, &wspec)?;
        let set = WindowSet::new(&data.test, &all, wspec);
        let pick = spec.plot_window.min(set.len() - 1);
        let one = set.batch(&[pick])?;
        let denorm = |v: &[f64]| v.iter().map(|&x| data.stats.denormalize_target(x)).collect::<Vec<_>>();
        let lookback = wspec.lookback;
        let mut series = vec![
            Series { name: "history".into(), start: 0, values: denorm(one.past_target.data()) },
            Series { name: "true".into(), start: lookback, values: denorm(one.target.data()) },
        ];
        for &kind in &spec.models {
            let cfg = spec.model_config(kind, h, channels);
            let Some(model) = load_model(spec, dir, kind, &cfg)? else {
                cells.push(MetricCell::failed(kind.to_string(), h, "no checkpoint"));
                continue;
            };
            let eval = match evaluate(&model, &set, &data.stats, spec.train.batch_size) {
                Ok(e) => e,
                Err(e) if e.is_numeric() => {
                    cells.push(MetricCell::failed(kind.to_string(), h, e.to_string()));
                    continue;
                }
                Err(e) => return Err(e),
            };
            let timing = bench(&model, &one, &spec.bench)?;
            let (pred, _) = forecasts(&model, &WindowSet::new(&data.test, &all[pick..=pick], wspec), &data.stats, 1)?;
            series.push(Series { name: kind.to_string(), start: lookback, values: pred[0].clone() });
            window_mae.entry(kind.to_string()).or_default().extend(&eval.window_mae);
            let train_ms = train_log
                .iter()
                .find(|r| r.model == kind.name() && r.horizon == h)
                .map(|r| r.train_ms);
            cells.push(MetricCell {
                model: kind.to_string(),
                horizon: h,
                mae: Some(eval.mae),
                mse: Some(eval.mse),
                param_count: Some(model.param_count()),
                train_ms,
                infer_mean_ms: Some(timing.mean_ms),
                infer_std_ms: Some(timing.std_ms),
                failure: None,
            });
        }
        plots.push((h, forecast_svg(&format!("test window {pick}, horizon {h}"), &series)?));
    }
    let report = MetricsReport { cells };
    let mae = report.mae_table();
    let reference = ModelKind::Temponet.name();
    let improvement = if spec.models.contains(&ModelKind::Temponet) {
        Some(mae.improvement_over(reference)?)
    } else {
        None
    };
    Ok(EvalOutput {
        report,
        mae,
        improvement,
        window_mae,
        plots,
    })
}

/// Writes the tables and figures of an evaluation under `spec.out`.
pub fn write_eval(spec: &RunSpec, out: &EvalOutput) -> Result<()> {
    create_out(spec)?;
    out.mae.save(spec.out.join(METRICS_FILE))?;
    out.report.save(spec.out.join(CELLS_FILE))?;
    if let Some(imp) = &out.improvement {
        imp.save(spec.out.join(IMPROVEMENT_FILE))?;
    }
    for (h, svg) in &out.plots {
        let path = spec.out.join(format!("forecast_{h}.svg"));
        std::fs::write(&path, svg).map_err(|e| Error::file(&path, e))?;
    }
    let groups: Vec<(String, Vec<f64>)> = out.window_mae.clone().into_iter().collect();
    if !groups.is_empty() {
        let path = spec.out.join(BOX_PLOT_FILE);
        let svg = box_plot_svg("per-window MAE", &groups)?;
        std::fs::write(&path, svg).map_err(|e| Error::file(&path, e))?;
    }
    Ok(())
}

/// Times a freshly initialized model of every kind at every horizon on the
/// first test window, or the checkpoints in `dir` when given.
pub fn bench_all(spec: &RunSpec, data: &Prepared, dir: Option<&Path>) -> Result<Vec<BenchReport>> {
    let channels = data.test.input_channels();
    let mut out = Vec::new();
    for &h in &spec.horizons {
        let wspec = spec.window_spec(h, spec.eval_stride);
        let all = windows(&data.test, &wspec)?;
        let one = WindowSet::new(&data.test, &all[..1], wspec).batch(&[0])?;
        for &kind in &spec.models {
            let cfg = spec.model_config(kind, h, channels);
            let model = match dir {
                Some(d) => load_model(spec, d, kind, &cfg)?.ok_or_else(|| {
                    Error::file(spec.checkpoint_path(d, kind, h), "checkpoint not found")
                })?,
                None => Model::new(kind, cfg, spec.train.seed)?,
            };
            out.push(bench(&model, &one, &spec.bench)?);
        }
    }
    Ok(out)
}

pub fn write_bench(spec: &RunSpec, rows: &[BenchReport]) -> Result<PathBuf> {
    create_out(spec)?;
    let path = spec.out.join(BENCH_FILE);
    write_csv(&path, rows)?;
    Ok(path)
}
