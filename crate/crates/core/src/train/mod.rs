//! Adam, the epoch loop with early stopping, seeded repetitions and
//! evaluation in the target's original units.

mod adam;
mod metrics;

pub use adam::{adam_step, AdamState, BETA1, BETA2, EPSILON};
pub use metrics::{evaluate, forecasts, Evaluation};

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::data::{collate, SeriesTable, Window, WindowSpec};
use crate::error::{Error, Result};
use crate::model::{ForecastBatch, Model, ModelConfig, ModelKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    Mse,
    Mae,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation MAE improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub repetitions: usize,
    pub loss: LossKind,
    /// Hard cap on optimizer steps across all epochs.
    pub max_steps: Option<usize>,
    /// Global gradient norm limit.
    pub grad_clip: Option<f64>,
    /// Tail fraction of the training partition held out for validation.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            batch_size: 32,
            max_epochs: 10,
            patience: 3,
            seed: 0,
            repetitions: 10,
            loss: LossKind::Mse,
            max_steps: None,
            grad_clip: None,
            val_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be > 0");
        }
        if self.batch_size == 0 || self.patience == 0 || self.repetitions == 0 {
            return fail("batch_size, patience and repetitions must be >= 1");
        }
        if matches!(self.grad_clip, Some(c) if !(c > 0.0)) {
            return fail("grad_clip must be > 0");
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return fail("val_fraction must be in [0, 1)");
        }
        Ok(())
    }
}

/// Windows over one table, collated on demand.
#[derive(Clone, Copy, Debug)]
pub struct WindowSet<'a> {
    pub table: &'a SeriesTable,
    pub windows: &'a [Window],
    pub spec: WindowSpec,
}

impl<'a> WindowSet<'a> {
    pub fn new(table: &'a SeriesTable, windows: &'a [Window], spec: WindowSpec) -> Self {
        WindowSet { table, windows, spec }
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn batch(&self, indices: &[usize]) -> Result<ForecastBatch> {
        let picked: Vec<Window> = indices.iter().map(|&i| self.windows[i]).collect();
        collate(self.table, &picked, &self.spec)
    }

    /// Consecutive batches of at most `size` windows, in order.
    pub fn batches(&self, size: usize) -> impl Iterator<Item = Result<ForecastBatch>> + '_ {
        let all: Vec<usize> = (0..self.len()).collect();
        let chunks: Vec<Vec<usize>> = all.chunks(size.max(1)).map(<[usize]>::to_vec).collect();
        chunks.into_iter().map(move |c| self.batch(&c))
    }

    /// Splits off the trailing `fraction` of windows, dropping the windows
    /// whose forecast span would overlap the held-out part.
    pub fn split_tail(&self, fraction: f64) -> (WindowSet<'a>, WindowSet<'a>) {
        let n = self.len();
        let n_val = ((n as f64) * fraction).round() as usize;
        if n_val == 0 || n_val >= n {
            return (*self, WindowSet { windows: &self.windows[n..], ..*self });
        }
        let val = &self.windows[n - n_val..];
        let first_val = val[0].start;
        let train_end = self.windows[..n - n_val]
            .iter()
            .position(|w| w.start + self.spec.span() > first_val)
            .unwrap_or(n - n_val);
        (
            WindowSet { windows: &self.windows[..train_end], ..*self },
            WindowSet { windows: val, ..*self },
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_mae: f64,
    pub wall_ms: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation MAE.
    pub best: Model,
    pub best_epoch: usize,
    pub best_val_mae: f64,
    pub history: Vec<EpochRecord>,
    pub steps: usize,
    pub wall_ms: f64,
}

fn batch_loss(
    model: &Model,
    g: &mut Graph,
    batch: &ForecastBatch,
    loss: LossKind,
) -> Result<(crate::autodiff::Var, Vec<crate::autodiff::Var>)> {
    let p = model.params().bind(g)?;
    let y = model.forward(g, &p, batch)?;
    let t = g.constant(batch.target.clone())?;
    let l = match loss {
        LossKind::Mse => g.mse(y, t)?,
        LossKind::Mae => g.mae(y, t)?,
    };
    Ok((l, p))
}

/// Mean loss and MAE over a window set, in normalized units.
pub fn validation_losses(model: &Model, set: &WindowSet, loss: LossKind, batch_size: usize) -> Result<(f64, f64)> {
    if set.is_empty() {
        return Err(Error::Data("empty validation set".into()));
    }
    let (mut sq, mut abs, mut n) = (0.0, 0.0, 0usize);
    for batch in set.batches(batch_size) {
        let batch = batch?;
        let pred = model.predict(&batch)?;
        for (p, t) in pred.data().iter().zip(batch.target.data()) {
            sq += (p - t).powi(2);
            abs += (p - t).abs();
        }
        n += pred.numel();
    }
    let (mse, mae) = (sq / n as f64, abs / n as f64);
    Ok((if loss == LossKind::Mse { mse } else { mae }, mae))
}

fn clip(grads: &mut [Vec<f64>], max_norm: f64) {
    let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
}

/// Trains `model` in place with Adam and returns the best parameters seen,
/// the initial parameters included.
pub fn train(model: &mut Model, train_set: &WindowSet, val_set: &WindowSet, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Data("training needs at least one training and one validation window".into()));
    }
    let started = Instant::now();
    let mut state = AdamState::new(model.params());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let (_, init_mae) = validation_losses(model, val_set, cfg.loss, cfg.batch_size)?;
    let mut best = model.clone();
    let (mut best_epoch, mut best_val_mae) = (0, init_mae);
    let mut history = Vec::new();
    let mut steps = 0usize;
    let mut stale = 0;

    'epochs: for epoch in 1..=cfg.max_epochs {
        let epoch_start = Instant::now();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut loss_n) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| steps >= m) {
                break;
            }
            let batch = train_set.batch(chunk)?;
            let mut g = if model.config().dropout > 0.0 {
                Graph::training(cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(steps as u64))
            } else {
                Graph::new()
            };
            let (loss, p) = batch_loss(model, &mut g, &batch, cfg.loss).map_err(|e| match e {
                Error::NonFinite { .. } => Error::Divergence { epoch, step: steps, loss: f64::NAN },
                e => e,
            })?;
            let value = g.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::Divergence { epoch, step: steps, loss: value });
            }
            g.backward(loss)?;
            let mut grads: Vec<Vec<f64>> =
                p.iter().map(|&v| g.grad(v).map(<[f64]>::to_vec).unwrap_or_default()).collect();
            if let Some(c) = cfg.grad_clip {
                clip(&mut grads, c);
            }
            adam_step(model.params_mut(), &grads, &mut state, cfg.learning_rate).map_err(|e| match e {
                Error::NonFinite { .. } => Error::Divergence { epoch, step: steps, loss: value },
                e => e,
            })?;
            steps += 1;
            loss_sum += value;
            loss_n += 1;
        }
        if loss_n == 0 {
            break 'epochs;
        }
        let (val_loss, val_mae) = validation_losses(model, val_set, cfg.loss, cfg.batch_size)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / loss_n as f64,
            val_loss,
            val_mae,
            wall_ms: epoch_start.elapsed().as_secs_f64() * 1e3,
        };
        log::info!(
            "epoch {epoch}: train {:.6} val {:.6} val_mae {:.6} ({:.0} ms)",
            record.train_loss,
            val_loss,
            val_mae,
            record.wall_ms
        );
        history.push(record);
        if val_mae < best_val_mae {
            best = model.clone();
            best_epoch = epoch;
            best_val_mae = val_mae;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                log::info!("early stop after epoch {epoch}");
                break;
            }
        }
    }
    Ok(TrainOutcome {
        best,
        best_epoch,
        best_val_mae,
        history,
        steps,
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}

#[derive(Clone, Debug)]
pub struct Repetitions {
    pub best: TrainOutcome,
    pub best_index: usize,
    pub runs: Vec<TrainOutcome>,
}

/// Trains `cfg.repetitions` fresh models with seeds `seed, seed + 1, ...`
/// and selects the one with the lowest validation MAE.
pub fn train_repeated(
    kind: ModelKind,
    config: &ModelConfig,
    train_set: &WindowSet,
    val_set: &WindowSet,
    cfg: &TrainConfig,
) -> Result<Repetitions> {
    cfg.validate()?;
    let mut runs = Vec::with_capacity(cfg.repetitions);
    for r in 0..cfg.repetitions {
        let seed = cfg.seed.wrapping_add(r as u64);
        let mut model = Model::new(kind, config.clone(), seed)?;
        let run_cfg = TrainConfig { seed, ..cfg.clone() };
        let outcome = if kind.is_trainable() {
            train(&mut model, train_set, val_set, &run_cfg)?
        } else {
            let (_, mae) = validation_losses(&model, val_set, cfg.loss, cfg.batch_size)?;
            TrainOutcome {
                best: model,
                best_epoch: 0,
                best_val_mae: mae,
                history: Vec::new(),
                steps: 0,
                wall_ms: 0.0,
            }
        };
        runs.push(outcome);
        if !kind.is_trainable() {
            break;
        }
    }
    let best_index = runs
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.best_val_mae.total_cmp(&b.1.best_val_mae))
        .map(|(i, _)| i)
        .expect("at least one repetition");
    Ok(Repetitions {
        best: runs[best_index].clone(),
        best_index,
        runs,
    })
}

pub fn write_history(path: impl AsRef<Path>, history: &[EpochRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::file(path, e))?;
    for r in history {
        w.serialize(r).map_err(|e| Error::file(path, e))?;
    }
    w.flush().map_err(|e| Error::file(path, e))?;
    Ok(())
}

pub fn read_history(path: impl AsRef<Path>) -> Result<Vec<EpochRecord>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::file(path, e))?;
    r.deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::file(path, e))
}
