use serde::{Deserialize, Serialize};

use crate::data::NormStats;
use crate::error::{Error, Result};
use crate::model::Model;

use super::WindowSet;

/// Forecast errors in the target's original units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub mae: f64,
    pub mse: f64,
    pub mae_per_step: Vec<f64>,
    pub mse_per_step: Vec<f64>,
    /// Mean absolute error of each window over its horizon.
    pub window_mae: Vec<f64>,
}

impl Evaluation {
    /// Metrics of `pred` against `truth`, both `[windows][horizon]`.
    pub fn from_forecasts(pred: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<Self> {
        let h = truth.first().map_or(0, Vec::len);
        if pred.is_empty() || h == 0 {
            return Err(Error::Data("cannot evaluate an empty window set".into()));
        }
        if pred.len() != truth.len() || pred.iter().chain(truth).any(|r| r.len() != h) {
            return Err(Error::Contract("forecast and truth shapes differ".into()));
        }
        let n = pred.len() as f64;
        let mut abs_step = vec![0.0; h];
        let mut sq_step = vec![0.0; h];
        let mut window_mae = Vec::with_capacity(pred.len());
        for (p, t) in pred.iter().zip(truth) {
            let mut w = 0.0;
            for j in 0..h {
                let e = p[j] - t[j];
                abs_step[j] += e.abs();
                sq_step[j] += e * e;
                w += e.abs();
            }
            window_mae.push(w / h as f64);
        }
        let mae_per_step: Vec<f64> = abs_step.iter().map(|s| s / n).collect();
        let mse_per_step: Vec<f64> = sq_step.iter().map(|s| s / n).collect();
        Ok(Evaluation {
            mae: abs_step.iter().sum::<f64>() / (n * h as f64),
            mse: sq_step.iter().sum::<f64>() / (n * h as f64),
            mae_per_step,
            mse_per_step,
            window_mae,
        })
    }
}

/// Denormalized forecasts and targets, `[windows][horizon]`.
pub fn forecasts(
    model: &Model,
    set: &WindowSet,
    stats: &NormStats,
    batch_size: usize,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let mut pred = Vec::with_capacity(set.len());
    let mut truth = Vec::with_capacity(set.len());
    for batch in set.batches(batch_size) {
        let batch = batch?;
        let h = batch.horizon();
        let y = model.predict(&batch)?;
        let denorm = |v: &[f64]| v.iter().map(|&x| stats.denormalize_target(x)).collect::<Vec<_>>();
        pred.extend(y.data().chunks(h).map(denorm));
        truth.extend(batch.target.data().chunks(h).map(denorm));
    }
    Ok((pred, truth))
}

/// Runs `model` over every window in eval mode and scores it in original units.
pub fn evaluate(model: &Model, set: &WindowSet, stats: &NormStats, batch_size: usize) -> Result<Evaluation> {
    if set.is_empty() {
        return Err(Error::Data("cannot evaluate an empty window set".into()));
    }
    if model.config().out_channels != 1 {
        return Err(Error::Contract("evaluation expects a single output channel".into()));
    }
    let (pred, truth) = forecasts(model, set, stats, batch_size)?;
    Evaluation::from_forecasts(&pred, &truth)
}
