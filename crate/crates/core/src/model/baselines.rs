//! Linear and naive forecasting baselines. All of them read only the
//! observed target history (`past_target`) and share one set of weights
//! across output channels.

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

use super::ForecastBatch;

/// `[lookback, horizon]` matrix whose last row is ones: `x . E` repeats the
/// last value of each row of `x` `horizon` times.
fn repeat_last(lookback: usize, horizon: usize) -> Result<Tensor> {
    let mut data = vec![0.0; lookback * horizon];
    data[(lookback - 1) * horizon..].fill(1.0);
    Tensor::new(&[lookback, horizon], data)
}

/// Moving-average operator `[lookback, lookback]` with edge replication:
/// `trend = x . A` for a row vector `x`.
pub fn moving_average_operator(lookback: usize, kernel: usize) -> Result<Tensor> {
    if kernel == 0 || kernel % 2 == 0 {
        return Err(Error::Config(format!("moving average kernel must be odd, got {kernel}")));
    }
    let half = (kernel / 2) as isize;
    let mut data = vec![0.0; lookback * lookback];
    let w = 1.0 / kernel as f64;
    for t in 0..lookback as isize {
        for off in -half..=half {
            let src = (t + off).clamp(0, lookback as isize - 1) as usize;
            data[src * lookback + t as usize] += w;
        }
    }
    Tensor::new(&[lookback, lookback], data)
}

/// `[B, L, C]` history as rows `[B, C, L]`.
fn history_rows(g: &mut Graph, batch: &ForecastBatch, lookback: usize) -> Result<Var> {
    if batch.past_target.dims()[1] != lookback {
        return Err(Error::shape("baseline lookback", batch.past_target.dims(), &[0, lookback, 0]));
    }
    let x = g.constant(batch.past_target.clone())?;
    g.transpose(x, 1, 2)
}

fn to_output(g: &mut Graph, rows: Var) -> Result<Var> {
    g.transpose(rows, 1, 2)
}

/// Trend/remainder decomposition; one linear map per component.
#[derive(Clone, Debug)]
pub struct DLinear {
    pub trend_w: ParamId,
    pub trend_b: ParamId,
    pub remainder_w: ParamId,
    pub remainder_b: ParamId,
    pub lookback: usize,
    pub horizon: usize,
    pub kernel: usize,
}

impl DLinear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        lookback: usize,
        horizon: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let bound = 1.0 / (lookback as f64).sqrt();
        Ok(DLinear {
            trend_w: store.add("dlinear.trend_w", Tensor::uniform(&[lookback, horizon], bound, rng)?),
            trend_b: store.add_zeros("dlinear.trend_b", &[horizon])?,
            remainder_w: store.add(
                "dlinear.remainder_w",
                Tensor::uniform(&[lookback, horizon], bound, rng)?,
            ),
            remainder_b: store.add_zeros("dlinear.remainder_b", &[horizon])?,
            lookback,
            horizon,
            kernel,
        })
    }

    /// Returns `(trend, remainder)` rows, each `[B, C, L]`.
    pub fn decompose(&self, g: &mut Graph, x: Var) -> Result<(Var, Var)> {
        let avg = g.constant(moving_average_operator(self.lookback, self.kernel)?)?;
        let trend = g.matmul(x, avg)?;
        let remainder = g.sub(x, trend)?;
        Ok((trend, remainder))
    }

    pub fn forward(&self, g: &mut Graph, p: &[Var], batch: &ForecastBatch) -> Result<Var> {
        let x = history_rows(g, batch, self.lookback)?;
        let (trend, remainder) = self.decompose(g, x)?;
        let t = g.matmul(trend, p[self.trend_w.0])?;
        let t = g.add(t, p[self.trend_b.0])?;
        let r = g.matmul(remainder, p[self.remainder_w.0])?;
        let r = g.add(r, p[self.remainder_b.0])?;
        let y = g.add(t, r)?;
        to_output(g, y)
    }
}

/// Linear map on the history with its last value subtracted, then added
/// back to every forecast step.
#[derive(Clone, Debug)]
pub struct NLinear {
    pub w: ParamId,
    pub b: ParamId,
    pub lookback: usize,
    pub horizon: usize,
}

impl NLinear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        lookback: usize,
        horizon: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let bound = 1.0 / (lookback as f64).sqrt();
        Ok(NLinear {
            w: store.add("nlinear.w", Tensor::uniform(&[lookback, horizon], bound, rng)?),
            b: store.add_zeros("nlinear.b", &[horizon])?,
            lookback,
            horizon,
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &[Var], batch: &ForecastBatch) -> Result<Var> {
        let (l, h) = (self.lookback, self.horizon);
        let x = history_rows(g, batch, l)?;
        // x - last: x . (I - E_L), E_L having its last row all ones
        let mut centre = vec![0.0; l * l];
        for i in 0..l {
            centre[i * l + i] += 1.0;
            centre[(l - 1) * l + i] -= 1.0;
        }
        let centre = g.constant(Tensor::new(&[l, l], centre)?)?;
        let xc = g.matmul(x, centre)?;
        let y = g.matmul(xc, p[self.w.0])?;
        let y = g.add(y, p[self.b.0])?;
        let last = g.constant(repeat_last(l, h)?)?;
        let offset = g.matmul(x, last)?;
        let y = g.add(y, offset)?;
        to_output(g, y)
    }
}

/// Repeats the last observed value across the horizon.
pub fn persistence_forward(g: &mut Graph, batch: &ForecastBatch, horizon: usize) -> Result<Var> {
    let l = batch.past_target.dims()[1];
    let x = history_rows(g, batch, l)?;
    let last = g.constant(repeat_last(l, horizon)?)?;
    let y = g.matmul(x, last)?;
    to_output(g, y)
}
