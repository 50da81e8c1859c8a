use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ForecastBatch;
use crate::tensor::Tensor;

use super::SeriesTable;

/// Number of per-step time mark features produced by [`time_marks`].
pub const TIME_FEATURES: usize = 2;

/// Millisecond-within-second and second-within-minute, each scaled to
/// `[-0.5, 0.5]`.
pub fn time_marks(t_ms: f64) -> [f64; TIME_FEATURES] {
    let ms = t_ms.rem_euclid(1000.0);
    let s = (t_ms / 1000.0).floor().rem_euclid(60.0);
    [ms / 999.0 - 0.5, s / 59.0 - 0.5]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSpec {
    pub lookback: usize,
    pub horizon: usize,
    pub label_len: usize,
    pub stride: usize,
}

impl WindowSpec {
    pub fn validate(&self) -> Result<()> {
        if self.lookback == 0 || self.horizon == 0 || self.stride == 0 {
            return Err(Error::Config("lookback, horizon and stride must be >= 1".into()));
        }
        if self.label_len > self.lookback {
            return Err(Error::Config(format!(
                "label_len {} exceeds lookback {}",
                self.label_len, self.lookback
            )));
        }
        Ok(())
    }

    pub fn span(&self) -> usize {
        self.lookback + self.horizon
    }
}

/// One sample: history rows `[start, start + lookback)`, forecast rows
/// `[start + lookback, start + lookback + horizon)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub start: usize,
}

impl Window {
    pub fn forecast_start(&self, spec: &WindowSpec) -> usize {
        self.start + spec.lookback
    }
}

/// Sliding windows over `table`: `(len - lookback - horizon) / stride + 1`
/// of them.
pub fn make_windows(table: &SeriesTable, spec: &WindowSpec) -> Result<Vec<Window>> {
    spec.validate()?;
    if table.len() < spec.span() {
        return Err(Error::Data(format!(
            "{} rows cannot hold one window of lookback {} + horizon {}",
            table.len(),
            spec.lookback,
            spec.horizon
        )));
    }
    let count = (table.len() - spec.span()) / spec.stride + 1;
    Ok((0..count).map(|i| Window { start: i * spec.stride }).collect())
}

/// Stacks windows into a batch. Decoder input is the last `label_len`
/// history rows followed by `horizon` zero rows.
pub fn collate(table: &SeriesTable, windows: &[Window], spec: &WindowSpec) -> Result<ForecastBatch> {
    spec.validate()?;
    if windows.is_empty() {
        return Err(Error::Data("cannot collate an empty window set".into()));
    }
    if let Some(w) = windows.iter().find(|w| w.start + spec.span() > table.len()) {
        return Err(Error::Data(format!(
            "window at {} overruns a table of {} rows",
            w.start,
            table.len()
        )));
    }
    let inputs = table.input_indices();
    let c = inputs.len();
    let (b, l, h, ll) = (windows.len(), spec.lookback, spec.horizon, spec.label_len);
    let ld = ll + h;
    let cols = table.columns();
    let target = table.target();
    let times = table.time_ms();

    let mut enc = Vec::with_capacity(b * l * c);
    let mut dec = Vec::with_capacity(b * ld * c);
    let mut tgt = Vec::with_capacity(b * h);
    let mut past = Vec::with_capacity(b * l);
    let mut enc_mark = Vec::with_capacity(b * l * TIME_FEATURES);
    let mut dec_mark = Vec::with_capacity(b * ld * TIME_FEATURES);
    for w in windows {
        let f = w.forecast_start(spec);
        for t in w.start..f {
            enc.extend(inputs.iter().map(|&i| cols[i][t]));
            enc_mark.extend(time_marks(times[t]));
        }
        for t in f - ll..f {
            dec.extend(inputs.iter().map(|&i| cols[i][t]));
            dec_mark.extend(time_marks(times[t]));
        }
        dec.extend(std::iter::repeat_n(0.0, h * c));
        for t in f..f + h {
            dec_mark.extend(time_marks(times[t]));
        }
        tgt.extend_from_slice(&target[f..f + h]);
        past.extend_from_slice(&target[w.start..f]);
    }
    let batch = ForecastBatch {
        enc_in: Tensor::new(&[b, l, c], enc)?,
        dec_in: Tensor::new(&[b, ld, c], dec)?,
        target: Tensor::new(&[b, h, 1], tgt)?,
        past_target: Tensor::new(&[b, l, 1], past)?,
        enc_mark: Some(Tensor::new(&[b, l, TIME_FEATURES], enc_mark)?),
        dec_mark: Some(Tensor::new(&[b, ld, TIME_FEATURES], dec_mark)?),
    };
    batch.validate()?;
    Ok(batch)
}
