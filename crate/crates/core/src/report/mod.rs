//! Result tables, relative improvements, timing and SVG figures.

mod bench;
mod svg;

pub use bench::{bench, BenchConfig, BenchReport};
pub use svg::{box_plot_svg, forecast_svg, BoxStats, Series};

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Percentage by which `other` has a larger error than `reference`:
/// `100 * (other - reference) / reference`.
pub fn relative_improvement(other: f64, reference: f64) -> Result<f64> {
    if !(reference > 0.0) || !other.is_finite() || !reference.is_finite() {
        return Err(Error::Contract(format!(
            "relative improvement needs a positive finite reference, got {other} vs {reference}"
        )));
    }
    Ok(100.0 * (other - reference) / reference)
}

/// One row per horizon and one column per model; `None` marks a failed cell.
#[derive(Clone, Debug, PartialEq)]
pub struct HorizonTable {
    /// Header of the first column, which holds the horizon.
    pub corner: String,
    pub models: Vec<String>,
    pub horizons: Vec<usize>,
    pub values: Vec<Vec<Option<f64>>>,
}

impl HorizonTable {
    pub fn new(corner: impl Into<String>, models: Vec<String>, horizons: Vec<usize>) -> Self {
        let values = vec![vec![None; models.len()]; horizons.len()];
        HorizonTable {
            corner: corner.into(),
            models,
            horizons,
            values,
        }
    }

    pub fn get(&self, horizon: usize, model: &str) -> Option<f64> {
        let r = self.horizons.iter().position(|&h| h == horizon)?;
        let c = self.models.iter().position(|m| m == model)?;
        self.values[r][c]
    }

    pub fn set(&mut self, horizon: usize, model: &str, value: Option<f64>) -> Result<()> {
        let r = self.horizons.iter().position(|&h| h == horizon);
        let c = self.models.iter().position(|m| m == model);
        match (r, c) {
            (Some(r), Some(c)) => {
                self.values[r][c] = value;
                Ok(())
            }
            _ => Err(Error::Contract(format!("no cell for {model} at horizon {horizon}"))),
        }
    }

    /// Relative improvement of every column over `reference`, per horizon.
    /// Cells are empty where either value is missing.
    pub fn improvement_over(&self, reference: &str) -> Result<HorizonTable> {
        let c_ref = self
            .models
            .iter()
            .position(|m| m == reference)
            .ok_or_else(|| Error::Data(format!("no {reference} column to compare against")))?;
        let mut out = HorizonTable::new(
            format!("horizon \\ 100*(mae_model - mae_{reference})/mae_{reference}"),
            self.models.clone(),
            self.horizons.clone(),
        );
        for (r, row) in self.values.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                out.values[r][c] = match (*v, row[c_ref]) {
                    (Some(x), Some(base)) => Some(relative_improvement(x, base)?),
                    _ => None,
                };
            }
        }
        Ok(out)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        let mut header = vec![self.corner.clone()];
        header.extend(self.models.iter().cloned());
        w.write_record(&header)?;
        for (h, row) in self.horizons.iter().zip(&self.values) {
            let mut rec = vec![h.to_string()];
            rec.extend(row.iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(r);
        let mut records = r.records();
        let header = records
            .next()
            .ok_or_else(|| Error::Data("empty horizon table".into()))??;
        let mut table = HorizonTable::new(
            header.get(0).unwrap_or_default(),
            header.iter().skip(1).map(String::from).collect(),
            Vec::new(),
        );
        for rec in records {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let parse_err = |what: &str| Error::Data(format!("line {line}: bad {what}"));
            let h = rec
                .get(0)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| parse_err("horizon"))?;
            let row = rec
                .iter()
                .skip(1)
                .map(|s| {
                    if s.is_empty() {
                        Ok(None)
                    } else {
                        s.parse().map(Some).map_err(|_| parse_err("value"))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            if row.len() != table.models.len() {
                return Err(parse_err("column count"));
            }
            table.horizons.push(h);
            table.values.push(row);
        }
        Ok(table)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::file(path, e))?;
        self.write_csv(f).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::file(path, e))?;
        Self::read_csv(f).map_err(|e| Error::file(path, e))
    }
}

/// Outcome of one (model, horizon) run. Error and timing fields are in the
/// target's units and milliseconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricCell {
    pub model: String,
    pub horizon: usize,
    pub mae: Option<f64>,
    pub mse: Option<f64>,
    pub param_count: Option<usize>,
    pub train_ms: Option<f64>,
    pub infer_mean_ms: Option<f64>,
    pub infer_std_ms: Option<f64>,
    /// Reason the cell has no metrics.
    pub failure: Option<String>,
}

impl MetricCell {
    pub fn failed(model: impl Into<String>, horizon: usize, reason: impl Into<String>) -> Self {
        MetricCell {
            model: model.into(),
            horizon,
            mae: None,
            mse: None,
            param_count: None,
            train_ms: None,
            infer_mean_ms: None,
            infer_std_ms: None,
            failure: Some(reason.into()),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub cells: Vec<MetricCell>,
}

impl MetricsReport {
    pub fn models(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for c in &self.cells {
            if !out.contains(&c.model) {
                out.push(c.model.clone());
            }
        }
        out
    }

    pub fn horizons(&self) -> Vec<usize> {
        let mut h: Vec<usize> = self.cells.iter().map(|c| c.horizon).collect();
        h.sort_unstable();
        h.dedup();
        h
    }

    /// MAE per horizon and model.
    pub fn mae_table(&self) -> HorizonTable {
        let mut t = HorizonTable::new("horizon", self.models(), self.horizons());
        for c in &self.cells {
            t.set(c.horizon, &c.model, c.mae).expect("cell keys come from the report");
        }
        t
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        for c in &self.cells {
            w.serialize(c)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let cells = csv::Reader::from_reader(r)
            .deserialize()
            .collect::<std::result::Result<_, _>>()?;
        Ok(MetricsReport { cells })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::file(path, e))?;
        self.write_csv(f).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::file(path, e))?;
        Self::read_csv(f).map_err(|e| Error::file(path, e))
    }
}

#[cfg(test)]
mod tests;
