use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ForecastBatch, Model};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub warmup: usize,
    pub repeats: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            warmup: 100,
            repeats: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub model: String,
    pub horizon: usize,
    pub param_count: usize,
    pub warmup: usize,
    pub repeats: usize,
    pub mean_ms: f64,
    /// Sample standard deviation; zero for a single repeat.
    pub std_ms: f64,
}

/// Times `cfg.repeats` evaluation-mode forward passes over `batch` after
/// `cfg.warmup` untimed ones.
pub fn bench(model: &Model, batch: &ForecastBatch, cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.repeats == 0 {
        return Err(Error::Config("bench needs at least one timed repeat".into()));
    }
    for _ in 0..cfg.warmup {
        std::hint::black_box(model.predict(batch)?);
    }
    let mut times = Vec::with_capacity(cfg.repeats);
    for _ in 0..cfg.repeats {
        let t = Instant::now();
        std::hint::black_box(model.predict(batch)?);
        times.push(t.elapsed().as_secs_f64() * 1e3);
    }
    let n = times.len() as f64;
    let mean = times.iter().sum::<f64>() / n;
    let std_ms = if times.len() > 1 {
        (times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(BenchReport {
        model: model.kind().to_string(),
        horizon: model.config().horizon,
        param_count: model.param_count(),
        warmup: cfg.warmup,
        repeats: cfg.repeats,
        mean_ms: mean,
        std_ms,
    })
}
