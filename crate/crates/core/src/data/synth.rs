use std::f64::consts::TAU;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::Result;

use super::SeriesTable;

/// Generator settings for [`synth_gait_with`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Gait cycle length in 1 ms steps.
    pub period: usize,
    /// Mean knee angle in degrees.
    pub offset: f64,
    /// Amplitudes of the first harmonics of the knee angle.
    pub harmonics: Vec<f64>,
    /// Non-target channels: pseudo EMG envelopes, accelerations and angular rates.
    pub features: usize,
    pub noise_std: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            period: 1000,
            offset: 30.0,
            harmonics: vec![25.0, 10.0, 4.0],
            features: 39,
            noise_std: 0.1,
        }
    }
}

impl SynthConfig {
    /// Closed interval the noise-free knee angle stays in.
    pub fn target_range(&self) -> (f64, f64) {
        let a: f64 = self.harmonics.iter().map(|h| h.abs()).sum();
        (self.offset - a, self.offset + a)
    }

    fn knee_angle(&self, phase: f64) -> f64 {
        let shifts = [0.0, 0.8, 1.3, 2.1, 0.4];
        self.offset
            + self
                .harmonics
                .iter()
                .enumerate()
                .map(|(k, a)| a * ((k + 1) as f64 * phase + shifts[k % shifts.len()]).sin())
                .sum::<f64>()
    }
}

/// [`synth_gait_with`] at the default settings.
pub fn synth_gait(n: usize, seed: u64) -> Result<SeriesTable> {
    synth_gait_with(n, seed, &SynthConfig::default())
}

/// Deterministic gait-like recording sampled every millisecond. The target
/// `knee_angle` is a noise-free periodic signal; every other channel is a
/// phase-shifted function of the gait cycle plus seeded Gaussian noise.
pub fn synth_gait_with(n: usize, seed: u64, cfg: &SynthConfig) -> Result<SeriesTable> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, cfg.noise_std.max(0.0)).map_err(|e| {
        crate::Error::Config(format!("synthetic noise: {e}"))
    })?;
    let period = cfg.period.max(1) as f64;
    let phase = |t: usize| TAU * t as f64 / period;

    let mut names = Vec::with_capacity(cfg.features + 1);
    let mut columns = Vec::with_capacity(cfg.features + 1);
    for k in 0..cfg.features {
        let shift = TAU * k as f64 / cfg.features.max(1) as f64;
        let (name, f): (String, Box<dyn Fn(f64) -> f64>) = match k % 3 {
            0 => (format!("emg_{k}"), Box::new(move |p: f64| (0.5 * (p + shift)).sin().abs())),
            1 => (format!("acc_{k}"), Box::new(move |p: f64| (p + shift).sin() + 0.3 * (2.0 * p).cos())),
            _ => (format!("gyr_{k}"), Box::new(move |p: f64| (p + shift).cos() - 0.2 * (3.0 * p + shift).sin())),
        };
        names.push(name);
        columns.push((0..n).map(|t| f(phase(t)) + noise.sample(&mut rng)).collect());
    }
    names.push("knee_angle".into());
    columns.push((0..n).map(|t| cfg.knee_angle(phase(t))).collect());
    let time_ms = (0..n).map(|t| t as f64).collect();
    SeriesTable::new(time_ms, names, columns, "knee_angle")
}
