use serde::{Deserialize, Serialize};

use crate::attention::{Activation, MaskMode, ScaleMode};
use crate::error::{Error, Result};

/// Which terms the input embedding sums.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingMode {
    ValuePositional,
    ValueTemporal,
    ValuePositionalTemporal,
}

impl EmbeddingMode {
    pub fn positional(self) -> bool {
        matches!(self, Self::ValuePositional | Self::ValuePositionalTemporal)
    }

    pub fn temporal(self) -> bool {
        matches!(self, Self::ValueTemporal | Self::ValuePositionalTemporal)
    }
}

/// Architecture hyperparameters. Defaults are the full-size TempoNet
/// configuration: width 512, 8 heads, feed-forward width 2048, 4 encoder
/// and 3 decoder layers, 3 temporal blocks per encoder layer, 40 input
/// features, 128-step lookback.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub n_enc: usize,
    pub n_dec: usize,
    pub n_temporal_blocks: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub time_features: usize,
    pub lookback: usize,
    pub horizon: usize,
    pub label_len: usize,
    pub embedding_mode: EmbeddingMode,
    pub dropout: f64,
    pub scale_mode: ScaleMode,
    pub mask_mode: MaskMode,
    pub activation: Activation,
    pub layer_norm_eps: f64,
    /// Moving-average window of the trend/remainder decomposition.
    pub moving_avg: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 512,
            heads: 8,
            d_ff: 2048,
            n_enc: 4,
            n_dec: 3,
            n_temporal_blocks: 3,
            in_channels: 40,
            out_channels: 1,
            time_features: crate::data::TIME_FEATURES,
            lookback: 128,
            horizon: 20,
            label_len: 64,
            embedding_mode: EmbeddingMode::ValuePositional,
            dropout: 0.05,
            scale_mode: ScaleMode::HeadWidth,
            mask_mode: MaskMode::PreSoftmaxAdditive,
            activation: Activation::Relu,
            layer_norm_eps: 1e-5,
            moving_avg: 25,
        }
    }
}

impl ModelConfig {
    /// The plain Transformer baseline: 2 encoder and 1 decoder layers, no
    /// temporal blocks, value + temporal embedding.
    pub fn vanilla_transformer() -> Self {
        ModelConfig {
            n_enc: 2,
            n_dec: 1,
            n_temporal_blocks: 0,
            embedding_mode: EmbeddingMode::ValueTemporal,
            ..ModelConfig::default()
        }
    }

    pub fn decoder_len(&self) -> usize {
        self.label_len + self.horizon
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return fail(format!(
                "d_model {} must be a positive multiple of heads {}",
                self.d_model, self.heads
            ));
        }
        if self.d_ff == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return fail("d_ff, in_channels and out_channels must be >= 1".into());
        }
        if self.lookback == 0 || self.horizon == 0 {
            return fail("lookback and horizon must be >= 1".into());
        }
        if self.label_len > self.lookback {
            return fail(format!(
                "label_len {} exceeds lookback {}",
                self.label_len, self.lookback
            ));
        }
        if self.embedding_mode.temporal() && self.time_features == 0 {
            return fail("temporal embedding needs time_features >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} not in [0, 1)", self.dropout));
        }
        if !(self.layer_norm_eps > 0.0) {
            return fail("layer_norm_eps must be > 0".into());
        }
        if self.moving_avg == 0 || self.moving_avg % 2 == 0 {
            return fail("moving_avg must be odd".into());
        }
        Ok(())
    }
}
