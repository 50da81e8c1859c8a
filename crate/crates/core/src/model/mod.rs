//! TempoNet, the plain Transformer baseline and the linear baselines
//! behind one [`Model`] type.

mod baselines;
mod batch;
mod checkpoint;
mod config;
mod transformer;

pub use baselines::{moving_average_operator, persistence_forward, DLinear, NLinear};
pub use batch::ForecastBatch;
pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{EmbeddingMode, ModelConfig};
pub use transformer::{
    decoder_forward, embed, encoder_forward, positional_encoding, DecoderLayer, Embedding,
    EncoderLayer, Norm, Sublayer, TransformerNet,
};

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Temponet,
    VanillaTransformer,
    Dlinear,
    Nlinear,
    Persistence,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Temponet,
        ModelKind::VanillaTransformer,
        ModelKind::Dlinear,
        ModelKind::Nlinear,
        ModelKind::Persistence,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Temponet => "temponet",
            ModelKind::VanillaTransformer => "vanilla_transformer",
            ModelKind::Dlinear => "dlinear",
            ModelKind::Nlinear => "nlinear",
            ModelKind::Persistence => "persistence",
        }
    }

    pub fn is_trainable(self) -> bool {
        self != ModelKind::Persistence
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model kind '{s}'")))
    }
}

#[derive(Clone, Debug)]
enum Arch {
    Transformer(Box<TransformerNet>),
    DLinear(DLinear),
    NLinear(NLinear),
    Persistence,
}

/// A forecasting model: architecture description plus its parameters.
#[derive(Clone, Debug)]
pub struct Model {
    kind: ModelKind,
    config: ModelConfig,
    store: ParamStore,
    arch: Arch,
}

impl Model {
    /// Builds a freshly initialized model. For the plain Transformer the
    /// temporal block count is forced to zero.
    pub fn new(kind: ModelKind, config: ModelConfig, seed: u64) -> Result<Self> {
        let mut config = config;
        if kind == ModelKind::VanillaTransformer {
            config.n_temporal_blocks = 0;
        }
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let arch = match kind {
            ModelKind::Temponet | ModelKind::VanillaTransformer => Arch::Transformer(Box::new(
                TransformerNet::new(&mut store, &config, &mut rng)?,
            )),
            ModelKind::Dlinear => Arch::DLinear(DLinear::new(
                &mut store,
                config.lookback,
                config.horizon,
                config.moving_avg,
                &mut rng,
            )?),
            ModelKind::Nlinear => Arch::NLinear(NLinear::new(
                &mut store,
                config.lookback,
                config.horizon,
                &mut rng,
            )?),
            ModelKind::Persistence => Arch::Persistence,
        };
        Ok(Model {
            kind,
            config,
            store,
            arch,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Exact number of learnable scalars.
    pub fn param_count(&self) -> usize {
        self.store.count()
    }

    pub fn transformer(&self) -> Option<&TransformerNet> {
        match &self.arch {
            Arch::Transformer(t) => Some(t),
            _ => None,
        }
    }

    /// Records the forecast `[B, horizon, out_channels]` on `g`, reading
    /// parameters from `p` (as returned by `params().bind(g)`).
    pub fn forward(&self, g: &mut Graph, p: &[Var], batch: &ForecastBatch) -> Result<Var> {
        batch.validate()?;
        if batch.horizon() != self.config.horizon {
            return Err(Error::shape(
                "batch horizon",
                batch.target.dims(),
                &[batch.batch_size(), self.config.horizon, self.config.out_channels],
            ));
        }
        if p.len() != self.store.len() {
            return Err(Error::Contract(format!(
                "{} bound parameters for a model with {}",
                p.len(),
                self.store.len()
            )));
        }
        match &self.arch {
            Arch::Transformer(t) => {
                let c = &self.config;
                let enc = batch.enc_in.dims();
                let dec = batch.dec_in.dims();
                if enc[1] != c.lookback || enc[2] != c.in_channels || dec[1] != c.decoder_len() {
                    return Err(Error::Contract(format!(
                        "batch enc_in {enc:?} / dec_in {dec:?} does not fit lookback {}, \
                         {} channels, decoder length {}",
                        c.lookback,
                        c.in_channels,
                        c.decoder_len()
                    )));
                }
                t.forward(g, p, batch)
            }
            Arch::DLinear(m) => m.forward(g, p, batch),
            Arch::NLinear(m) => m.forward(g, p, batch),
            Arch::Persistence => persistence_forward(g, batch, self.config.horizon),
        }
    }

    /// Evaluation-mode forecast.
    pub fn predict(&self, batch: &ForecastBatch) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = self.store.bind_frozen(&mut g)?;
        let out = self.forward(&mut g, &p, batch)?;
        Ok(g.value(out).clone())
    }
}
