//! Finite-difference gradient checks over every differentiable building
//! block and a small end-to-end model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{
    dynamic_temporal_attention, make_causal_mask, multi_head_attention, Activation, FfnParams,
    MaskMode, MhaParams, ScaleMode, TemporalAttentionParams,
};
use crate::autodiff::{grad_check, GradCheckReport, Graph, Var};
use crate::error::{Error, Result};
use crate::model::{ForecastBatch, Model, ModelConfig, ModelKind};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Central-difference step used by [`check_component`].
pub const FD_STEP: f64 = 1e-5;

/// Component names accepted by [`check_component`], in run order.
pub const COMPONENTS: [&str; 11] = [
    "matmul",
    "softmax",
    "layer_norm",
    "ffn",
    "mha_additive_head_width",
    "mha_additive_width_heads",
    "mha_multiplicative_head_width",
    "mha_multiplicative_width_heads",
    "temporal_attention",
    "temponet_micro",
    "vanilla_micro",
];

/// Width 8, 2 heads, one encoder and one decoder layer, 3 temporal blocks,
/// 6-step lookback, 2-step horizon and no dropout.
pub fn micro_config() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        heads: 2,
        d_ff: 16,
        n_enc: 1,
        n_dec: 1,
        n_temporal_blocks: 3,
        in_channels: 3,
        lookback: 6,
        horizon: 2,
        label_len: 3,
        dropout: 0.0,
        ..ModelConfig::default()
    }
}

#[derive(Debug, Clone)]
pub struct ComponentReport {
    pub name: &'static str,
    pub report: GradCheckReport,
}

impl ComponentReport {
    pub fn passed(&self) -> bool {
        self.report.passed()
    }
}

fn rand_t(dims: &[usize], seed: u64) -> Result<Tensor> {
    Tensor::uniform(dims, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn sum_sq(g: &mut Graph, y: Var) -> Result<Var> {
    let sq = g.mul(y, y)?;
    g.sum(sq)
}

/// Random leaves for every parameter of `store` followed by `extra`.
fn leaves(store: &ParamStore, extra: &[&[usize]], seed: u64) -> Result<Vec<Tensor>> {
    store
        .tensors()
        .iter()
        .map(|t| t.dims().to_vec())
        .chain(extra.iter().map(|d| d.to_vec()))
        .enumerate()
        .map(|(i, dims)| rand_t(&dims, seed * 97 + i as u64))
        .collect()
}

fn mha_check(scale: ScaleMode, mask_mode: MaskMode, tol: f64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut store = ParamStore::new();
    let params = MhaParams::new(&mut store, "mha", 8, 2, scale, mask_mode, &mut rng)?;
    let mask = make_causal_mask(4)?;
    let n = store.len();
    let x = leaves(&store, &[&[2, 4, 8], &[2, 3, 8]], 22)?;
    grad_check(
        |g, v| {
            let causal = multi_head_attention(g, &v[..n], v[n], v[n], &params, Some(&mask))?;
            let cross = multi_head_attention(g, &v[..n], v[n + 1], v[n], &params, None)?;
            let a = sum_sq(g, causal)?;
            let b = sum_sq(g, cross)?;
            g.add(a, b)
        },
        &x,
        FD_STEP,
        tol,
    )
}

/// Random batch of `b` windows shaped for `cfg`, with zeroed placeholders.
pub fn micro_batch_for(cfg: &ModelConfig, b: usize, seed: u64) -> Result<ForecastBatch> {
    let (l, ld, c) = (cfg.lookback, cfg.decoder_len(), cfg.in_channels);
    let mut dec_in = rand_t(&[b, ld, c], seed + 1)?;
    for k in 0..b {
        dec_in.data_mut()[(k * ld + cfg.label_len) * c..(k + 1) * ld * c].fill(0.0);
    }
    Ok(ForecastBatch {
        enc_in: rand_t(&[b, l, c], seed)?,
        dec_in,
        target: rand_t(&[b, cfg.horizon, 1], seed + 2)?,
        past_target: rand_t(&[b, l, 1], seed + 3)?,
        enc_mark: Some(rand_t(&[b, l, cfg.time_features], seed + 4)?),
        dec_mark: Some(rand_t(&[b, ld, cfg.time_features], seed + 5)?),
    })
}

fn model_check(kind: ModelKind, tol: f64) -> Result<GradCheckReport> {
    let cfg = micro_config();
    let mut model = Model::new(kind, cfg.clone(), 12)?;
    let x = leaves(model.params(), &[], 12)?;
    model.params_mut().load(x.clone())?;
    let batch = micro_batch_for(&cfg, 2, 13)?;
    grad_check(
        |g, p| {
            let y = model.forward(g, p, &batch)?;
            let t = g.constant(batch.target.clone())?;
            g.mse(y, t)
        },
        &x,
        FD_STEP,
        tol,
    )
}

/// Gradient check of one named component at relative tolerance `tol`.
pub fn check_component(name: &str, tol: f64) -> Result<ComponentReport> {
    let name = COMPONENTS
        .iter()
        .copied()
        .find(|c| *c == name)
        .ok_or_else(|| Error::Config(format!("unknown component {name:?}; expected one of {COMPONENTS:?}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let report = match name {
        "matmul" => grad_check(
            |g, v| {
                let y = g.matmul(v[0], v[1])?;
                let z = g.matmul(y, v[2])?;
                sum_sq(g, z)
            },
            &[rand_t(&[2, 3, 4], 1)?, rand_t(&[4, 5], 2)?, rand_t(&[2, 5, 2], 3)?],
            FD_STEP,
            tol,
        )?,
        "softmax" => grad_check(
            |g, v| {
                let s = g.softmax(v[0])?;
                let w = g.mul(s, v[1])?;
                sum_sq(g, w)
            },
            &[rand_t(&[2, 3, 5], 4)?, rand_t(&[2, 3, 5], 5)?],
            FD_STEP,
            tol,
        )?,
        "layer_norm" => grad_check(
            |g, v| {
                let y = g.layer_norm(v[0], v[1], v[2], 1e-5)?;
                let w = g.mul(y, v[3])?;
                g.sum(w)
            },
            &[rand_t(&[2, 3, 6], 6)?, rand_t(&[6], 7)?, rand_t(&[6], 8)?, rand_t(&[2, 3, 6], 9)?],
            FD_STEP,
            tol,
        )?,
        "ffn" => {
            let mut reports = Vec::new();
            for act in [Activation::Relu, Activation::Gelu] {
                let mut store = ParamStore::new();
                let params = FfnParams::new(&mut store, "ffn", 4, 8, act, &mut rng)?;
                let x = leaves(&store, &[&[2, 3, 4]], 10)?;
                let n = store.len();
                let r = grad_check(
                    |g, v| {
                        let y = crate::attention::position_wise_ffn(g, &v[..n], v[n], &params)?;
                        sum_sq(g, y)
                    },
                    &x,
                    FD_STEP,
                    tol,
                )?;
                reports.extend(r.leaves);
            }
            GradCheckReport { leaves: reports, tol }
        }
        "mha_additive_head_width" => mha_check(ScaleMode::HeadWidth, MaskMode::PreSoftmaxAdditive, tol)?,
        "mha_additive_width_heads" => mha_check(ScaleMode::WidthTimesHeads, MaskMode::PreSoftmaxAdditive, tol)?,
        "mha_multiplicative_head_width" => {
            mha_check(ScaleMode::HeadWidth, MaskMode::PostSoftmaxMultiplicative, tol)?
        }
        "mha_multiplicative_width_heads" => {
            mha_check(ScaleMode::WidthTimesHeads, MaskMode::PostSoftmaxMultiplicative, tol)?
        }
        "temporal_attention" => {
            let mut store = ParamStore::new();
            let params = TemporalAttentionParams::new(&mut store, "ta", 6, &mut rng)?;
            let x = leaves(&store, &[&[2, 5, 6]], 11)?;
            grad_check(
                |g, v| {
                    let y = dynamic_temporal_attention(g, &v[..3], v[3], &params)?;
                    sum_sq(g, y)
                },
                &x,
                FD_STEP,
                tol,
            )?
        }
        "temponet_micro" => model_check(ModelKind::Temponet, tol)?,
        "vanilla_micro" => model_check(ModelKind::VanillaTransformer, tol)?,
        _ => unreachable!("name validated above"),
    };
    Ok(ComponentReport { name, report })
}

/// Runs [`check_component`] for `only`, or every component when `None`.
pub fn check_all(only: Option<&str>, tol: f64) -> Result<Vec<ComponentReport>> {
    match only {
        Some(name) => Ok(vec![check_component(name, tol)?]),
        None => COMPONENTS.iter().map(|c| check_component(c, tol)).collect(),
    }
}
