//! Multi-head attention, dynamic temporal attention and the position-wise
//! feed-forward block.
//!
//! All forward functions take the graph plus the bound parameter slice
//! produced by [`ParamStore::bind`]; parameter structs only hold ids.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Logit offset for masked positions in [`MaskMode::PreSoftmaxAdditive`].
pub const MASK_NEG: f64 = -1e9;

/// Score scaling in multi-head attention.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ScaleMode {
    /// `1 / sqrt(d / h)`, the per-head width.
    #[default]
    HeadWidth,
    /// `1 / sqrt(d * h)`.
    WidthTimesHeads,
}

impl ScaleMode {
    pub fn factor(self, d: usize, heads: usize) -> f64 {
        match self {
            ScaleMode::HeadWidth => 1.0 / ((d / heads) as f64).sqrt(),
            ScaleMode::WidthTimesHeads => 1.0 / ((d * heads) as f64).sqrt(),
        }
    }
}

/// Where a {0,1} attention mask is applied.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Masked logits get [`MASK_NEG`] added before the softmax; rows stay
    /// normalized over the unmasked keys.
    #[default]
    PreSoftmaxAdditive,
    /// Softmax weights are multiplied by the mask; rows may sum to < 1.
    PostSoftmaxMultiplicative,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Gelu,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MhaParams {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_o: ParamId,
    pub heads: usize,
    pub width: usize,
    pub scale_mode: ScaleMode,
    pub mask_mode: MaskMode,
}

impl MhaParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        width: usize,
        heads: usize,
        scale_mode: ScaleMode,
        mask_mode: MaskMode,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || width % heads != 0 {
            return Err(Error::Config(format!(
                "width {width} is not divisible by {heads} heads"
            )));
        }
        Ok(MhaParams {
            w_q: store.add_weight(format!("{prefix}.w_q"), width, width, rng)?,
            w_k: store.add_weight(format!("{prefix}.w_k"), width, width, rng)?,
            w_v: store.add_weight(format!("{prefix}.w_v"), width, width, rng)?,
            w_o: store.add_weight(format!("{prefix}.w_o"), width, width, rng)?,
            heads,
            width,
            scale_mode,
            mask_mode,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TemporalAttentionParams {
    pub wt_q: ParamId,
    pub wt_k: ParamId,
    pub wt_v: ParamId,
    pub width: usize,
}

impl TemporalAttentionParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        width: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(TemporalAttentionParams {
            wt_q: store.add_weight(format!("{prefix}.wt_q"), width, width, rng)?,
            wt_k: store.add_weight(format!("{prefix}.wt_k"), width, width, rng)?,
            wt_v: store.add_weight(format!("{prefix}.wt_v"), width, width, rng)?,
            width,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FfnParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub width: usize,
    pub hidden: usize,
    pub activation: Activation,
}

impl FfnParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        width: usize,
        hidden: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(FfnParams {
            w1: store.add_weight(format!("{prefix}.w1"), width, hidden, rng)?,
            b1: store.add_zeros(format!("{prefix}.b1"), &[hidden])?,
            w2: store.add_weight(format!("{prefix}.w2"), hidden, width, rng)?,
            b2: store.add_zeros(format!("{prefix}.b2"), &[width])?,
            width,
            hidden,
            activation,
        })
    }
}

fn check_width(g: &Graph, x: Var, width: usize, op: &'static str) -> Result<(usize, usize)> {
    match *g.dims(x) {
        [b, l, d] if d == width => Ok((b, l)),
        _ => Err(Error::shape(op, g.dims(x), &[0, 0, width])),
    }
}

/// Lower-triangular `[len, len]` mask: position `i` may attend to `j <= i`.
pub fn make_causal_mask(len: usize) -> Result<Tensor> {
    let mut data = vec![0.0; len * len];
    for i in 0..len {
        for j in 0..=i {
            data[i * len + j] = 1.0;
        }
    }
    Tensor::new(&[len, len], data)
}

/// Multi-head attention; returns the output `[B, Lq, d]` and the attention
/// weights `[B, h, Lq, Lk]` after masking.
pub fn multi_head_attention_with_weights(
    g: &mut Graph,
    p: &[Var],
    q_in: Var,
    kv_in: Var,
    params: &MhaParams,
    mask: Option<&Tensor>,
) -> Result<(Var, Var)> {
    let d = params.width;
    let h = params.heads;
    if h == 0 || d % h != 0 {
        return Err(Error::Config(format!("width {d} is not divisible by {h} heads")));
    }
    let dk = d / h;
    let (b, lq) = check_width(g, q_in, d, "multi_head_attention")?;
    let (b2, lk) = check_width(g, kv_in, d, "multi_head_attention")?;
    if b != b2 {
        return Err(Error::shape("multi_head_attention", g.dims(q_in), g.dims(kv_in)));
    }
    if let Some(m) = mask {
        if m.dims() != [lq, lk] {
            return Err(Error::shape("attention mask", m.dims(), &[lq, lk]));
        }
        if m.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Contract("attention mask entries must be 0 or 1".into()));
        }
    }

    let split = |g: &mut Graph, x: Var, w: ParamId, len: usize| -> Result<Var> {
        let y = g.matmul(x, p[w.0])?;
        let y = g.reshape(y, &[b, len, h, dk])?;
        g.transpose(y, 1, 2)
    };
    let q = split(g, q_in, params.w_q, lq)?;
    let k = split(g, kv_in, params.w_k, lk)?;
    let v = split(g, kv_in, params.w_v, lk)?;

    let kt = g.transpose(k, 2, 3)?;
    let scores = g.matmul(q, kt)?;
    let scores = g.scale(scores, params.scale_mode.factor(d, h))?;
    let weights = match (mask, params.mask_mode) {
        (None, _) => g.softmax(scores)?,
        (Some(m), MaskMode::PreSoftmaxAdditive) => {
            let offset: Vec<f64> = m
                .data()
                .iter()
                .map(|&v| if v == 0.0 { MASK_NEG } else { 0.0 })
                .collect();
            let offset = g.constant(Tensor::new(&[lq, lk], offset)?)?;
            let masked = g.add(scores, offset)?;
            g.softmax(masked)?
        }
        (Some(m), MaskMode::PostSoftmaxMultiplicative) => {
            let a = g.softmax(scores)?;
            let mv = g.constant(m.clone())?;
            g.mul(a, mv)?
        }
    };
    let ctx = g.matmul(weights, v)?;
    let ctx = g.transpose(ctx, 1, 2)?;
    let ctx = g.reshape(ctx, &[b, lq, d])?;
    let out = g.matmul(ctx, p[params.w_o.0])?;
    Ok((out, weights))
}

/// Multi-head self- or cross-attention: queries from `q_in`, keys and
/// values from `kv_in`.
pub fn multi_head_attention(
    g: &mut Graph,
    p: &[Var],
    q_in: Var,
    kv_in: Var,
    params: &MhaParams,
    mask: Option<&Tensor>,
) -> Result<Var> {
    multi_head_attention_with_weights(g, p, q_in, kv_in, params, mask).map(|(out, _)| out)
}

/// Single-head, full-width, unscaled attention over the sequence axis.
pub fn dynamic_temporal_attention(
    g: &mut Graph,
    p: &[Var],
    x: Var,
    params: &TemporalAttentionParams,
) -> Result<Var> {
    check_width(g, x, params.width, "dynamic_temporal_attention")?;
    let q = g.matmul(x, p[params.wt_q.0])?;
    let k = g.matmul(x, p[params.wt_k.0])?;
    let v = g.matmul(x, p[params.wt_v.0])?;
    let kt = g.transpose(k, 1, 2)?;
    let scores = g.matmul(q, kt)?;
    let weights = g.softmax(scores)?;
    g.matmul(weights, v)
}

/// `act(x W1 + b1) W2 + b2`, independently at every position.
pub fn position_wise_ffn(g: &mut Graph, p: &[Var], x: Var, params: &FfnParams) -> Result<Var> {
    check_width(g, x, params.width, "position_wise_ffn")?;
    let h = g.matmul(x, p[params.w1.0])?;
    let h = g.add(h, p[params.b1.0])?;
    let h = match params.activation {
        Activation::Relu => g.relu(h)?,
        Activation::Gelu => g.gelu(h)?,
    };
    let y = g.matmul(h, p[params.w2.0])?;
    g.add(y, p[params.b2.0])
}
