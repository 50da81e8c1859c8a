//! Encoder/decoder stack shared by TempoNet and the plain Transformer.
//!
//! Every sublayer is wrapped post-norm: `x = LayerNorm(x + dropout(f(x)))`.
//! An encoder layer runs self-attention, then its temporal attention blocks
//! one after another, then the feed-forward block. With zero temporal
//! blocks it is the standard Transformer encoder layer.

use rand::Rng;

use crate::attention::{
    dynamic_temporal_attention, make_causal_mask, multi_head_attention, position_wise_ffn,
    FfnParams, MhaParams, TemporalAttentionParams,
};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

use super::{EmbeddingMode, ForecastBatch, ModelConfig};

#[derive(Clone, Debug)]
pub struct Norm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl Norm {
    fn new(store: &mut ParamStore, prefix: &str, d: usize) -> Result<Self> {
        Ok(Norm {
            gain: store.add_full(format!("{prefix}.gain"), &[d], 1.0)?,
            bias: store.add_zeros(format!("{prefix}.bias"), &[d])?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct Embedding {
    pub value_w: ParamId,
    pub value_b: ParamId,
    pub time_w: Option<ParamId>,
    pub positional: bool,
    pub width: usize,
}

#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub self_attn: MhaParams,
    pub norm_attn: Norm,
    pub temporal: Vec<(TemporalAttentionParams, Norm)>,
    pub ffn: FfnParams,
    pub norm_ffn: Norm,
}

#[derive(Clone, Debug)]
pub struct DecoderLayer {
    pub self_attn: MhaParams,
    pub norm_self: Norm,
    pub cross_attn: MhaParams,
    pub norm_cross: Norm,
    pub ffn: FfnParams,
    pub norm_ffn: Norm,
}

/// Shared pieces of a layer forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Sublayer {
    pub dropout: f64,
    pub eps: f64,
}

impl Sublayer {
    fn wrap(&self, g: &mut Graph, p: &[Var], x: Var, fx: Var, norm: &Norm) -> Result<Var> {
        let fx = g.dropout(fx, self.dropout)?;
        let s = g.add(x, fx)?;
        g.layer_norm(s, p[norm.gain.0], p[norm.bias.0], self.eps)
    }
}

/// Fixed sinusoidal table `[len, d]`: even columns `sin(pos / 10000^(2i/d))`,
/// odd columns the matching cosine.
pub fn positional_encoding(len: usize, d: usize) -> Result<Tensor> {
    let mut data = vec![0.0; len * d];
    for pos in 0..len {
        for i in 0..d {
            let pair = (i / 2 * 2) as f64;
            let angle = pos as f64 / 10000f64.powf(pair / d as f64);
            data[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(&[len, d], data)
}

impl Embedding {
    fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        cfg: &ModelConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let d = cfg.d_model;
        let value_w = store.add_weight(format!("{prefix}.value_w"), cfg.in_channels, d, rng)?;
        let value_b = store.add_zeros(format!("{prefix}.value_b"), &[d])?;
        let time_w = if cfg.embedding_mode.temporal() {
            Some(store.add_weight(format!("{prefix}.time_w"), cfg.time_features, d, rng)?)
        } else {
            None
        };
        Ok(Embedding {
            value_w,
            value_b,
            time_w,
            positional: cfg.embedding_mode.positional(),
            width: d,
        })
    }

    pub fn mode(&self) -> EmbeddingMode {
        match (self.positional, self.time_w.is_some()) {
            (true, true) => EmbeddingMode::ValuePositionalTemporal,
            (false, true) => EmbeddingMode::ValueTemporal,
            _ => EmbeddingMode::ValuePositional,
        }
    }
}

/// Value projection per position, plus the sinusoidal table and/or a
/// projection of the time marks.
pub fn embed(g: &mut Graph, p: &[Var], x: Var, marks: Option<Var>, emb: &Embedding) -> Result<Var> {
    let dims = g.dims(x).to_vec();
    let channels = g.dims(p[emb.value_w.0])[0];
    if dims.len() != 3 || dims[2] != channels {
        return Err(Error::shape("embed", &dims, &[0, 0, channels]));
    }
    let v = g.matmul(x, p[emb.value_w.0])?;
    let mut out = g.add(v, p[emb.value_b.0])?;
    if emb.positional {
        let pe = g.constant(positional_encoding(dims[1], emb.width)?)?;
        out = g.add(out, pe)?;
    }
    if let Some(tw) = emb.time_w {
        let marks = marks.ok_or_else(|| {
            Error::Contract("temporal embedding requires time marks in the batch".into())
        })?;
        let t = g.matmul(marks, p[tw.0])?;
        out = g.add(out, t)?;
    }
    Ok(out)
}

pub fn encoder_forward(
    g: &mut Graph,
    p: &[Var],
    x: Var,
    layers: &[EncoderLayer],
    sub: Sublayer,
) -> Result<Var> {
    let mut x = x;
    for layer in layers {
        let a = multi_head_attention(g, p, x, x, &layer.self_attn, None)?;
        x = sub.wrap(g, p, x, a, &layer.norm_attn)?;
        for (block, norm) in &layer.temporal {
            let t = dynamic_temporal_attention(g, p, x, block)?;
            x = sub.wrap(g, p, x, t, norm)?;
        }
        let f = position_wise_ffn(g, p, x, &layer.ffn)?;
        x = sub.wrap(g, p, x, f, &layer.norm_ffn)?;
    }
    Ok(x)
}

pub fn decoder_forward(
    g: &mut Graph,
    p: &[Var],
    y: Var,
    memory: Var,
    layers: &[DecoderLayer],
    sub: Sublayer,
) -> Result<Var> {
    let len = g.dims(y).get(1).copied().unwrap_or(0);
    let mask = make_causal_mask(len.max(1))?;
    let mut y = y;
    for layer in layers {
        let s = multi_head_attention(g, p, y, y, &layer.self_attn, Some(&mask))?;
        y = sub.wrap(g, p, y, s, &layer.norm_self)?;
        let c = multi_head_attention(g, p, y, memory, &layer.cross_attn, None)?;
        y = sub.wrap(g, p, y, c, &layer.norm_cross)?;
        let f = position_wise_ffn(g, p, y, &layer.ffn)?;
        y = sub.wrap(g, p, y, f, &layer.norm_ffn)?;
    }
    Ok(y)
}

/// Embeddings, encoder, decoder and the per-position output projection.
#[derive(Clone, Debug)]
pub struct TransformerNet {
    pub enc_embed: Embedding,
    pub dec_embed: Embedding,
    pub encoder: Vec<EncoderLayer>,
    pub decoder: Vec<DecoderLayer>,
    pub proj_w: ParamId,
    pub proj_b: ParamId,
    pub sub: Sublayer,
    pub horizon: usize,
}

impl TransformerNet {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        cfg: &ModelConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let mha = |store: &mut ParamStore, prefix: String, rng: &mut R| {
            MhaParams::new(store, &prefix, d, cfg.heads, cfg.scale_mode, cfg.mask_mode, rng)
        };
        let enc_embed = Embedding::new(store, "enc_embed", cfg, rng)?;
        let dec_embed = Embedding::new(store, "dec_embed", cfg, rng)?;
        let mut encoder = Vec::with_capacity(cfg.n_enc);
        for l in 0..cfg.n_enc {
            let pre = format!("encoder.{l}");
            let self_attn = mha(store, format!("{pre}.self_attn"), rng)?;
            let norm_attn = Norm::new(store, &format!("{pre}.norm_attn"), d)?;
            let mut temporal = Vec::with_capacity(cfg.n_temporal_blocks);
            for t in 0..cfg.n_temporal_blocks {
                let block = TemporalAttentionParams::new(store, &format!("{pre}.temporal.{t}"), d, rng)?;
                let norm = Norm::new(store, &format!("{pre}.temporal.{t}.norm"), d)?;
                temporal.push((block, norm));
            }
            let ffn = FfnParams::new(store, &format!("{pre}.ffn"), d, cfg.d_ff, cfg.activation, rng)?;
            let norm_ffn = Norm::new(store, &format!("{pre}.norm_ffn"), d)?;
            encoder.push(EncoderLayer {
                self_attn,
                norm_attn,
                temporal,
                ffn,
                norm_ffn,
            });
        }
        let mut decoder = Vec::with_capacity(cfg.n_dec);
        for l in 0..cfg.n_dec {
            let pre = format!("decoder.{l}");
            let self_attn = mha(store, format!("{pre}.self_attn"), rng)?;
            let norm_self = Norm::new(store, &format!("{pre}.norm_self"), d)?;
            let cross_attn = mha(store, format!("{pre}.cross_attn"), rng)?;
            let norm_cross = Norm::new(store, &format!("{pre}.norm_cross"), d)?;
            let ffn = FfnParams::new(store, &format!("{pre}.ffn"), d, cfg.d_ff, cfg.activation, rng)?;
            let norm_ffn = Norm::new(store, &format!("{pre}.norm_ffn"), d)?;
            decoder.push(DecoderLayer {
                self_attn,
                norm_self,
                cross_attn,
                norm_cross,
                ffn,
                norm_ffn,
            });
        }
        let proj_w = store.add_weight("proj.w", d, cfg.out_channels, rng)?;
        let proj_b = store.add_zeros("proj.b", &[cfg.out_channels])?;
        Ok(TransformerNet {
            enc_embed,
            dec_embed,
            encoder,
            decoder,
            proj_w,
            proj_b,
            sub: Sublayer {
                dropout: cfg.dropout,
                eps: cfg.layer_norm_eps,
            },
            horizon: cfg.horizon,
        })
    }

    /// Decoder outputs for every decoder position, `[B, label_len + horizon, out]`.
    pub fn forward_all(&self, g: &mut Graph, p: &[Var], batch: &ForecastBatch) -> Result<Var> {
        let enc_in = g.constant(batch.enc_in.clone())?;
        let dec_in = g.constant(batch.dec_in.clone())?;
        let enc_mark = batch.enc_mark.clone().map(|m| g.constant(m)).transpose()?;
        let dec_mark = batch.dec_mark.clone().map(|m| g.constant(m)).transpose()?;

        let x = embed(g, p, enc_in, enc_mark, &self.enc_embed)?;
        let x = g.dropout(x, self.sub.dropout)?;
        let memory = encoder_forward(g, p, x, &self.encoder, self.sub)?;

        let y = embed(g, p, dec_in, dec_mark, &self.dec_embed)?;
        let y = g.dropout(y, self.sub.dropout)?;
        let y = decoder_forward(g, p, y, memory, &self.decoder, self.sub)?;
        let out = g.matmul(y, p[self.proj_w.0])?;
        g.add(out, p[self.proj_b.0])
    }

    /// Forecast for the last `horizon` decoder positions, `[B, horizon, out]`.
    pub fn forward(&self, g: &mut Graph, p: &[Var], batch: &ForecastBatch) -> Result<Var> {
        let all = self.forward_all(g, p, batch)?;
        let len = g.dims(all)[1];
        if len < self.horizon {
            return Err(Error::shape("decoder input", g.dims(all), &[0, self.horizon, 0]));
        }
        g.narrow(all, 1, len - self.horizon, self.horizon)
    }
}
