use attnfid_tensor::{Bound, ParamId, ParamStore, Tape, Tensor, Var, LEAKY_SLOPE};

use crate::error::{Error, Result};
use crate::models::attention::MultiHeadAttention;
use crate::models::{EncoderAttention, Init, ModelConfig};

#[derive(Clone, Debug)]
struct Norm {
    gamma: ParamId,
    beta: ParamId,
}

impl Norm {
    fn new(store: &mut ParamStore, prefix: &str, d: usize) -> Self {
        Norm {
            gamma: store.add(format!("{prefix}.g"), Tensor::ones(vec![d])),
            beta: store.add(format!("{prefix}.b"), Tensor::zeros(vec![d])),
        }
    }

    fn apply(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        Ok(tape.layer_norm(x, bound[self.gamma], bound[self.beta])?)
    }
}

/// Pre-norm residual attention: `x + Attn(LN(x))`.
#[derive(Clone, Debug)]
struct AttentionSublayer {
    norm: Norm,
    attn: MultiHeadAttention,
}

impl AttentionSublayer {
    fn new(store: &mut ParamStore, init: &mut Init, prefix: &str, d: usize, heads: usize) -> Self {
        AttentionSublayer {
            norm: Norm::new(store, &format!("{prefix}.ln"), d),
            attn: MultiHeadAttention::new(store, init, &format!("{prefix}.attn"), d, heads),
        }
    }

    /// `x: [G×n×d]`
    fn apply(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<(Var, Var)> {
        let h = self.norm.apply(tape, bound, x)?;
        let (a, w) = self.attn.forward(tape, bound, h, h)?;
        Ok((tape.add(x, a)?, w))
    }
}

#[derive(Clone, Debug)]
struct FeedForward {
    norm: Norm,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl FeedForward {
    fn new(store: &mut ParamStore, init: &mut Init, prefix: &str, d: usize, hidden: usize) -> Self {
        FeedForward {
            norm: Norm::new(store, &format!("{prefix}.ln"), d),
            w1: store.add(format!("{prefix}.w1"), init.weight(&[d, hidden], d, hidden)),
            b1: store.add(format!("{prefix}.b1"), Tensor::zeros(vec![hidden])),
            w2: store.add(format!("{prefix}.w2"), init.weight(&[hidden, d], hidden, d)),
            b2: store.add(format!("{prefix}.b2"), Tensor::zeros(vec![d])),
        }
    }

    fn apply(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        let d = *shape.last().expect("non-scalar");
        let rows = shape.iter().product::<usize>() / d;
        let h = self.norm.apply(tape, bound, x)?;
        let h = tape.reshape(h, &[rows, d])?;
        let h = tape.linear(h, bound[self.w1], bound[self.b1])?;
        let h = tape.leaky_relu(h, LEAKY_SLOPE);
        let h = tape.linear(h, bound[self.w2], bound[self.b2])?;
        let h = tape.reshape(h, &shape)?;
        Ok(tape.add(x, h)?)
    }
}

#[derive(Clone, Debug)]
struct Block {
    /// Hours within a channel, or every token under full attention.
    temporal: AttentionSublayer,
    spatial: Option<AttentionSublayer>,
    ffn: FeedForward,
}

/// Token embedding plus learned channel and hour embeddings, followed by
/// alternating temporal/spatial attention blocks.
#[derive(Clone, Debug)]
pub struct VitalEncoder {
    pub d: usize,
    pub mode: EncoderAttention,
    embed_w: ParamId,
    embed_b: ParamId,
    channel_emb: ParamId,
    hour_emb: ParamId,
    blocks: Vec<Block>,
    final_norm: Norm,
}

/// Encoder tokens `[B×n×d]` and every attention weight tensor produced.
pub(crate) struct Encoded {
    pub tokens: Var,
    pub weights: Vec<Var>,
}

impl VitalEncoder {
    pub(crate) fn new(store: &mut ParamStore, init: &mut Init, cfg: &ModelConfig) -> Self {
        let (d, l) = (cfg.d, cfg.layout);
        let embed_w = store.add("enc.embed.w", init.weight(&[1, d], 1, d));
        let embed_b = store.add("enc.embed.b", Tensor::zeros(vec![d]));
        let channel_emb = store.add("enc.channel", init.normal(&[l.channels, d], 0.1));
        let hour_emb = store.add("enc.hour", init.normal(&[l.hours, d], 0.1));
        let blocks = (0..cfg.layers)
            .map(|i| {
                let p = format!("enc.block{i}");
                let temporal =
                    AttentionSublayer::new(store, init, &format!("{p}.temporal"), d, cfg.heads);
                let spatial = (cfg.encoder_attention == EncoderAttention::Factorized).then(|| {
                    AttentionSublayer::new(store, init, &format!("{p}.spatial"), d, cfg.heads)
                });
                let ffn = FeedForward::new(store, init, &format!("{p}.ffn"), d, cfg.ffn_hidden);
                Block {
                    temporal,
                    spatial,
                    ffn,
                }
            })
            .collect();
        let final_norm = Norm::new(store, "enc.final_ln", d);
        VitalEncoder {
            d,
            mode: cfg.encoder_attention,
            embed_w,
            embed_b,
            channel_emb,
            hour_emb,
            blocks,
            final_norm,
        }
    }

    pub fn embedding_params(&self) -> (ParamId, ParamId, ParamId, ParamId) {
        (self.embed_w, self.embed_b, self.channel_emb, self.hour_emb)
    }

    /// Encodes `values [B×c×t]`. `channels` gives the channel id of each
    /// of the `B·c` rows and `hours` the 1-based hour of each column, per
    /// batch entry (`B·t` values). Tokens come out channel-major:
    /// `[B × c·t × d]`.
    pub(crate) fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        values: Var,
        channels: &[usize],
        hours: &[usize],
    ) -> Result<Encoded> {
        let s = tape.shape(values).to_vec();
        let (b, c, t, d) = (s[0], s[1], s[2], self.d);
        if channels.len() != b * c || hours.len() != b * t {
            return Err(Error::Model(format!(
                "encoder got {} channel ids and {} hours for input {s:?}",
                channels.len(),
                hours.len()
            )));
        }
        if let Some(&h) = hours.iter().find(|&&h| h == 0) {
            return Err(Error::Model(format!(
                "hour {h} is outside the 1-based grid"
            )));
        }
        let flat = tape.reshape(values, &[b * c * t, 1])?;
        let emb = tape.linear(flat, bound[self.embed_w], bound[self.embed_b])?;
        let channel_rows: Vec<usize> = channels
            .iter()
            .flat_map(|&ch| std::iter::repeat(ch).take(t))
            .collect();
        let hour_rows: Vec<usize> = (0..b)
            .flat_map(|bi| {
                (0..c).flat_map(move |_| hours[bi * t..(bi + 1) * t].iter().map(|h| h - 1))
            })
            .collect();
        let ce = tape.gather_rows(bound[self.channel_emb], &channel_rows)?;
        let he = tape.gather_rows(bound[self.hour_emb], &hour_rows)?;
        let pos = tape.add(ce, he)?;
        let x = tape.add(emb, pos)?;
        let mut x = tape.reshape(x, &[b, c, t, d])?;

        let mut weights = Vec::new();
        for block in &self.blocks {
            match &block.spatial {
                Some(spatial) => {
                    let h = tape.reshape(x, &[b * c, t, d])?;
                    let (h, w) = block.temporal.apply(tape, bound, h)?;
                    weights.push(w);
                    let h = tape.reshape(h, &[b, c, t, d])?;
                    let h = tape.permute(h, &[0, 2, 1, 3])?;
                    let h = tape.reshape(h, &[b * t, c, d])?;
                    let (h, w) = spatial.apply(tape, bound, h)?;
                    weights.push(w);
                    let h = tape.reshape(h, &[b, t, c, d])?;
                    x = tape.permute(h, &[0, 2, 1, 3])?;
                }
                None => {
                    let h = tape.reshape(x, &[b, c * t, d])?;
                    let (h, w) = block.temporal.apply(tape, bound, h)?;
                    weights.push(w);
                    x = tape.reshape(h, &[b, c, t, d])?;
                }
            }
            x = block.ffn.apply(tape, bound, x)?;
        }
        let x = self.final_norm.apply(tape, bound, x)?;
        let tokens = tape.reshape(x, &[b, c * t, d])?;
        Ok(Encoded { tokens, weights })
    }
}

/// Per-token linear map back to one value.
#[derive(Clone, Debug)]
pub struct VitalDecoder {
    w: ParamId,
    b: ParamId,
}

impl VitalDecoder {
    pub(crate) fn new(store: &mut ParamStore, init: &mut Init, d: usize) -> Self {
        VitalDecoder {
            w: store.add("dec.w", init.weight(&[d, 1], d, 1)),
            b: store.add("dec.b", Tensor::zeros(vec![1])),
        }
    }

    pub fn params(&self) -> (ParamId, ParamId) {
        (self.w, self.b)
    }

    /// `tokens [B×n×d]` -> `[B×n]`.
    pub(crate) fn forward(&self, tape: &mut Tape, bound: &Bound, tokens: Var) -> Result<Var> {
        let s = tape.shape(tokens).to_vec();
        let flat = tape.reshape(tokens, &[s[0] * s[1], s[2]])?;
        let out = tape.linear(flat, bound[self.w], bound[self.b])?;
        Ok(tape.reshape(out, &[s[0], s[1]])?)
    }
}
