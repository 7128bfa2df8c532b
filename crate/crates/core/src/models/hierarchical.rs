use attnfid_tensor::{Bound, ParamId, ParamStore, Tape, Tensor, Var, LEAKY_SLOPE};

use crate::error::{Error, Result};
use crate::layout::Layout;
use crate::models::attention::MultiHeadAttention;
use crate::models::encoder::{VitalDecoder, VitalEncoder};
use crate::models::{Batch, Classifier, FusionMode, Init, ModelConfig, ModelKind};

/// Channel ids and hours of a full grid batch.
fn grid_ids(layout: &Layout, batch: usize) -> (Vec<usize>, Vec<usize>) {
    let channels = (0..batch).flat_map(|_| 0..layout.channels).collect();
    let hours = (0..batch).flat_map(|_| 1..=layout.hours).collect();
    (channels, hours)
}

/// Stage-one model: the vital encoder plus a token-local decoder.
#[derive(Clone, Debug)]
pub struct VitalAutoencoder {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoder: VitalEncoder,
    pub decoder: VitalDecoder,
}

impl VitalAutoencoder {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut init = Init::new(config.seed);
        let encoder = VitalEncoder::new(&mut store, &mut init, &config);
        let decoder = VitalDecoder::new(&mut store, &mut init, config.d);
        Ok(VitalAutoencoder {
            config,
            store,
            encoder,
            decoder,
        })
    }

    /// Reconstruction of `values [B×c×t]` (same shape).
    pub(crate) fn reconstruct(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        values: Var,
        channels: &[usize],
        hours: &[usize],
    ) -> Result<Var> {
        let shape = tape.shape(values).to_vec();
        let enc = self.encoder.forward(tape, bound, values, channels, hours)?;
        let flat = self.decoder.forward(tape, bound, enc.tokens)?;
        Ok(tape.reshape(flat, &shape)?)
    }

    /// Encoder tokens `[C·T × d]` for one complete grid `[C×T]`.
    pub fn encode_vitals(&self, grid: &Tensor) -> Result<Tensor> {
        encode_grid(&self.encoder, &self.store, &self.config.layout, grid)
    }

    /// Attention weights of every encoder sub-layer for one grid, each
    /// shaped `[groups·H × n × n]`.
    pub fn encoder_attention(&self, grid: &Tensor) -> Result<Vec<Tensor>> {
        Ok(encode_grid_traced(&self.encoder, &self.store, &self.config.layout, grid)?.1)
    }

    /// Decoder output `[C×T]` for tokens `[C·T × d]`.
    pub fn decode_vitals(&self, tokens: &Tensor) -> Result<Tensor> {
        let l = self.config.layout;
        if tokens.shape() != [l.vital_tokens(), self.config.d] {
            return Err(Error::Model(format!(
                "decoder expects [{} × {}] tokens, got {:?}",
                l.vital_tokens(),
                self.config.d,
                tokens.shape()
            )));
        }
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape, false);
        let x = tape.constant(tokens.reshaped(vec![1, l.vital_tokens(), self.config.d])?);
        let out = self.decoder.forward(&mut tape, &bound, x)?;
        Ok(tape.value(out).reshaped(vec![l.channels, l.hours])?)
    }
}

fn encode_grid(
    encoder: &VitalEncoder,
    store: &ParamStore,
    layout: &Layout,
    grid: &Tensor,
) -> Result<Tensor> {
    Ok(encode_grid_traced(encoder, store, layout, grid)?.0)
}

/// Tokens plus every encoder attention weight tensor for one grid.
fn encode_grid_traced(
    encoder: &VitalEncoder,
    store: &ParamStore,
    layout: &Layout,
    grid: &Tensor,
) -> Result<(Tensor, Vec<Tensor>)> {
    if grid.shape() != [layout.channels, layout.hours] {
        return Err(Error::Model(format!(
            "vital grid must be [{} × {}], got {:?}",
            layout.channels,
            layout.hours,
            grid.shape()
        )));
    }
    if !grid.all_finite() {
        return Err(Error::Input("vital grid contains non-finite values".into()));
    }
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape, false);
    let x = tape.constant(grid.reshaped(vec![1, layout.channels, layout.hours])?);
    let (channels, hours) = grid_ids(layout, 1);
    let enc = encoder.forward(&mut tape, &bound, x, &channels, &hours)?;
    let weights = enc.weights.iter().map(|&w| tape.value(w).clone()).collect();
    Ok((
        tape.value(enc.tokens)
            .reshaped(vec![layout.vital_tokens(), encoder.d])?,
        weights,
    ))
}

/// One two-layer perceptron per aggregated feature, all evaluated at once.
#[derive(Clone, Debug)]
pub struct FeatureEmbedder {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl FeatureEmbedder {
    fn new(store: &mut ParamStore, init: &mut Init, features: usize, d: usize) -> Self {
        FeatureEmbedder {
            w1: store.add("feat.w1", init.weight(&[features, 1, d], 1, d)),
            b1: store.add("feat.b1", init.normal(&[features, d], 0.1)),
            w2: store.add("feat.w2", init.weight(&[features, d, d], d, d)),
            b2: store.add("feat.b2", Tensor::zeros(vec![features, d])),
        }
    }

    pub fn params(&self) -> [ParamId; 4] {
        [self.w1, self.b1, self.w2, self.b2]
    }

    /// `aggregated [B×F]` -> `[B×F×d]`.
    fn forward(&self, tape: &mut Tape, bound: &Bound, aggregated: Var) -> Result<Var> {
        let s = tape.shape(aggregated).to_vec();
        let x = tape.reshape(aggregated, &[s[0], s[1], 1])?;
        let h = tape.grouped_linear(x, bound[self.w1], bound[self.b1])?;
        let h = tape.leaky_relu(h, LEAKY_SLOPE);
        Ok(tape.grouped_linear(h, bound[self.w2], bound[self.b2])?)
    }
}

/// Combines the token sequence into one context vector.
#[derive(Clone, Debug)]
pub struct FusionAttention {
    pub mode: FusionMode,
    query: ParamId,
    attn: MultiHeadAttention,
}

impl FusionAttention {
    fn new(store: &mut ParamStore, init: &mut Init, cfg: &ModelConfig) -> Self {
        FusionAttention {
            mode: cfg.fusion,
            query: store.add("fusion.query", init.normal(&[1, cfg.d], 1.0)),
            attn: MultiHeadAttention::new(store, init, "fusion.attn", cfg.d, cfg.heads),
        }
    }

    pub fn attention(&self) -> &MultiHeadAttention {
        &self.attn
    }

    /// `tokens [B×N×d]` -> (context `[B×d]`, per-head token weights `[B×H×N]`).
    fn forward(&self, tape: &mut Tape, bound: &Bound, tokens: Var) -> Result<(Var, Var)> {
        let s = tape.shape(tokens).to_vec();
        let (b, n, d) = (s[0], s[1], s[2]);
        let h = self.attn.heads;
        match self.mode {
            FusionMode::ClassQuery => {
                let q = tape.gather_rows(bound[self.query], &vec![0; b])?;
                let q = tape.reshape(q, &[b, 1, d])?;
                let (out, w) = self.attn.forward(tape, bound, q, tokens)?;
                let ctx = tape.reshape(out, &[b, d])?;
                let w = tape.reshape(w, &[b, h, n])?;
                Ok((ctx, w))
            }
            FusionMode::SelfAttentionPool => {
                let (out, w) = self.attn.forward(tape, bound, tokens, tokens)?;
                let mixed = tape.add(tokens, out)?;
                let ctx = tape.mean_axis(mixed, 1)?;
                // column mean over queries: how much each token is attended to
                let w = tape.mean_axis(w, 1)?;
                let w = tape.reshape(w, &[b, h, n])?;
                Ok((ctx, w))
            }
        }
    }
}

/// Probability and per-head fusion weights `H × N` for one record.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionOutput {
    pub probability: f64,
    pub weights: Vec<Vec<f64>>,
}

/// Pretrained vital encoder, per-feature embedders, fusion attention and a
/// sigmoid head.
#[derive(Clone, Debug)]
pub struct MortalityModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoder: VitalEncoder,
    pub features: FeatureEmbedder,
    pub fusion: FusionAttention,
    head_w: ParamId,
    head_b: ParamId,
}

impl MortalityModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut init = Init::new(config.seed);
        let encoder = VitalEncoder::new(&mut store, &mut init, &config);
        let features =
            FeatureEmbedder::new(&mut store, &mut init, config.layout.features, config.d);
        let fusion = FusionAttention::new(&mut store, &mut init, &config);
        let head_w = store.add("head.w", init.weight(&[config.d, 1], config.d, 1));
        let head_b = store.add("head.b", Tensor::zeros(vec![1]));
        Ok(MortalityModel {
            config,
            store,
            encoder,
            features,
            fusion,
            head_w,
            head_b,
        })
    }

    /// Fresh model whose `enc.*` parameters are copied from `pretrained`.
    pub fn from_pretrained(config: ModelConfig, pretrained: &VitalAutoencoder) -> Result<Self> {
        let mut model = MortalityModel::new(config)?;
        model.load_encoder(&pretrained.store)?;
        Ok(model)
    }

    /// Copies every `enc.*` parameter of `source` by name.
    pub fn load_encoder(&mut self, source: &ParamStore) -> Result<()> {
        for p in source.iter().filter(|p| p.name.starts_with("enc.")) {
            let id = self.store.find(&p.name).ok_or_else(|| {
                Error::Model(format!(
                    "pretrained parameter {} has no counterpart",
                    p.name
                ))
            })?;
            let target = self.store.get_mut(id);
            if target.value.shape() != p.value.shape() {
                return Err(Error::Model(format!(
                    "pretrained parameter {} has shape {:?}, model expects {:?}",
                    p.name,
                    p.value.shape(),
                    target.value.shape()
                )));
            }
            target.value = p.value.clone();
        }
        Ok(())
    }

    pub fn head_params(&self) -> (ParamId, ParamId) {
        (self.head_w, self.head_b)
    }

    /// Probabilities `[B]` and fusion weights `[B×H×N]`.
    pub(crate) fn forward_with_weights(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        batch: &Batch,
    ) -> Result<(Var, Var)> {
        let l = self.config.layout;
        let b = batch.len();
        let vitals = tape.constant(batch.vitals.clone());
        let (channels, hours) = grid_ids(&l, b);
        let enc = self
            .encoder
            .forward(tape, bound, vitals, &channels, &hours)?;
        let agg = tape.constant(batch.aggregated.clone());
        let feats = self.features.forward(tape, bound, agg)?;
        let tokens = tape.concat(&[enc.tokens, feats], 1)?;
        let (ctx, weights) = self.fusion.forward(tape, bound, tokens)?;
        let logit = tape.linear(ctx, bound[self.head_w], bound[self.head_b])?;
        let prob = tape.sigmoid(logit);
        let prob = tape.reshape(prob, &[b])?;
        Ok((prob, weights))
    }

    /// Probability and fusion weights for each token vector.
    pub fn attention(&self, rows: &[Vec<f64>]) -> Result<Vec<AttentionOutput>> {
        let (h, n) = (self.config.heads, self.config.layout.tokens());
        let mut out = Vec::with_capacity(rows.len());
        for chunk in rows.chunks(super::SCORE_CHUNK) {
            let batch = Batch::from_tokens(&self.config.layout, chunk)?;
            let mut tape = Tape::new();
            let bound = self.store.bind(&mut tape, false);
            let (p, w) = self.forward_with_weights(&mut tape, &bound, &batch)?;
            let (pv, wv) = (tape.value(p).data(), tape.value(w).data());
            for i in 0..chunk.len() {
                out.push(AttentionOutput {
                    probability: pv[i],
                    weights: (0..h)
                        .map(|k| wv[(i * h + k) * n..(i * h + k + 1) * n].to_vec())
                        .collect(),
                });
            }
        }
        Ok(out)
    }

    /// Probability and `H × 364` fusion weights for one token vector.
    pub fn fuse_and_predict(&self, tokens: &[f64]) -> Result<AttentionOutput> {
        Ok(self.attention(&[tokens.to_vec()])?.remove(0))
    }

    /// Encoder tokens `[C·T × d]` for one complete grid `[C×T]`.
    pub fn encode_vitals(&self, grid: &Tensor) -> Result<Tensor> {
        encode_grid(&self.encoder, &self.store, &self.config.layout, grid)
    }

    /// Feature tokens `[F × d]` for one aggregated vector.
    pub fn embed_features(&self, aggregated: &[f64]) -> Result<Tensor> {
        let f = self.config.layout.features;
        if aggregated.len() != f || aggregated.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input(format!(
                "expected {f} finite aggregated values"
            )));
        }
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape, false);
        let x = tape.constant(Tensor::new(vec![1, f], aggregated.to_vec())?);
        let out = self.features.forward(&mut tape, &bound, x)?;
        Ok(tape.value(out).reshaped(vec![f, self.config.d])?)
    }
}

impl Classifier for MortalityModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Attention
    }

    fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn forward(&self, tape: &mut Tape, bound: &Bound, batch: &Batch) -> Result<Var> {
        self.forward_with_weights(tape, bound, batch)
            .map(|(p, _)| p)
    }
}
