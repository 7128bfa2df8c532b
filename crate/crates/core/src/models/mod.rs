//! The hierarchical attention model, its pretraining autoencoder, and the
//! logistic and LSTM-fusion baselines.
//!
//! Every model keeps its parameters in a [`ParamStore`] under stable
//! dotted names (`enc.*` for the vital encoder) and scores batches of
//! 364-token vectors through the [`Classifier`] trait.

mod attention;
mod baselines;
mod checkpoint;
mod encoder;
mod hierarchical;

use attnfid_tensor::{Bound, ParamStore, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::Layout;

pub use attention::{scaled_dot_attention, MultiHeadAttention};
pub use baselines::{LogisticModel, LstmFusionModel};
pub use checkpoint::{
    Checkpoint, CheckpointKind, ParamRecord, TrainedModel, CHECKPOINT_SCHEMA_VERSION,
};
pub use encoder::{VitalDecoder, VitalEncoder};
pub use hierarchical::{
    AttentionOutput, FeatureEmbedder, FusionAttention, MortalityModel, VitalAutoencoder,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Attention,
    Logistic,
    Lstm,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Attention => "attention",
            ModelKind::Logistic => "logistic",
            ModelKind::Lstm => "lstm",
        }
    }
}

/// How the vital encoder mixes tokens.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderAttention {
    /// Hours within a channel, then channels within an hour.
    #[default]
    Factorized,
    /// One attention over every channel-hour token.
    Full,
}

/// How the 364 tokens are combined into one prediction vector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// One learned query attends over all tokens.
    #[default]
    ClassQuery,
    /// Full token self-attention followed by mean pooling.
    SelfAttentionPool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub layout: Layout,
    pub d: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    pub lstm_hidden: usize,
    pub encoder_attention: EncoderAttention,
    pub fusion: FusionMode,
    /// L2 strength of the logistic baseline.
    pub l2: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layout: Layout::STANDARD,
            d: 32,
            layers: 2,
            heads: 4,
            ffn_hidden: 64,
            lstm_hidden: 32,
            encoder_attention: EncoderAttention::Factorized,
            fusion: FusionMode::ClassQuery,
            l2: 1e-4,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let l = self.layout;
        if l.channels == 0 || l.hours == 0 || l.features == 0 {
            return Err(Error::Config(
                "layout needs channels, hours and features".into(),
            ));
        }
        if self.d == 0 || self.heads == 0 || self.d % self.heads != 0 {
            return Err(Error::Config(format!(
                "model width {} must be a positive multiple of the head count {}",
                self.d, self.heads
            )));
        }
        if self.ffn_hidden == 0 || self.lstm_hidden == 0 {
            return Err(Error::Config("hidden sizes must be positive".into()));
        }
        if !(self.l2 >= 0.0) {
            return Err(Error::Config(format!(
                "L2 strength {} must be non-negative",
                self.l2
            )));
        }
        Ok(())
    }
}

/// Model inputs for a batch of records.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// `[B × channels × hours]`
    pub vitals: Tensor,
    /// `[B × features]`
    pub aggregated: Tensor,
}

impl Batch {
    /// Splits token vectors (vitals then aggregated) into model inputs.
    pub fn from_tokens<R: AsRef<[f64]>>(layout: &Layout, rows: &[R]) -> Result<Batch> {
        if rows.is_empty() {
            return Err(Error::Input("empty batch".into()));
        }
        let nv = layout.vital_tokens();
        let mut vitals = Vec::with_capacity(rows.len() * nv);
        let mut aggregated = Vec::with_capacity(rows.len() * layout.features);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != layout.tokens() {
                return Err(Error::Input(format!(
                    "row {i} has {} tokens, expected {}",
                    row.len(),
                    layout.tokens()
                )));
            }
            if let Some(t) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::Input(format!("row {i}: token {t} is not finite")));
            }
            vitals.extend_from_slice(&row[..nv]);
            aggregated.extend_from_slice(&row[nv..]);
        }
        Ok(Batch {
            vitals: Tensor::new(vec![rows.len(), layout.channels, layout.hours], vitals)?,
            aggregated: Tensor::new(vec![rows.len(), layout.features], aggregated)?,
        })
    }

    pub fn len(&self) -> usize {
        self.vitals.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Records scored per tape during inference.
pub const SCORE_CHUNK: usize = 64;

/// A trainable binary classifier over token vectors.
pub trait Classifier: Send + Sync {
    fn kind(&self) -> ModelKind;
    fn config(&self) -> &ModelConfig;
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;

    /// Probabilities `[B]` for `batch`.
    fn forward(&self, tape: &mut Tape, bound: &Bound, batch: &Batch) -> Result<Var>;

    /// Extra loss term added during training.
    fn penalty(&self, _tape: &mut Tape, _bound: &Bound) -> Result<Option<Var>> {
        Ok(None)
    }

    /// Probabilities for token vectors, scored in fixed-size chunks.
    fn predict(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(rows.len());
        for chunk in rows.chunks(SCORE_CHUNK) {
            let batch = Batch::from_tokens(&self.config().layout, chunk)?;
            let mut tape = Tape::new();
            let bound = self.params().bind(&mut tape, false);
            let p = self.forward(&mut tape, &bound, &batch)?;
            out.extend_from_slice(tape.value(p).data());
        }
        Ok(out)
    }
}

/// Seeded parameter initializer.
pub(crate) struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn normal(&mut self, shape: &[usize], sd: f64) -> Tensor {
        let dist = Normal::new(0.0, sd).expect("valid sd");
        let n = shape.iter().product();
        let data = (0..n).map(|_| dist.sample(&mut self.rng)).collect();
        Tensor::new(shape.to_vec(), data).expect("shape matches data")
    }

    /// Glorot-scaled normal weights for a `fan_in → fan_out` map.
    pub fn weight(&mut self, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
        self.normal(shape, (2.0 / (fan_in + fan_out) as f64).sqrt())
    }
}

/// Black-box probability function over token vectors.
pub trait Scorer: Sync {
    fn score(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>>;
}

impl<C: Classifier> Scorer for C {
    fn score(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.predict(rows)
    }
}

/// Adapts a closure scoring one row at a time.
pub struct FnScorer<F>(pub F);

impl<F: Fn(&[f64]) -> f64 + Sync> Scorer for FnScorer<F> {
    fn score(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        Ok(rows.iter().map(|r| (self.0)(r)).collect())
    }
}

/// Scores each row with the model of the fold that held it out.
/// `route[i]` is the model index for row `i`; rows must arrive in that
/// order.
pub struct FoldRouted<'a> {
    pub models: Vec<&'a dyn Classifier>,
    pub route: Vec<usize>,
}

impl Scorer for FoldRouted<'_> {
    fn score(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        if rows.len() != self.route.len() {
            return Err(Error::Input(format!(
                "routed scorer expects {} rows, got {}",
                self.route.len(),
                rows.len()
            )));
        }
        let mut out = vec![0.0; rows.len()];
        for (m, model) in self.models.iter().enumerate() {
            let idx: Vec<usize> = (0..rows.len()).filter(|&i| self.route[i] == m).collect();
            if idx.is_empty() {
                continue;
            }
            let subset: Vec<Vec<f64>> = idx.iter().map(|&i| rows[i].clone()).collect();
            for (&i, p) in idx.iter().zip(model.predict(&subset)?) {
                out[i] = p;
            }
        }
        Ok(out)
    }
}
