use attnfid_tensor::{Adam, AdamConfig, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Batch, Classifier, ModelKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Whether stage two keeps updating the pretrained encoder.
    pub finetune_encoder: bool,
    pub folds: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 32,
            lr: 1e-3,
            seed: 0,
            finetune_encoder: true,
            folds: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::Config(format!(
                "fold count must be at least 2, got {}",
                self.folds
            )));
        }
        if self.batch_size == 0 || !(self.lr > 0.0) {
            return Err(Error::Config(
                "training needs a positive batch size and learning rate".into(),
            ));
        }
        Ok(())
    }
}

/// Minimizes mean cross-entropy (plus the model's penalty) over `rows`.
/// Returns the mean batch loss of every epoch.
pub fn train_classifier<M: Classifier + ?Sized>(
    model: &mut M,
    rows: &[Vec<f64>],
    labels: &[u8],
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    if rows.len() != labels.len() {
        return Err(Error::Training(format!(
            "{} rows for {} labels",
            rows.len(),
            labels.len()
        )));
    }
    let pos = labels.iter().filter(|&&y| y == 1).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::Training(
            "training split holds a single class".into(),
        ));
    }
    if cfg.batch_size == 0 || !(cfg.lr > 0.0) {
        return Err(Error::Config(
            "training needs a positive batch size and learning rate".into(),
        ));
    }
    if model.kind() == ModelKind::Attention {
        model
            .params_mut()
            .set_trainable_prefix("enc.", cfg.finetune_encoder);
    }
    let layout = model.config().layout;
    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        model.params(),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch_rows: Vec<&Vec<f64>> = chunk.iter().map(|&i| &rows[i]).collect();
            let batch = Batch::from_tokens(&layout, &batch_rows)?;
            let y = Tensor::new(
                vec![chunk.len()],
                chunk.iter().map(|&i| f64::from(labels[i])).collect(),
            )?;
            let mut tape = Tape::new();
            let bound = model.params().bind(&mut tape, true);
            let prob = model.forward(&mut tape, &bound, &batch)?;
            let mut loss = tape.bce_loss(prob, &y)?;
            if let Some(pen) = model.penalty(&mut tape, &bound)? {
                loss = tape.add(loss, pen)?;
            }
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Training(format!(
                    "training loss diverged at epoch {epoch}"
                )));
            }
            tape.backward(loss)?;
            let store = model.params_mut();
            store.accumulate_grads(&tape, &bound);
            adam.step(store)?;
            total += value;
            batches += 1;
        }
        curve.push(total / batches as f64);
    }
    Ok(curve)
}
