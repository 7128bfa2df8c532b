//! Self-describing JSON checkpoints.
//!
//! A checkpoint holds the model configuration and every named parameter
//! with its shape. Floats are written in shortest round-trip form, so a
//! load followed by a save reproduces the file byte for byte.

use std::path::Path;

use attnfid_tensor::{Bound, ParamStore, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{
    Batch, Classifier, LogisticModel, LstmFusionModel, ModelConfig, ModelKind, MortalityModel,
    VitalAutoencoder,
};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    Autoencoder,
    Attention,
    Logistic,
    Lstm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub kind: CheckpointKind,
    pub d: usize,
    #[serde(rename = "L")]
    pub layers: usize,
    #[serde(rename = "H")]
    pub heads: usize,
    pub seed: u64,
    pub config: ModelConfig,
    pub params: Vec<ParamRecord>,
}

impl Checkpoint {
    fn capture(kind: CheckpointKind, config: &ModelConfig, store: &ParamStore) -> Checkpoint {
        Checkpoint {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            kind,
            d: config.d,
            layers: config.layers,
            heads: config.heads,
            seed: config.seed,
            config: config.clone(),
            params: store
                .iter()
                .map(|p| ParamRecord {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                    values: p.value.data().to_vec(),
                })
                .collect(),
        }
    }

    pub fn of_autoencoder(model: &VitalAutoencoder) -> Checkpoint {
        Checkpoint::capture(CheckpointKind::Autoencoder, &model.config, &model.store)
    }

    /// Overwrites every parameter of `store`; names and shapes must match
    /// exactly.
    fn restore(&self, store: &mut ParamStore) -> Result<()> {
        if self.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::Model(format!(
                "checkpoint schema {} is not supported (expected {CHECKPOINT_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.params.len() != store.len() {
            return Err(Error::Model(format!(
                "checkpoint has {} parameters, model has {}",
                self.params.len(),
                store.len()
            )));
        }
        for rec in &self.params {
            let id = store
                .find(&rec.name)
                .ok_or_else(|| Error::Model(format!("unknown parameter {}", rec.name)))?;
            let value = Tensor::new(rec.shape.clone(), rec.values.clone())
                .map_err(|e| Error::Model(format!("parameter {}: {e}", rec.name)))?;
            let p = store.get_mut(id);
            if p.value.shape() != value.shape() {
                return Err(Error::Model(format!(
                    "parameter {} has shape {:?}, model expects {:?}",
                    rec.name,
                    value.shape(),
                    p.value.shape()
                )));
            }
            if !value.all_finite() {
                return Err(Error::Model(format!(
                    "parameter {} holds non-finite values",
                    rec.name
                )));
            }
            p.value = value;
        }
        Ok(())
    }

    pub fn into_autoencoder(&self) -> Result<VitalAutoencoder> {
        if self.kind != CheckpointKind::Autoencoder {
            return Err(Error::Model(format!(
                "checkpoint holds a {:?} model",
                self.kind
            )));
        }
        let mut model = VitalAutoencoder::new(self.config.clone())?;
        self.restore(&mut model.store)?;
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Checkpoint> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        Checkpoint::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Any trained classifier.
#[derive(Clone, Debug)]
pub enum TrainedModel {
    Attention(MortalityModel),
    Logistic(LogisticModel),
    Lstm(LstmFusionModel),
}

impl TrainedModel {
    pub fn new(kind: ModelKind, config: ModelConfig) -> Result<TrainedModel> {
        Ok(match kind {
            ModelKind::Attention => TrainedModel::Attention(MortalityModel::new(config)?),
            ModelKind::Logistic => TrainedModel::Logistic(LogisticModel::new(config)?),
            ModelKind::Lstm => TrainedModel::Lstm(LstmFusionModel::new(config)?),
        })
    }

    pub fn classifier(&self) -> &dyn Classifier {
        match self {
            TrainedModel::Attention(m) => m,
            TrainedModel::Logistic(m) => m,
            TrainedModel::Lstm(m) => m,
        }
    }

    pub fn classifier_mut(&mut self) -> &mut dyn Classifier {
        match self {
            TrainedModel::Attention(m) => m,
            TrainedModel::Logistic(m) => m,
            TrainedModel::Lstm(m) => m,
        }
    }

    pub fn as_attention(&self) -> Option<&MortalityModel> {
        match self {
            TrainedModel::Attention(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_logistic(&self) -> Option<&LogisticModel> {
        match self {
            TrainedModel::Logistic(m) => Some(m),
            _ => None,
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let kind = match self.kind() {
            ModelKind::Attention => CheckpointKind::Attention,
            ModelKind::Logistic => CheckpointKind::Logistic,
            ModelKind::Lstm => CheckpointKind::Lstm,
        };
        Checkpoint::capture(kind, self.config(), self.params())
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<TrainedModel> {
        let kind = match ckpt.kind {
            CheckpointKind::Attention => ModelKind::Attention,
            CheckpointKind::Logistic => ModelKind::Logistic,
            CheckpointKind::Lstm => ModelKind::Lstm,
            CheckpointKind::Autoencoder => {
                return Err(Error::Model(
                    "an autoencoder checkpoint is not a classifier".into(),
                ))
            }
        };
        let mut model = TrainedModel::new(kind, ckpt.config.clone())?;
        ckpt.restore(model.params_mut())?;
        Ok(model)
    }
}

impl Classifier for TrainedModel {
    fn kind(&self) -> ModelKind {
        self.classifier().kind()
    }

    fn config(&self) -> &ModelConfig {
        self.classifier().config()
    }

    fn params(&self) -> &ParamStore {
        self.classifier().params()
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        self.classifier_mut().params_mut()
    }

    fn forward(&self, tape: &mut Tape, bound: &Bound, batch: &Batch) -> Result<Var> {
        self.classifier().forward(tape, bound, batch)
    }

    fn penalty(&self, tape: &mut Tape, bound: &Bound) -> Result<Option<Var>> {
        self.classifier().penalty(tape, bound)
    }
}
