//! Experiment configuration: one JSON document, validated before any work.

use std::path::{Path, PathBuf};

use attnfid::dataset::{MiceConfig, SynthConfig};
use attnfid::evaluation::{FidelityConfig, Substitution};
use attnfid::explain::Method;
use attnfid::models::{ModelConfig, ModelKind};
use attnfid::training::{PretrainConfig, TrainConfig};
use attnfid::Exec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::failure::{Failure, Outcome};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synth(SynthConfig),
    Csv {
        path: PathBuf,
        /// The file already holds imputed, min-max scaled values.
        #[serde(default)]
        preprocessed: bool,
    },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synth(SynthConfig::default())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessSettings {
    /// Undersample the majority class to a 50-50 cohort first.
    pub balance: bool,
    pub mice: MiceConfig,
}

impl Default for PreprocessSettings {
    fn default() -> Self {
        PreprocessSettings {
            balance: true,
            mice: MiceConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainSettings {
    pub methods: Vec<Method>,
    pub shap_samples: usize,
    /// Out-of-fold records explained with KernelSHAP, half from each class.
    pub shap_records: usize,
    /// Positive records exported as case studies (attention model only).
    pub case_studies: usize,
}

impl Default for ExplainSettings {
    fn default() -> Self {
        ExplainSettings {
            methods: vec![
                Method::Attention,
                Method::Shap,
                Method::Weight,
                Method::Random,
            ],
            shap_samples: 4096,
            shap_records: 20,
            case_studies: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FidelitySettings {
    pub fractions: Vec<f64>,
    pub draws: usize,
    pub substitution: Substitution,
    /// Rung shown in the rendered table.
    pub headline_fraction: f64,
}

impl Default for FidelitySettings {
    fn default() -> Self {
        let base = FidelityConfig::default();
        FidelitySettings {
            fractions: base.fractions,
            draws: base.draws,
            substitution: base.substitution,
            headline_fraction: 0.1,
        }
    }
}

fn default_models() -> Vec<ModelKind> {
    vec![ModelKind::Attention, ModelKind::Logistic, ModelKind::Lstm]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub data: DataSource,
    #[serde(default)]
    pub preprocess: PreprocessSettings,
    #[serde(default = "default_models")]
    pub models: Vec<ModelKind>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub pretrain: PretrainConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub explain: ExplainSettings,
    #[serde(default)]
    pub fidelity: FidelitySettings,
    /// Used when the command line names no output directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub exec: Exec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            data: DataSource::default(),
            preprocess: PreprocessSettings::default(),
            models: default_models(),
            model: ModelConfig::default(),
            pretrain: PretrainConfig::default(),
            train: TrainConfig::default(),
            explain: ExplainSettings::default(),
            fidelity: FidelitySettings::default(),
            output_dir: None,
            exec: Exec::default(),
        }
    }
}

/// 1-based line of the first occurrence of `"key"` in `text`.
fn line_of(text: &str, key: &str) -> usize {
    let quoted = format!("\"{key}\"");
    text.lines()
        .position(|l| l.contains(&quoted))
        .map_or(1, |i| i + 1)
}

impl ExperimentConfig {
    /// Parses and validates a config document. Errors name the source and
    /// the line they refer to.
    pub fn parse(text: &str, source: &str) -> Outcome<ExperimentConfig> {
        let cfg: ExperimentConfig = serde_json::from_str(text)
            .map_err(|e| Failure::Config(format!("{source}:{}:{}: {e}", e.line(), e.column())))?;
        cfg.validate().map_err(|(key, msg)| {
            Failure::Config(format!("{source}:{}: {msg}", line_of(text, key)))
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Outcome<ExperimentConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("{}: cannot read config: {e}", path.display())))?;
        ExperimentConfig::parse(&text, &path.display().to_string())
    }

    /// Checks every section; on failure returns the offending key.
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        if self.train.folds < 2 {
            return Err((
                "folds",
                format!("fold count must be at least 2, got {}", self.train.folds),
            ));
        }
        self.train
            .validate()
            .map_err(|e| ("train", e.to_string()))?;
        self.model
            .validate()
            .map_err(|e| ("model", e.to_string()))?;
        self.pretrain
            .validate(self.model.layout.hours)
            .map_err(|e| ("pretrain", e.to_string()))?;
        if self.models.is_empty() {
            return Err(("models", "at least one model kind is required".into()));
        }
        for (i, m) in self.models.iter().enumerate() {
            if self.models[..i].contains(m) {
                return Err(("models", format!("model kind {} listed twice", m.name())));
            }
        }
        for (i, m) in self.explain.methods.iter().enumerate() {
            if self.explain.methods[..i].contains(m) {
                return Err(("methods", format!("method {} listed twice", m.name())));
            }
            let needs = match m {
                Method::Attention => Some(ModelKind::Attention),
                Method::Weight => Some(ModelKind::Logistic),
                _ => None,
            };
            if let Some(kind) = needs.filter(|k| !self.models.contains(k)) {
                return Err((
                    "methods",
                    format!("method {} needs the {} model", m.name(), kind.name()),
                ));
            }
        }
        if self.explain.methods.contains(&Method::Shap) {
            let tokens = self.model.layout.tokens();
            let enumerable = tokens < 63 && (1u64 << tokens) <= self.explain.shap_samples as u64;
            if !enumerable && self.explain.shap_samples < 2 * tokens + 2 {
                return Err((
                    "shap_samples",
                    format!(
                        "KernelSHAP over {tokens} tokens needs at least {} samples",
                        2 * tokens + 2
                    ),
                ));
            }
            if self.explain.shap_records < 2 {
                return Err((
                    "shap_records",
                    "KernelSHAP fidelity needs at least 2 records".into(),
                ));
            }
        }
        self.fidelity_config(0)
            .validate()
            .map_err(|e| ("fidelity", e.to_string()))?;
        if !self
            .fidelity
            .fractions
            .contains(&self.fidelity.headline_fraction)
        {
            return Err((
                "headline_fraction",
                format!(
                    "headline fraction {} is not one of the configured fractions",
                    self.fidelity.headline_fraction
                ),
            ));
        }
        if let DataSource::Synth(s) = &self.data {
            if s.layout != self.model.layout {
                return Err(("layout", "synthetic and model layouts differ".into()));
            }
            if s.n < 10 || !(s.positive_fraction > 0.0 && s.positive_fraction < 1.0) {
                return Err((
                    "synth",
                    "synthetic cohort needs n >= 10 and a positive fraction in (0, 1)".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn fidelity_config(&self, seed: u64) -> FidelityConfig {
        FidelityConfig {
            fractions: self.fidelity.fractions.clone(),
            draws: self.fidelity.draws,
            seed,
            substitution: self.fidelity.substitution,
            exec: self.exec,
        }
    }

    /// SHA-256 of the canonical JSON form, output directory excluded.
    pub fn hash(&self) -> String {
        let canonical = ExperimentConfig {
            output_dir: None,
            ..self.clone()
        };
        hash_json(&canonical)
    }
}

/// SHA-256 hex digest of a value's JSON serialization.
pub fn hash_json<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config values serialize");
    hex(&Sha256::digest(bytes))
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_takes_defaults() {
        let cfg = ExperimentConfig::parse("{}", "t.json").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.train.folds, 10);
    }

    #[test]
    fn unknown_key_is_reported_with_its_line() {
        let text = "{\n  \"seed\": 1,\n  \"sede\": 2\n}";
        let err = ExperimentConfig::parse(text, "t.json").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("t.json:3:"), "{msg}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn semantic_errors_point_at_the_key() {
        let text = "{\n  \"seed\": 1,\n  \"train\": {\n    \"folds\": 1\n  }\n}";
        let msg = ExperimentConfig::parse(text, "t.json")
            .unwrap_err()
            .to_string();
        assert!(msg.contains("t.json:4:"), "{msg}");
    }

    #[test]
    fn hash_ignores_output_dir() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig {
            output_dir: Some("elsewhere".into()),
            ..a.clone()
        };
        assert_eq!(a.hash(), b.hash());
        let c = ExperimentConfig {
            seed: 1,
            ..a.clone()
        };
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
