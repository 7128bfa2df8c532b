//! Token attributions: fusion attention, KernelSHAP with an exact
//! Shapley oracle, and absolute logistic weights.

mod shap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::{token_registry, Layout, TokenInfo};
use crate::models::{LogisticModel, MortalityModel};

pub use shap::{
    exact_shapley, kernel_shap, shapley_kernel, CoalitionSample, ShapConfig, ShapResult,
    EXACT_LIMIT,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Attention,
    Shap,
    Weight,
    /// Uniform random scores, a floor for fidelity comparisons.
    Random,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Attention => "attention",
            Method::Shap => "shap",
            Method::Weight => "weight",
            Method::Random => "random",
        }
    }
}

/// Importance score per token. `stay_id` is absent for global attributions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub method: Method,
    pub stay_id: Option<String>,
    pub scores: Vec<f64>,
}

/// Serialized attribution with its token registry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributionDoc {
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stay_id: Option<String>,
    pub scores: Vec<f64>,
    pub token_registry: Vec<TokenInfo>,
}

impl Attribution {
    pub fn new(method: Method, stay_id: Option<String>, scores: Vec<f64>) -> Result<Self> {
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::Model(format!(
                "{} score for token {i} is not finite",
                method.name()
            )));
        }
        Ok(Attribution {
            method,
            stay_id,
            scores,
        })
    }

    /// Token ids ordered by descending score, ties broken by lower id.
    pub fn ranking(&self) -> Vec<usize> {
        rank_desc(&self.scores)
    }

    pub fn top_k(&self, k: usize) -> Vec<usize> {
        let mut r = self.ranking();
        r.truncate(k);
        r
    }

    pub fn to_doc(&self, layout: &Layout, feature_names: &[String]) -> Result<AttributionDoc> {
        if self.scores.len() != layout.tokens() {
            return Err(Error::Size(format!(
                "attribution has {} scores, layout has {} tokens",
                self.scores.len(),
                layout.tokens()
            )));
        }
        Ok(AttributionDoc {
            method: self.method,
            stay_id: self.stay_id.clone(),
            scores: self.scores.clone(),
            token_registry: token_registry(layout, feature_names),
        })
    }

    pub fn to_json(&self, layout: &Layout, feature_names: &[String]) -> Result<String> {
        Ok(serde_json::to_string(&self.to_doc(layout, feature_names)?)?)
    }

    pub fn from_json(text: &str) -> Result<Attribution> {
        let doc: AttributionDoc = serde_json::from_str(text)?;
        if doc.scores.len() != doc.token_registry.len() {
            return Err(Error::Size(format!(
                "{} scores for {} registry entries",
                doc.scores.len(),
                doc.token_registry.len()
            )));
        }
        Attribution::new(doc.method, doc.stay_id, doc.scores)
    }
}

/// Indices of `scores` by descending value, ties by ascending index.
pub fn rank_desc(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

fn check_finite(model: &MortalityModel) -> Result<()> {
    for p in model.store.iter() {
        if !p.value.all_finite() {
            return Err(Error::Model(format!(
                "parameter {} holds non-finite values",
                p.name
            )));
        }
    }
    Ok(())
}

/// Fusion attention of the classification query, averaged over heads.
pub fn attention_importance(
    model: &MortalityModel,
    stay_id: Option<String>,
    tokens: &[f64],
) -> Result<Attribution> {
    Ok(attention_importances(model, &[(stay_id, tokens.to_vec())])?.remove(0))
}

/// [`attention_importance`] for many records, scored in batches.
pub fn attention_importances(
    model: &MortalityModel,
    records: &[(Option<String>, Vec<f64>)],
) -> Result<Vec<Attribution>> {
    check_finite(model)?;
    let rows: Vec<Vec<f64>> = records.iter().map(|(_, r)| r.clone()).collect();
    let outputs = model.attention(&rows)?;
    records
        .iter()
        .zip(outputs)
        .map(|((id, _), out)| {
            let h = out.weights.len() as f64;
            let mut scores = vec![0.0; out.weights[0].len()];
            for head in &out.weights {
                for (s, w) in scores.iter_mut().zip(head) {
                    *s += w / h;
                }
            }
            Attribution::new(Method::Attention, id.clone(), scores)
        })
        .collect()
}

/// Global importance `|w_f|` of a logistic model.
pub fn logistic_weight_importance(model: &LogisticModel) -> Result<Attribution> {
    Attribution::new(
        Method::Weight,
        None,
        model.weights().iter().map(|w| w.abs()).collect(),
    )
}

/// Uniform random scores for `n` tokens.
pub fn random_attribution(n: usize, stay_id: Option<String>, seed: u64) -> Attribution {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Attribution {
        method: Method::Random,
        stay_id,
        scores: (0..n).map(|_| rng.random::<f64>()).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelConfig;

    #[test]
    fn weight_scores_are_absolute() {
        let mut m = LogisticModel::new(ModelConfig::default()).unwrap();
        let mut w = vec![0.0; 364];
        w[0] = 3.0;
        w[1] = -4.0;
        m.set_weights(&w, 0.5);
        let a = logistic_weight_importance(&m).unwrap();
        assert_eq!(&a.scores[..3], &[3.0, 4.0, 0.0]);
        assert_eq!(a.top_k(2), vec![1, 0]);
        assert!(a.stay_id.is_none());
    }

    #[test]
    fn ranking_breaks_ties_by_index() {
        assert_eq!(rank_desc(&[1.0, 2.0, 1.0, 2.0]), vec![1, 3, 0, 2]);
    }

    #[test]
    fn json_round_trip() {
        let a = random_attribution(364, Some("s1".into()), 3);
        let names: Vec<String> = (0..196).map(|i| format!("f{i}")).collect();
        let text = a.to_json(&Layout::STANDARD, &names).unwrap();
        assert!(text.contains("\"token_registry\""));
        assert_eq!(Attribution::from_json(&text).unwrap(), a);
    }

    #[test]
    fn non_finite_scores_rejected() {
        assert!(Attribution::new(Method::Shap, None, vec![0.0, f64::NAN]).is_err());
    }
}
