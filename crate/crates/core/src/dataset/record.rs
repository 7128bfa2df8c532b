use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::layout::Layout;

/// One ICU stay. Vital cells are stored channel-major; `None` is missing.
#[derive(Clone, Debug, PartialEq)]
pub struct PatientRecord {
    pub stay_id: String,
    pub vitals: Vec<Option<f64>>,
    pub aggregated: Vec<Option<f64>>,
    /// 1 = death inside the prediction window.
    pub label: u8,
}

impl PatientRecord {
    /// Record with every value present.
    pub fn complete(
        stay_id: impl Into<String>,
        vitals: &[f64],
        aggregated: &[f64],
        label: u8,
    ) -> Self {
        PatientRecord {
            stay_id: stay_id.into(),
            vitals: vitals.iter().copied().map(Some).collect(),
            aggregated: aggregated.iter().copied().map(Some).collect(),
            label,
        }
    }

    pub fn vital(&self, layout: &Layout, channel: usize, hour: usize) -> Option<f64> {
        self.vitals[layout.vital_token(channel, hour)]
    }

    pub fn is_complete(&self) -> bool {
        self.vitals
            .iter()
            .chain(&self.aggregated)
            .all(Option::is_some)
    }

    pub fn missing_count(&self) -> usize {
        self.vitals
            .iter()
            .chain(&self.aggregated)
            .filter(|v| v.is_none())
            .count()
    }

    /// Flat token vector (vitals then aggregated). Fails on missing or
    /// non-finite values.
    pub fn tokens(&self) -> Result<Vec<f64>> {
        self.vitals
            .iter()
            .chain(&self.aggregated)
            .enumerate()
            .map(|(i, v)| match v {
                Some(x) if x.is_finite() => Ok(*x),
                Some(x) => Err(Error::Input(format!(
                    "stay {}: token {i} is {x}",
                    self.stay_id
                ))),
                None => Err(Error::Input(format!(
                    "stay {}: token {i} is missing",
                    self.stay_id
                ))),
            })
            .collect()
    }

    /// Cell by flat token id.
    pub(crate) fn cell(&self, token: usize) -> Option<f64> {
        let nv = self.vitals.len();
        if token < nv {
            self.vitals[token]
        } else {
            self.aggregated[token - nv]
        }
    }

    pub(crate) fn cell_mut(&mut self, token: usize) -> &mut Option<f64> {
        let nv = self.vitals.len();
        if token < nv {
            &mut self.vitals[token]
        } else {
            &mut self.aggregated[token - nv]
        }
    }
}

/// Preprocessing progress of a cohort. Steps must run in this order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Raw,
    Imputed,
    Normalized,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cohort {
    pub layout: Layout,
    pub records: Vec<PatientRecord>,
    pub feature_names: Vec<String>,
    pub channel_names: Vec<String>,
    pub provenance: String,
    pub(crate) stage: Stage,
    pub(crate) balanced: bool,
}

impl Cohort {
    /// Validates shapes and stay-id uniqueness.
    pub fn new(
        layout: Layout,
        records: Vec<PatientRecord>,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        let mut seen = HashSet::new();
        for (i, r) in records.iter().enumerate() {
            if r.vitals.len() != layout.vital_tokens() || r.aggregated.len() != layout.features {
                return Err(Error::Schema {
                    row: i + 1,
                    detail: format!(
                        "stay {} has {} vital cells and {} aggregated values, expected {} and {}",
                        r.stay_id,
                        r.vitals.len(),
                        r.aggregated.len(),
                        layout.vital_tokens(),
                        layout.features
                    ),
                });
            }
            if r.label > 1 {
                return Err(Error::Integrity(format!(
                    "stay {} has label {}",
                    r.stay_id, r.label
                )));
            }
            if !seen.insert(r.stay_id.as_str()) {
                return Err(Error::Integrity(format!("duplicate stay_id {}", r.stay_id)));
            }
        }
        Ok(Cohort {
            layout,
            records,
            feature_names: default_feature_names(layout.features),
            channel_names: default_channel_names(layout.channels),
            provenance: provenance.into(),
            stage: Stage::Raw,
            balanced: false,
        })
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn is_balanced(&self) -> bool {
        self.balanced
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.records.iter().map(|r| r.label).collect()
    }

    pub fn positives(&self) -> usize {
        self.records.iter().filter(|r| r.label == 1).count()
    }

    pub fn find(&self, stay_id: &str) -> Option<usize> {
        self.records.iter().position(|r| r.stay_id == stay_id)
    }

    /// Token vectors of every record.
    pub fn token_matrix(&self) -> Result<Vec<Vec<f64>>> {
        self.records.iter().map(PatientRecord::tokens).collect()
    }

    /// Sub-cohort of the given record indices, sharing registries and stage.
    pub fn subset(&self, indices: &[usize]) -> Cohort {
        Cohort {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            ..self.with_records(Vec::new())
        }
    }

    pub(crate) fn with_records(&self, records: Vec<PatientRecord>) -> Cohort {
        Cohort {
            layout: self.layout,
            records,
            feature_names: self.feature_names.clone(),
            channel_names: self.channel_names.clone(),
            provenance: self.provenance.clone(),
            stage: self.stage,
            balanced: self.balanced,
        }
    }

    /// Declares an externally preprocessed cohort ready for modelling:
    /// every value present and inside `[0, 1]`.
    pub fn mark_preprocessed(mut self) -> Result<Self> {
        for r in &self.records {
            let tokens = r.tokens()?;
            if let Some((i, v)) = tokens
                .iter()
                .enumerate()
                .find(|(_, v)| !(0.0..=1.0).contains(*v))
            {
                return Err(Error::Input(format!(
                    "stay {}: token {i} = {v} lies outside [0, 1]",
                    r.stay_id
                )));
            }
        }
        self.stage = Stage::Normalized;
        Ok(self)
    }

    pub(crate) fn require_stage(&self, op: &str, allowed: &[Stage]) -> Result<()> {
        if allowed.contains(&self.stage) {
            Ok(())
        } else {
            Err(Error::State(format!(
                "{op} cannot run on a cohort at stage {:?} (allowed: {allowed:?})",
                self.stage
            )))
        }
    }
}

pub fn default_feature_names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("agg_{i}")).collect()
}

pub fn default_channel_names(n: usize) -> Vec<String> {
    (0..n).map(|c| format!("c{c}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Layout {
        Layout {
            channels: 1,
            hours: 2,
            features: 1,
        }
    }

    #[test]
    fn duplicate_stay_ids_rejected() {
        let r = PatientRecord::complete("a", &[0.1, 0.2], &[0.3], 0);
        let err = Cohort::new(tiny(), vec![r.clone(), r], "test").unwrap_err();
        assert!(matches!(err, Error::Integrity(_)));
    }

    #[test]
    fn tokens_require_complete_values() {
        let mut r = PatientRecord::complete("a", &[0.1, 0.2], &[0.3], 0);
        assert_eq!(r.tokens().unwrap(), vec![0.1, 0.2, 0.3]);
        r.vitals[1] = None;
        assert!(matches!(r.tokens(), Err(Error::Input(_))));
    }
}
