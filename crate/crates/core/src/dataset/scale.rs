//! Min-max scaling: one range per aggregated feature and one per vital
//! channel pooled over all hours and patients.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::dataset::record::{Cohort, Stage};
use crate::error::{Error, Result};
use crate::layout::{Layout, TokenRef};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub fn is_constant(&self) -> bool {
        self.max <= self.min
    }

    pub fn scale(&self, x: f64) -> f64 {
        if self.is_constant() {
            0.0
        } else {
            (x - self.min) / (self.max - self.min)
        }
    }

    pub fn unscale(&self, y: f64) -> f64 {
        if self.is_constant() {
            self.min
        } else {
            self.min + y * (self.max - self.min)
        }
    }
}

/// Fitted ranges, kept for inverse mapping in visualizations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinMaxRegistry {
    pub layout: Layout,
    pub channels: Vec<Range>,
    pub features: Vec<Range>,
    pub warnings: Vec<String>,
}

/// Scales an imputed cohort into `[0, 1]`.
pub fn minmax_normalize(cohort: &Cohort) -> Result<(Cohort, MinMaxRegistry)> {
    let registry = MinMaxRegistry::fit(cohort)?;
    let scaled = registry.transform(cohort)?;
    Ok((scaled, registry))
}

impl MinMaxRegistry {
    pub fn fit(cohort: &Cohort) -> Result<MinMaxRegistry> {
        cohort.require_stage("normalization", &[Stage::Imputed])?;
        let l = cohort.layout;
        let empty = Range {
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
        };
        let mut channels = vec![empty; l.channels];
        let mut features = vec![empty; l.features];
        for r in &cohort.records {
            for t in 0..l.tokens() {
                let v = r.cell(t).ok_or_else(|| {
                    Error::State(format!("stay {} still has missing values", r.stay_id))
                })?;
                let range = match l.token(t) {
                    TokenRef::Vital { channel, .. } => &mut channels[channel],
                    TokenRef::Aggregated { feature } => &mut features[feature],
                };
                range.min = range.min.min(v);
                range.max = range.max.max(v);
            }
        }
        let mut warnings = Vec::new();
        for (c, range) in channels.iter().enumerate() {
            if range.is_constant() {
                warnings.push(format!(
                    "vital channel {} is constant; scaled to 0",
                    cohort.channel_names[c]
                ));
            }
        }
        for (f, range) in features.iter().enumerate() {
            if range.is_constant() {
                warnings.push(format!(
                    "feature {} is constant; scaled to 0",
                    cohort.feature_names[f]
                ));
            }
        }
        for w in &warnings {
            warn!("{w}");
        }
        Ok(MinMaxRegistry {
            layout: l,
            channels,
            features,
            warnings,
        })
    }

    pub fn range_of(&self, token: usize) -> Range {
        match self.layout.token(token) {
            TokenRef::Vital { channel, .. } => self.channels[channel],
            TokenRef::Aggregated { feature } => self.features[feature],
        }
    }

    /// Applies the fitted ranges, clipping into `[0, 1]` for cohorts other
    /// than the one fitted on.
    pub fn transform(&self, cohort: &Cohort) -> Result<Cohort> {
        cohort.require_stage("normalization", &[Stage::Imputed])?;
        if cohort.layout != self.layout {
            return Err(Error::State(
                "scaler was fitted on a different layout".into(),
            ));
        }
        let mut out = cohort.with_records(cohort.records.clone());
        for r in &mut out.records {
            for t in 0..self.layout.tokens() {
                let range = self.range_of(t);
                let cell = r.cell_mut(t);
                let v =
                    cell.ok_or_else(|| Error::State("missing value reached normalization".into()))?;
                *cell = Some(range.scale(v).clamp(0.0, 1.0));
            }
        }
        out.stage = Stage::Normalized;
        Ok(out)
    }

    /// Maps a scaled token value back to original units.
    pub fn inverse(&self, token: usize, value: f64) -> f64 {
        self.range_of(token).unscale(value)
    }
}
