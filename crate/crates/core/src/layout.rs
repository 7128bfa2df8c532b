//! The shared token space.
//!
//! Every record flattens into one vector: vital cells first in
//! channel-major order (`channel * hours + (hour - 1)`), then the
//! aggregated features. Attention weights, attributions and fidelity
//! masks all index into this space, so the ordering is part of the
//! public contract.

use serde::{Deserialize, Serialize};

pub const CHANNELS: usize = 7;
pub const HOURS: usize = 24;
pub const FEATURES: usize = 196;

/// Grid and feature dimensions of a cohort.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Layout {
    pub channels: usize,
    pub hours: usize,
    pub features: usize,
}

impl Default for Layout {
    fn default() -> Self {
        Layout::STANDARD
    }
}

impl Layout {
    /// 7 channels × 24 hours of vitals plus 196 aggregated features.
    pub const STANDARD: Layout = Layout {
        channels: CHANNELS,
        hours: HOURS,
        features: FEATURES,
    };

    pub fn vital_tokens(&self) -> usize {
        self.channels * self.hours
    }

    pub fn tokens(&self) -> usize {
        self.vital_tokens() + self.features
    }

    /// Token id of a vital cell; `hour` is 1-based.
    pub fn vital_token(&self, channel: usize, hour: usize) -> usize {
        debug_assert!(channel < self.channels && (1..=self.hours).contains(&hour));
        channel * self.hours + hour - 1
    }

    pub fn feature_token(&self, feature: usize) -> usize {
        debug_assert!(feature < self.features);
        self.vital_tokens() + feature
    }

    pub fn token(&self, id: usize) -> TokenRef {
        if id < self.vital_tokens() {
            TokenRef::Vital {
                channel: id / self.hours,
                hour: id % self.hours + 1,
            }
        } else {
            TokenRef::Aggregated {
                feature: id - self.vital_tokens(),
            }
        }
    }
}

/// Position of a token in the record.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TokenRef {
    Vital { channel: usize, hour: usize },
    Aggregated { feature: usize },
}

/// Serializable registry entry naming one token.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TokenInfo {
    Vital { channel: usize, hour: usize },
    Aggregated { feature: String },
}

/// Registry for every token of `layout`, naming aggregated features by
/// `feature_names`.
pub fn token_registry(layout: &Layout, feature_names: &[String]) -> Vec<TokenInfo> {
    (0..layout.tokens())
        .map(|id| match layout.token(id) {
            TokenRef::Vital { channel, hour } => TokenInfo::Vital { channel, hour },
            TokenRef::Aggregated { feature } => TokenInfo::Aggregated {
                feature: feature_names
                    .get(feature)
                    .cloned()
                    .unwrap_or_else(|| format!("agg_{feature}")),
            },
        })
        .collect()
}
