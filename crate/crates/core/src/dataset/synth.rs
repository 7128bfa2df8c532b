//! Synthetic cohorts with a known set of label-relevant tokens.
//!
//! Vitals are mean-reverting random walks clipped to `[0, 1]`. For
//! positive stays a few planted channels drift upward over the late hours
//! and a few planted aggregated features are shifted upward. Everything
//! else carries no label information.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::record::{Cohort, PatientRecord};
use crate::error::{Error, Result};
use crate::layout::Layout;

/// Leading aggregated features treated as demographics: never knocked out,
/// so imputation always has fully observed columns.
pub const DEMOGRAPHIC_FEATURES: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n: usize,
    pub positive_fraction: f64,
    pub seed: u64,
    pub missing_fraction: f64,
    /// Rise reached at the last hour by planted channels of positive stays.
    pub drift: f64,
    /// Upward shift of planted features for positive stays.
    pub feature_shift: f64,
    pub planted_channels: usize,
    pub planted_features: usize,
    pub layout: Layout,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n: 600,
            positive_fraction: 0.5,
            seed: 7,
            missing_fraction: 0.05,
            drift: 0.3,
            feature_shift: 0.3,
            planted_channels: 2,
            planted_features: 10,
            layout: Layout::STANDARD,
        }
    }
}

/// The planted token set, as written next to a synthetic cohort.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub important_tokens: Vec<usize>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Synthetic {
    pub cohort: Cohort,
    pub truth: GroundTruth,
    pub planted_channels: Vec<usize>,
    pub planted_features: Vec<usize>,
    /// First hour (1-based) of the late drift.
    pub drift_start: usize,
}

/// First drifting hour: the last 9 of 24 hours, scaled to other grids.
pub fn drift_start(hours: usize) -> usize {
    hours - (3 * hours) / 8 + 1
}

pub fn synth_generate(n: usize, positive_fraction: f64, seed: u64) -> Result<Synthetic> {
    generate(&SynthConfig {
        n,
        positive_fraction,
        seed,
        ..SynthConfig::default()
    })
}

pub fn generate(cfg: &SynthConfig) -> Result<Synthetic> {
    let l = cfg.layout;
    if cfg.n < 10 {
        return Err(Error::Config(format!(
            "synthetic cohort needs n >= 10, got {}",
            cfg.n
        )));
    }
    if !(cfg.positive_fraction > 0.0 && cfg.positive_fraction < 1.0) {
        return Err(Error::Config(format!(
            "positive fraction {} outside (0, 1)",
            cfg.positive_fraction
        )));
    }
    if !(0.0..1.0).contains(&cfg.missing_fraction) {
        return Err(Error::Config(format!(
            "missing fraction {} outside [0, 1)",
            cfg.missing_fraction
        )));
    }
    let demographics = DEMOGRAPHIC_FEATURES.min(l.features);
    if cfg.planted_channels > l.channels || cfg.planted_features > l.features - demographics {
        return Err(Error::Config(
            "more planted tokens than the layout holds".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, 0.05).expect("valid sd");
    let spread = Normal::new(0.0, 0.15).expect("valid sd");

    let mut planted_channels: Vec<usize> =
        rand::seq::index::sample(&mut rng, l.channels, cfg.planted_channels).into_vec();
    planted_channels.sort_unstable();
    let mut planted_features: Vec<usize> =
        rand::seq::index::sample(&mut rng, l.features - demographics, cfg.planted_features)
            .into_iter()
            .map(|f| f + demographics)
            .collect();
    planted_features.sort_unstable();
    let centers: Vec<f64> = (0..l.features)
        .map(|f| {
            if planted_features.contains(&f) {
                0.35
            } else {
                rng.random_range(0.25..0.75)
            }
        })
        .collect();

    let n_pos = ((cfg.n as f64) * cfg.positive_fraction).round() as usize;
    let mut labels: Vec<u8> = (0..cfg.n).map(|i| u8::from(i < n_pos)).collect();
    labels.shuffle(&mut rng);

    let start = drift_start(l.hours);
    let late = (l.hours - start + 1) as f64;
    let width = cfg.n.to_string().len().max(4);
    let mut records = Vec::with_capacity(cfg.n);
    for (i, &label) in labels.iter().enumerate() {
        let mut vitals = Vec::with_capacity(l.vital_tokens());
        for c in 0..l.channels {
            let base = rng.random_range(0.3..0.7);
            let mut x = base + noise.sample(&mut rng);
            for h in 1..=l.hours {
                if h > 1 {
                    x = base + 0.8 * (x - base) + noise.sample(&mut rng);
                }
                let mut v = x;
                if label == 1 && h >= start && planted_channels.contains(&c) {
                    v += cfg.drift * (h - start + 1) as f64 / late;
                }
                vitals.push(Some(v.clamp(0.0, 1.0)));
            }
        }
        let aggregated: Vec<Option<f64>> = (0..l.features)
            .map(|f| {
                let mut v = centers[f] + spread.sample(&mut rng);
                if label == 1 && planted_features.contains(&f) {
                    v += cfg.feature_shift;
                }
                Some(v.clamp(0.0, 1.0))
            })
            .collect();
        let mut record = PatientRecord {
            stay_id: format!("s{:0width$}", i + 1),
            vitals,
            aggregated,
            label,
        };
        if cfg.missing_fraction > 0.0 {
            for t in 0..l.tokens() {
                let knocked = rng.random::<f64>() < cfg.missing_fraction;
                let protected = t >= l.vital_tokens() && t - l.vital_tokens() < demographics;
                if knocked && !protected {
                    *record.cell_mut(t) = None;
                }
            }
        }
        records.push(record);
    }

    let mut important: Vec<usize> = planted_channels
        .iter()
        .flat_map(|&c| (start..=l.hours).map(move |h| l.vital_token(c, h)))
        .chain(planted_features.iter().map(|&f| l.feature_token(f)))
        .collect();
    important.sort_unstable();
    let cohort = Cohort::new(
        l,
        records,
        format!("synthetic n={} seed={}", cfg.n, cfg.seed),
    )?;
    Ok(Synthetic {
        cohort,
        truth: GroundTruth {
            important_tokens: important,
            seed: cfg.seed,
        },
        planted_channels,
        planted_features,
        drift_start: start,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_split_follows_fraction() {
        let s = synth_generate(100, 0.5, 1).unwrap();
        assert_eq!(s.cohort.positives(), 50);
        assert_eq!(s.truth.important_tokens.len(), 2 * 9 + 10);
        assert_eq!(s.drift_start, 16);
    }

    #[test]
    fn same_seed_same_cohort() {
        let a = synth_generate(50, 0.3, 9).unwrap();
        let b = synth_generate(50, 0.3, 9).unwrap();
        assert_eq!(a, b);
        let c = synth_generate(50, 0.3, 10).unwrap();
        assert_ne!(a.cohort.records, c.cohort.records);
    }

    #[test]
    fn planted_channels_rise_late_for_positives() {
        let s = synth_generate(200, 0.5, 4).unwrap();
        let l = s.cohort.layout;
        let (mut late, mut early) = (0.0, 0.0);
        for r in s.cohort.records.iter().filter(|r| r.label == 1) {
            for &c in &s.planted_channels {
                let mean = |hours: std::ops::RangeInclusive<usize>| {
                    let v: Vec<f64> = hours.filter_map(|h| r.vital(&l, c, h)).collect();
                    v.iter().sum::<f64>() / v.len() as f64
                };
                late += mean(16..=24);
                early += mean(1..=8);
            }
        }
        assert!(late > early, "late {late} early {early}");
    }

    #[test]
    fn demographics_never_missing() {
        let s = synth_generate(100, 0.5, 2).unwrap();
        assert!(s.cohort.records.iter().any(|r| !r.is_complete()));
        for r in &s.cohort.records {
            assert!(r.aggregated[..DEMOGRAPHIC_FEATURES]
                .iter()
                .all(Option::is_some));
        }
    }

    #[test]
    fn rejects_tiny_cohorts() {
        assert!(matches!(synth_generate(9, 0.5, 1), Err(Error::Config(_))));
    }
}
