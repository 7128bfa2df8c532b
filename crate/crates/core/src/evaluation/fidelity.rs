use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{auprc, auroc};
use crate::exec::Exec;
use crate::explain::rank_desc;
use crate::models::Scorer;
use crate::seed::derive_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Replace the most important tokens.
    Plus,
    /// Replace the least important tokens.
    Minus,
}

impl Direction {
    pub fn symbol(self) -> &'static str {
        match self {
            Direction::Plus => "+",
            Direction::Minus => "-",
        }
    }
}

/// What replaces a masked token value.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Substitution {
    /// A fresh draw from Uniform[0, 1].
    #[default]
    Uniform,
    /// The same token's value in another record picked at random.
    Permutation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FidelityConfig {
    pub fractions: Vec<f64>,
    pub draws: usize,
    pub seed: u64,
    pub substitution: Substitution,
    pub exec: Exec,
}

impl Default for FidelityConfig {
    fn default() -> Self {
        FidelityConfig {
            fractions: vec![0.05, 0.1, 0.2],
            draws: 10,
            seed: 0,
            substitution: Substitution::Uniform,
            exec: Exec::default(),
        }
    }
}

impl FidelityConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fractions.is_empty() {
            return Err(Error::Config(
                "fidelity needs at least one masking fraction".into(),
            ));
        }
        if let Some(f) = self.fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
            return Err(Error::Config(format!(
                "masking fraction {f} is outside (0, 1]"
            )));
        }
        if self.draws == 0 {
            return Err(Error::Config(
                "fidelity needs at least one substitution draw".into(),
            ));
        }
        Ok(())
    }
}

/// Tokens masked at `fraction` of `n`.
pub fn masked_count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64).ceil() as usize).min(n)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricPoint {
    pub metric: String,
    pub baseline: f64,
    pub perturbed: f64,
    pub delta: f64,
}

impl MetricPoint {
    fn new(metric: &str, baseline: f64, perturbed: f64) -> Self {
        MetricPoint {
            metric: metric.into(),
            baseline,
            perturbed,
            delta: perturbed - baseline,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidelityRung {
    pub fraction: f64,
    pub k: usize,
    pub auroc: MetricPoint,
    pub auprc: MetricPoint,
    pub mean_prob: MetricPoint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub model: String,
    pub method: String,
    pub direction: Direction,
    pub substitution: Substitution,
    pub draws: usize,
    pub seed: u64,
    pub records: usize,
    pub rungs: Vec<FidelityRung>,
}

impl FidelityReport {
    /// The rung at `fraction`, if the ladder has it.
    pub fn rung(&self, fraction: f64) -> Option<&FidelityRung> {
        self.rungs
            .iter()
            .find(|r| (r.fraction - fraction).abs() < 1e-12)
    }
}

/// Mean probability assigned to each record's true label.
pub fn mean_true_prob(probs: &[f64], labels: &[u8]) -> f64 {
    probs
        .iter()
        .zip(labels)
        .map(|(p, &y)| if y == 1 { *p } else { 1.0 - p })
        .sum::<f64>()
        / probs.len() as f64
}

struct Scores {
    auroc: f64,
    auprc: f64,
    mean_prob: f64,
}

fn score_all(scorer: &dyn Scorer, rows: &[Vec<f64>], labels: &[u8]) -> Result<Scores> {
    let p = scorer.score(rows)?;
    if p.len() != rows.len() {
        return Err(Error::Model(format!(
            "scorer returned {} values for {} rows",
            p.len(),
            rows.len()
        )));
    }
    Ok(Scores {
        auroc: auroc(&p, labels)?,
        auprc: auprc(&p, labels)?,
        mean_prob: mean_true_prob(&p, labels),
    })
}

/// Fidelity of `attributions` for `scorer` over `rows`. Each rung masks
/// the top (plus) or bottom (minus) `ceil(fraction · n)` tokens of every
/// record, rescores, and averages the metrics over `draws` seeded
/// substitutions. One attribution vector is broadcast to every record.
#[allow(clippy::too_many_arguments)]
pub fn fidelity(
    scorer: &dyn Scorer,
    rows: &[Vec<f64>],
    labels: &[u8],
    attributions: &[Vec<f64>],
    direction: Direction,
    cfg: &FidelityConfig,
    model: &str,
    method: &str,
) -> Result<FidelityReport> {
    cfg.validate()?;
    if rows.is_empty() || rows.len() != labels.len() {
        return Err(Error::Input(format!(
            "{} rows for {} labels",
            rows.len(),
            labels.len()
        )));
    }
    let n = rows[0].len();
    if attributions.len() != 1 && attributions.len() != rows.len() {
        return Err(Error::Input(format!(
            "{} attributions for {} records",
            attributions.len(),
            rows.len()
        )));
    }
    if attributions.iter().any(|a| a.len() != n) || rows.iter().any(|r| r.len() != n) {
        return Err(Error::Size(format!(
            "every row and attribution must have {n} tokens"
        )));
    }
    let rankings: Vec<Vec<usize>> = attributions.iter().map(|a| rank_desc(a)).collect();
    let ranking = |i: usize| &rankings[if rankings.len() == 1 { 0 } else { i }];
    let base = score_all(scorer, rows, labels)?;

    let mut rungs = Vec::with_capacity(cfg.fractions.len());
    for (rung, &fraction) in cfg.fractions.iter().enumerate() {
        let k = masked_count(fraction, n);
        let rung_seed = derive_seed(cfg.seed, rung as u64);
        let per_draw = cfg.exec.try_map(cfg.draws, |r| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(rung_seed, r as u64));
            let perturbed: Vec<Vec<f64>> = rows
                .iter()
                .enumerate()
                .map(|(i, row)| {
                    let order = ranking(i);
                    let masked = match direction {
                        Direction::Plus => &order[..k],
                        Direction::Minus => &order[n - k..],
                    };
                    let mut out = row.clone();
                    for &t in masked {
                        out[t] = match cfg.substitution {
                            Substitution::Uniform => rng.random::<f64>(),
                            Substitution::Permutation => rows[rng.random_range(0..rows.len())][t],
                        };
                    }
                    out
                })
                .collect();
            score_all(scorer, &perturbed, labels)
        })?;
        let mean = |f: fn(&Scores) -> f64| per_draw.iter().map(f).sum::<f64>() / cfg.draws as f64;
        rungs.push(FidelityRung {
            fraction,
            k,
            auroc: MetricPoint::new("auroc", base.auroc, mean(|s| s.auroc)),
            auprc: MetricPoint::new("auprc", base.auprc, mean(|s| s.auprc)),
            mean_prob: MetricPoint::new("mean_prob", base.mean_prob, mean(|s| s.mean_prob)),
        });
    }
    Ok(FidelityReport {
        model: model.into(),
        method: method.into(),
        direction,
        substitution: cfg.substitution,
        draws: cfg.draws,
        seed: cfg.seed,
        records: rows.len(),
        rungs,
    })
}
