use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::record::{Cohort, Stage};
use crate::error::{Error, Result};

/// Keeps every minority-class record and a seeded uniform sample (without
/// replacement) of the majority class of equal size. Surviving records
/// keep their original relative order.
///
/// Runs on raw cohorts (before per-fold preprocessing) or on normalized
/// ones (after global preprocessing); never between imputation and
/// scaling.
pub fn undersample_balance(cohort: &Cohort, seed: u64) -> Result<Cohort> {
    cohort.require_stage("undersampling", &[Stage::Raw, Stage::Normalized])?;
    let pos: Vec<usize> = (0..cohort.len())
        .filter(|&i| cohort.records[i].label == 1)
        .collect();
    let neg: Vec<usize> = (0..cohort.len())
        .filter(|&i| cohort.records[i].label == 0)
        .collect();
    if pos.is_empty() {
        return Err(Error::Balance("cohort has no positive records".into()));
    }
    if neg.is_empty() {
        return Err(Error::Balance("cohort has no negative records".into()));
    }
    let (minority, majority) = if pos.len() <= neg.len() {
        (pos, neg)
    } else {
        (neg, pos)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = rand::seq::index::sample(&mut rng, majority.len(), minority.len());
    let mut keep: Vec<usize> = minority;
    keep.extend(picked.iter().map(|k| majority[k]));
    keep.sort_unstable();
    let mut out = cohort.subset(&keep);
    out.balanced = true;
    Ok(out)
}
