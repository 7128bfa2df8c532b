use std::collections::HashMap;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::explain::{Attribution, Method};
use crate::models::Scorer;

/// Largest player count [`exact_shapley`] will enumerate.
pub const EXACT_LIMIT: usize = 12;

const SCORE_BATCH: usize = 64;
const RIDGE: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapConfig {
    pub n_samples: usize,
    pub seed: u64,
    /// Players; every token when absent. Other tokens stay at background.
    pub active: Option<Vec<usize>>,
    pub exec: Exec,
}

impl Default for ShapConfig {
    fn default() -> Self {
        ShapConfig {
            n_samples: 4096,
            seed: 0,
            active: None,
            exec: Exec::default(),
        }
    }
}

/// A coalition over the active players and its regression weight.
#[derive(Clone, Debug, PartialEq)]
pub struct CoalitionSample {
    pub mask: Vec<bool>,
    pub weight: f64,
}

#[derive(Clone, Debug)]
pub struct ShapResult {
    pub attribution: Attribution,
    /// Scorer value at the background.
    pub base_value: f64,
    /// Scorer value at the record.
    pub full_value: f64,
    /// Whether every coalition was evaluated.
    pub enumerated: bool,
    /// Coalitions used in the fit, empty and full excluded.
    pub coalitions: Vec<CoalitionSample>,
    pub warnings: Vec<String>,
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Shapley kernel weight `(M−1) / (C(M,s)·s·(M−s))`; infinite for the
/// empty and full coalitions.
pub fn shapley_kernel(m: usize, s: usize) -> f64 {
    if s == 0 || s >= m {
        return f64::INFINITY;
    }
    (m - 1) as f64 / (binomial(m, s) * (s * (m - s)) as f64)
}

fn check_players(
    record: &[f64],
    background: &[f64],
    active: Option<&[usize]>,
) -> Result<Vec<usize>> {
    if record.len() != background.len() {
        return Err(Error::Input(format!(
            "record has {} tokens, background {}",
            record.len(),
            background.len()
        )));
    }
    if record.iter().chain(background).any(|v| !v.is_finite()) {
        return Err(Error::Input("record and background must be finite".into()));
    }
    let players = match active {
        Some(a) => a.to_vec(),
        None => (0..record.len()).collect(),
    };
    let mut seen = vec![false; record.len()];
    for &p in &players {
        if p >= record.len() || std::mem::replace(&mut seen[p], true) {
            return Err(Error::Input(format!(
                "active token {p} is out of range or repeated"
            )));
        }
    }
    if players.is_empty() {
        return Err(Error::Input("no active tokens".into()));
    }
    Ok(players)
}

fn compose(record: &[f64], background: &[f64], players: &[usize], mask: &[bool]) -> Vec<f64> {
    let mut row = background.to_vec();
    for (&p, &on) in players.iter().zip(mask) {
        if on {
            row[p] = record[p];
        }
    }
    row
}

fn evaluate(
    scorer: &dyn Scorer,
    record: &[f64],
    background: &[f64],
    players: &[usize],
    masks: &[Vec<bool>],
    exec: Exec,
) -> Result<Vec<f64>> {
    let chunks = masks.len().div_ceil(SCORE_BATCH);
    let parts = exec.try_map(chunks, |c| {
        let rows: Vec<Vec<f64>> = masks[c * SCORE_BATCH..((c + 1) * SCORE_BATCH).min(masks.len())]
            .iter()
            .map(|m| compose(record, background, players, m))
            .collect();
        let out = scorer.score(&rows)?;
        if out.len() != rows.len() || out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Model("scorer returned a malformed batch".into()));
        }
        Ok(out)
    })?;
    Ok(parts.concat())
}

/// Coalitions for `m` players: all of them when `2^m` fits the budget,
/// otherwise whole mask sizes while they fit and paired samples (a mask
/// and its complement) for the rest. Weights are in kernel units.
fn coalitions(m: usize, n_samples: usize, seed: u64) -> (Vec<CoalitionSample>, bool) {
    if m < 63 && (1u64 << m) <= n_samples as u64 {
        let all = (1u64..(1u64 << m) - 1)
            .map(|bits| {
                let mask: Vec<bool> = (0..m).map(|j| bits >> j & 1 == 1).collect();
                let s = bits.count_ones() as usize;
                CoalitionSample {
                    mask,
                    weight: shapley_kernel(m, s),
                }
            })
            .collect();
        return (all, true);
    }
    // Mass of size s is C(m,s)·kernel(s) = (m−1)/(s(m−s)).
    let mass = |s: usize| (m - 1) as f64 / (s * (m - s)) as f64;
    let mut out = Vec::new();
    let mut budget = n_samples - 2;
    let mut remaining: f64 = (1..m).map(mass).sum();
    let mut s = 1;
    while s <= m / 2 {
        let paired = s != m - s;
        let count = binomial(m, s) * if paired { 2.0 } else { 1.0 };
        let pair_mass = mass(s) * if paired { 2.0 } else { 1.0 };
        if budget as f64 * pair_mass / remaining + 1e-9 < count {
            break;
        }
        for size in if paired { vec![s, m - s] } else { vec![s] } {
            let w = shapley_kernel(m, size);
            for_each_subset(m, size, |mask| {
                out.push(CoalitionSample { mask, weight: w })
            });
        }
        budget -= count as usize;
        remaining -= pair_mass;
        s += 1;
    }
    let first_sampled = s;
    if first_sampled <= m / 2 && budget >= 2 {
        let sizes: Vec<usize> = (first_sampled..=m - first_sampled).collect();
        let cumulative: Vec<f64> = sizes
            .iter()
            .scan(0.0, |acc, &k| {
                *acc += mass(k);
                Some(*acc)
            })
            .collect();
        let total = *cumulative.last().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut index: HashMap<Vec<bool>, usize> = HashMap::new();
        let mut drawn: Vec<(Vec<bool>, usize)> = Vec::new();
        let mut draws = 0usize;
        let mut attempts = 0usize;
        while drawn.len() + 2 <= budget && attempts < 8 * budget {
            attempts += 1;
            let u = rng.random::<f64>() * total;
            let size = sizes[cumulative.partition_point(|&c| c < u).min(sizes.len() - 1)];
            let mut mask = vec![false; m];
            for j in sample(&mut rng, m, size) {
                mask[j] = true;
            }
            let complement: Vec<bool> = mask.iter().map(|b| !b).collect();
            for mk in [mask, complement] {
                draws += 1;
                match index.get(&mk) {
                    Some(&i) => drawn[i].1 += 1,
                    None => {
                        index.insert(mk.clone(), drawn.len());
                        drawn.push((mk, 1));
                    }
                }
            }
        }
        // Sampled masks share the unassigned mass in proportion to hits.
        let per_draw = remaining / draws as f64;
        for (mask, hits) in drawn {
            out.push(CoalitionSample {
                mask,
                weight: per_draw * hits as f64,
            });
        }
    }
    (out, false)
}

fn for_each_subset(m: usize, size: usize, mut f: impl FnMut(Vec<bool>)) {
    let mut idx: Vec<usize> = (0..size).collect();
    loop {
        let mut mask = vec![false; m];
        for &i in &idx {
            mask[i] = true;
        }
        f(mask);
        let mut pos = size;
        loop {
            if pos == 0 {
                return;
            }
            pos -= 1;
            if idx[pos] < m - size + pos {
                break;
            }
            if pos == 0 {
                return;
            }
        }
        idx[pos] += 1;
        for q in pos + 1..size {
            idx[q] = idx[q - 1] + 1;
        }
    }
}

/// KernelSHAP attributions of `record` against a single `background`
/// reference. The weighted least-squares fit eliminates the last player
/// so attributions sum to `f(record) − f(background)` exactly.
pub fn kernel_shap(
    scorer: &dyn Scorer,
    stay_id: Option<String>,
    record: &[f64],
    background: &[f64],
    cfg: &ShapConfig,
) -> Result<ShapResult> {
    let players = check_players(record, background, cfg.active.as_deref())?;
    let m = players.len();
    let exhaustive = m < 63 && (1u64 << m) <= cfg.n_samples as u64;
    if !exhaustive && cfg.n_samples < 2 * m + 2 {
        return Err(Error::Config(format!(
            "kernel SHAP over {m} tokens needs at least {} samples, got {}",
            2 * m + 2,
            cfg.n_samples
        )));
    }
    let ends = evaluate(
        scorer,
        record,
        background,
        &players,
        &[vec![false; m], vec![true; m]],
        cfg.exec,
    )?;
    let (base_value, full_value) = (ends[0], ends[1]);
    let delta = full_value - base_value;
    let mut phi = vec![0.0; m];
    let mut warnings = Vec::new();
    let (samples, enumerated) = if m == 1 {
        (Vec::new(), true)
    } else {
        coalitions(m, cfg.n_samples, cfg.seed)
    };
    if m == 1 {
        phi[0] = delta;
    } else {
        let masks: Vec<Vec<bool>> = samples.iter().map(|c| c.mask.clone()).collect();
        let values = evaluate(scorer, record, background, &players, &masks, cfg.exec)?;
        let p = m - 1;
        let mut x = DMatrix::<f64>::zeros(samples.len(), p);
        let mut y = DVector::<f64>::zeros(samples.len());
        for (k, (c, v)) in samples.iter().zip(&values).enumerate() {
            let sw = c.weight.sqrt();
            let last = f64::from(u8::from(c.mask[p]));
            for j in 0..p {
                x[(k, j)] = sw * (f64::from(u8::from(c.mask[j])) - last);
            }
            y[k] = sw * (v - base_value - last * delta);
        }
        let a = x.tr_mul(&x);
        let b = x.tr_mul(&y);
        let solved = match a.clone().cholesky() {
            Some(ch) => ch.solve(&b),
            None => {
                let msg = format!(
                    "kernel SHAP system over {m} tokens is singular; ridge {RIDGE:e} added"
                );
                warn!("{msg}");
                warnings.push(msg);
                let ridged = a + DMatrix::identity(p, p) * RIDGE;
                match ridged.clone().cholesky() {
                    Some(ch) => ch.solve(&b),
                    None => ridged
                        .svd(true, true)
                        .solve(&b, 1e-12)
                        .map_err(|e| Error::Model(format!("kernel SHAP solve failed: {e}")))?,
                }
            }
        };
        if solved.iter().any(|v| !v.is_finite()) {
            return Err(Error::Model(
                "kernel SHAP solve produced non-finite values".into(),
            ));
        }
        phi[..p].copy_from_slice(solved.as_slice());
        phi[p] = delta - phi[..p].iter().sum::<f64>();
    }
    let mut scores = vec![0.0; record.len()];
    for (&tok, v) in players.iter().zip(&phi) {
        scores[tok] = *v;
    }
    Ok(ShapResult {
        attribution: Attribution::new(Method::Shap, stay_id, scores)?,
        base_value,
        full_value,
        enumerated,
        coalitions: samples,
        warnings,
    })
}

/// Shapley values of the `active` tokens by full enumeration, in the
/// order given. Inactive tokens stay at background.
pub fn exact_shapley(
    scorer: &dyn Scorer,
    record: &[f64],
    background: &[f64],
    active: &[usize],
) -> Result<Vec<f64>> {
    if active.len() > EXACT_LIMIT {
        return Err(Error::Size(format!(
            "exact Shapley enumerates at most {EXACT_LIMIT} tokens, got {}",
            active.len()
        )));
    }
    let players = check_players(record, background, Some(active))?;
    let m = players.len();
    let masks: Vec<Vec<bool>> = (0u32..1 << m)
        .map(|bits| (0..m).map(|j| bits >> j & 1 == 1).collect())
        .collect();
    let values = evaluate(
        scorer,
        record,
        background,
        &players,
        &masks,
        Exec::Sequential,
    )?;
    let fact: Vec<f64> = (0..=m)
        .scan(1.0, |acc, i| {
            if i > 0 {
                *acc *= i as f64;
            }
            Some(*acc)
        })
        .collect();
    let mut phi = vec![0.0; m];
    for bits in 0usize..1 << m {
        let s = bits.count_ones() as usize;
        for (j, v) in phi.iter_mut().enumerate() {
            if bits >> j & 1 == 0 {
                let w = fact[s] * fact[m - s - 1] / fact[m];
                *v += w * (values[bits | 1 << j] - values[bits]);
            }
        }
    }
    Ok(phi)
}
