//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use attnfid::explain::{exact_shapley, kernel_shap, ShapConfig};
use attnfid::models::{Batch, Classifier, FnScorer, ModelConfig, MortalityModel};
use attnfid::Layout;
use attnfid_tensor::gradcheck::{central_difference, max_relative_error, FD_STEP};
use attnfid_tensor::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Pairwise AUROC: concordant pairs plus half the ties.
pub fn brute_auroc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut twice, mut pairs) = (0u64, 0u64);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1;
                if scores[i] > scores[j] {
                    twice += 2;
                } else if scores[i] == scores[j] {
                    twice += 1;
                }
            }
        }
    }
    twice as f64 / (2 * pairs) as f64
}

/// Average precision from explicit ranks (higher score first, then lower
/// index), summing precision at every positive.
pub fn step_auprc(scores: &[f64], labels: &[u8]) -> f64 {
    let n = scores.len();
    let rank = |i: usize| {
        1 + (0..n)
            .filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i))
            .count()
    };
    let mut positives: Vec<(usize, usize)> = (0..n)
        .filter(|&i| labels[i] == 1)
        .map(|i| (rank(i), i))
        .collect();
    positives.sort_unstable();
    let step = 1.0 / positives.len() as f64;
    positives
        .iter()
        .enumerate()
        .map(|(hits, &(r, _))| ((hits + 1) as f64 / r as f64) * step)
        .sum()
}

/// Random scores with frequent ties and both classes present.
pub fn metric_instance(seed: u64) -> (Vec<f64>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=50);
    let levels = rng.random_range(2..12);
    let scores: Vec<f64> = (0..n)
        .map(|_| rng.random_range(0..levels) as f64 / levels as f64)
        .collect();
    let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.4))).collect();
    labels[0] = 1;
    labels[n - 1] = 0;
    (scores, labels)
}

/// Scaled-down grid used by the end-to-end gradient check.
pub fn tiny_layout() -> Layout {
    Layout {
        channels: 2,
        hours: 6,
        features: 3,
    }
}

pub fn tiny_config(seed: u64) -> ModelConfig {
    ModelConfig {
        layout: tiny_layout(),
        d: 4,
        layers: 1,
        heads: 1,
        ffn_hidden: 4,
        seed,
        ..ModelConfig::default()
    }
}

fn bce(model: &MortalityModel, rows: &[Vec<f64>], y: &Tensor) -> f64 {
    let batch = Batch::from_tokens(&model.config.layout, rows).unwrap();
    let mut tape = Tape::new();
    let bound = model.store.bind(&mut tape, false);
    let p = model.forward(&mut tape, &bound, &batch).unwrap();
    let l = tape.bce_loss(p, y).unwrap();
    tape.value(l).item()
}

/// Worst relative error between the tape gradient of the cross-entropy
/// loss and central differences, over every parameter of a tiny model.
pub fn end_to_end_gradcheck(seed: u64) -> f64 {
    let mut model = MortalityModel::new(tiny_config(seed)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xe2e);
    let n = tiny_layout().tokens();
    let rows: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..n).map(|_| rng.random::<f64>()).collect())
        .collect();
    let y = Tensor::new(vec![3], vec![1.0, 0.0, 1.0]).unwrap();
    let batch = Batch::from_tokens(&model.config.layout, &rows).unwrap();
    let mut tape = Tape::new();
    let bound = model.store.bind(&mut tape, true);
    let p = model.forward(&mut tape, &bound, &batch).unwrap();
    let loss = tape.bce_loss(p, &y).unwrap();
    tape.backward(loss).unwrap();
    model.store.accumulate_grads(&tape, &bound);

    let mut worst = 0.0f64;
    for idx in 0..model.store.len() {
        let id = attnfid_tensor::ParamId(idx);
        let analytic = model.store.get(id).grad.clone().unwrap();
        let original = model.store.get(id).value.clone();
        let numeric = central_difference(
            |x| {
                let mut probe = model.clone();
                probe.store.get_mut(id).value =
                    Tensor::new(original.shape().to_vec(), x.to_vec()).unwrap();
                bce(&probe, &rows, &y)
            },
            original.data(),
            FD_STEP,
        );
        worst = worst.max(max_relative_error(analytic.data(), &numeric));
    }
    worst
}

/// A smooth nonlinear scorer over `n` tokens with pairwise interactions.
pub fn random_scorer(n: usize, seed: u64) -> impl Fn(&[f64]) -> f64 + Sync {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let pairs: Vec<(usize, usize, f64)> = (0..n)
        .map(|_| {
            (
                rng.random_range(0..n),
                rng.random_range(0..n),
                rng.random_range(-3.0..3.0),
            )
        })
        .collect();
    let bias = rng.random_range(-1.0..1.0);
    move |x: &[f64]| {
        let z = bias
            + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            + pairs.iter().map(|&(i, j, c)| c * x[i] * x[j]).sum::<f64>();
        1.0 / (1.0 + (-z).exp())
    }
}

/// Max |kernel − exact| over the active tokens of one random game with
/// `2 ≤ M ≤ 10` players, enumerated fully.
pub fn shap_vs_exact(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 16;
    let m = rng.random_range(2..=10);
    let mut active: Vec<usize> = rand::seq::index::sample(&mut rng, n, m).into_vec();
    active.sort_unstable();
    let record: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let background: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let scorer = FnScorer(random_scorer(n, seed));
    let cfg = ShapConfig {
        n_samples: 1 << m,
        active: Some(active.clone()),
        ..ShapConfig::default()
    };
    let kernel = kernel_shap(&scorer, None, &record, &background, &cfg).unwrap();
    assert!(kernel.enumerated);
    let exact = exact_shapley(&scorer, &record, &background, &active).unwrap();
    active
        .iter()
        .zip(&exact)
        .map(|(&t, e)| (kernel.attribution.scores[t] - e).abs())
        .fold(0.0, f64::max)
}

/// Max |φ_f − w_f(x_f − b_f)| for a linear scorer over 364 tokens.
pub fn shap_linear_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 364;
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let b: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let wc = w.clone();
    let scorer = FnScorer(move |v: &[f64]| 0.3 + wc.iter().zip(v).map(|(a, c)| a * c).sum::<f64>());
    let cfg = ShapConfig {
        seed,
        ..ShapConfig::default()
    };
    let r = kernel_shap(&scorer, None, &x, &b, &cfg).unwrap();
    (0..n)
        .map(|f| (r.attribution.scores[f] - w[f] * (x[f] - b[f])).abs())
        .fold(0.0, f64::max)
}

/// |Σφ − (f(x) − f(b))| for a nonlinear scorer over 364 sampled tokens.
pub fn shap_efficiency_gap(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 364;
    let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let b: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let f = random_scorer(n, seed);
    let expected = f(&x) - f(&b);
    let cfg = ShapConfig {
        seed,
        ..ShapConfig::default()
    };
    let r = kernel_shap(&FnScorer(f), None, &x, &b, &cfg).unwrap();
    (r.attribution.scores.iter().sum::<f64>() - expected).abs()
}
