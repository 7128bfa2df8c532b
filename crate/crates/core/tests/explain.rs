mod support;

use attnfid::dataset::{make_windows, mice_impute, minmax_normalize, synth_generate};
use attnfid::explain::{
    attention_importance, attention_importances, exact_shapley, kernel_shap, ShapConfig,
};
use attnfid::models::{FnScorer, ModelConfig, MortalityModel, VitalAutoencoder};
use attnfid::training::{pretrain_stage1, train_classifier, PretrainConfig, TrainConfig};
use attnfid::Error;
use support::{shap_efficiency_gap, shap_linear_error, shap_vs_exact};

#[test]
fn kernel_matches_exact_on_random_games() {
    for seed in 0..20 {
        let gap = shap_vs_exact(seed);
        assert!(gap < 1e-3, "seed {seed}: {gap:e}");
    }
}

#[test]
fn kernel_recovers_linear_attributions() {
    for seed in 0..3 {
        let err = shap_linear_error(seed);
        assert!(err < 1e-6, "seed {seed}: {err:e}");
    }
}

#[test]
fn efficiency_is_exact() {
    for seed in 0..3 {
        let gap = shap_efficiency_gap(seed);
        assert!(gap < 1e-9, "seed {seed}: {gap:e}");
    }
}

#[test]
fn symmetric_and_dummy_tokens() {
    let f = FnScorer(|x: &[f64]| (x[0] + x[1]).powi(2) * x[2] + 0.0 * x[3]);
    let record = [0.7, 0.7, 0.9, 0.4];
    let background = [0.1, 0.1, 0.2, 0.8];
    let cfg = ShapConfig {
        n_samples: 16,
        active: Some(vec![0, 1, 2, 3]),
        ..ShapConfig::default()
    };
    let r = kernel_shap(&f, None, &record, &background, &cfg).unwrap();
    assert!(r.enumerated);
    let s = &r.attribution.scores;
    assert!((s[0] - s[1]).abs() < 1e-6);
    assert!(s[3].abs() < 1e-12);
    let e = exact_shapley(&f, &record, &background, &[0, 1, 2, 3]).unwrap();
    assert!(e[3].abs() < 1e-15);
    assert!((e[0] - e[1]).abs() < 1e-15);
}

#[test]
fn additive_scorer_splits_by_term() {
    let f = FnScorer(|x: &[f64]| x[0].powi(3) + 2.0 * x[1].sin());
    let (x, b) = ([0.8, 0.5], [0.1, 0.2]);
    let e = exact_shapley(&f, &x, &b, &[0, 1]).unwrap();
    assert!((e[0] - (0.8f64.powi(3) - 0.1f64.powi(3))).abs() < 1e-15);
    assert!((e[1] - 2.0 * (0.5f64.sin() - 0.2f64.sin())).abs() < 1e-15);
}

#[test]
fn record_equal_to_background_scores_zero() {
    let f = FnScorer(support::random_scorer(364, 1));
    let x = vec![0.4; 364];
    let r = kernel_shap(&f, None, &x, &x, &ShapConfig::default()).unwrap();
    assert!(r.attribution.scores.iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn kernel_weights_follow_mask_size() {
    let f = FnScorer(|x: &[f64]| x.iter().sum());
    let cfg = ShapConfig {
        n_samples: 64,
        active: Some((0..6).collect()),
        ..ShapConfig::default()
    };
    let r = kernel_shap(&f, None, &[1.0; 6], &[0.0; 6], &cfg).unwrap();
    assert_eq!(r.coalitions.len(), 62);
    for c in &r.coalitions {
        let s = c.mask.iter().filter(|&&b| b).count();
        assert!((c.weight - attnfid::explain::shapley_kernel(6, s)).abs() < 1e-15);
    }
}

#[test]
fn attention_scores_form_a_distribution() {
    let model = MortalityModel::new(ModelConfig {
        d: 8,
        layers: 1,
        heads: 2,
        ffn_hidden: 8,
        ..ModelConfig::default()
    })
    .unwrap();
    let row = vec![0.5; 364];
    let a = attention_importance(&model, Some("s1".into()), &row).unwrap();
    assert_eq!(a.scores.len(), 364);
    assert!(a.scores.iter().all(|&s| s >= 0.0));
    assert!((a.scores.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert_eq!(
        a,
        attention_importance(&model, Some("s1".into()), &row).unwrap()
    );

    let mut broken = model.clone();
    let id = broken.store.find("fusion.query").unwrap();
    broken.store.get_mut(id).value.data_mut()[0] = f64::NAN;
    assert!(matches!(
        attention_importance(&broken, None, &row),
        Err(Error::Model(_))
    ));
}

struct PlantedRanks {
    planted: f64,
    other: f64,
    planted_features: f64,
    other_features: f64,
}

/// Trains a frozen-encoder model on a planted cohort and averages, over the
/// positive records, the attention rank of planted and non-planted tokens.
fn planted_ranks(seed: u64) -> PlantedRanks {
    let synth = synth_generate(600, 0.5, seed).unwrap();
    let imputed = mice_impute(&synth.cohort, 10).unwrap();
    let (cohort, _) = minmax_normalize(&imputed).unwrap();
    let cfg = ModelConfig {
        d: 16,
        layers: 1,
        heads: 2,
        ffn_hidden: 32,
        seed: 5,
        ..ModelConfig::default()
    };
    let mut auto = VitalAutoencoder::new(cfg.clone()).unwrap();
    let windows = make_windows(&cohort).unwrap();
    pretrain_stage1(
        &mut auto,
        &windows,
        &PretrainConfig {
            epochs: 2,
            max_windows: Some(4000),
            ..PretrainConfig::default()
        },
    )
    .unwrap();
    let mut model = MortalityModel::from_pretrained(cfg, &auto).unwrap();
    let rows = cohort.token_matrix().unwrap();
    let labels = cohort.labels();
    train_classifier(
        &mut model,
        &rows,
        &labels,
        &TrainConfig {
            epochs: 20,
            finetune_encoder: false,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    let positives: Vec<(Option<String>, Vec<f64>)> = rows
        .iter()
        .zip(&labels)
        .filter(|(_, &y)| y == 1)
        .map(|(r, _)| (None, r.clone()))
        .collect();
    assert!(positives.len() >= 50);
    let planted = &synth.truth.important_tokens;
    let first_feature = cohort.layout.vital_tokens();
    let mut sums = [0.0; 4];
    let mut counts = [0usize; 4];
    for a in attention_importances(&model, &positives).unwrap() {
        let ranking = a.ranking();
        let feature_ranking: Vec<usize> = ranking
            .iter()
            .copied()
            .filter(|&t| t >= first_feature)
            .collect();
        for (rank, tok) in ranking.iter().enumerate() {
            let slot = usize::from(!planted.contains(tok));
            sums[slot] += rank as f64;
            counts[slot] += 1;
        }
        for (rank, tok) in feature_ranking.iter().enumerate() {
            let slot = 2 + usize::from(!planted.contains(tok));
            sums[slot] += rank as f64;
            counts[slot] += 1;
        }
    }
    let mean = |i: usize| sums[i] / counts[i] as f64;
    PlantedRanks {
        planted: mean(0),
        other: mean(1),
        planted_features: mean(2),
        other_features: mean(3),
    }
}

#[test]
fn attention_ranks_planted_tokens_first() {
    let r = planted_ranks(7);
    assert!(
        r.planted < r.other,
        "planted {} vs other {}",
        r.planted,
        r.other
    );
    assert!(r.planted_features < r.other_features);
}

#[test]
fn attention_ranks_planted_features_first_on_another_cohort() {
    let r = planted_ranks(21);
    assert!(
        r.planted_features < r.other_features,
        "planted {} vs other {}",
        r.planted_features,
        r.other_features
    );
}
