use attnfid::dataset::{mice_impute, minmax_normalize, synth_generate};
use attnfid::error::Error;
use attnfid::evaluation::{
    fidelity, masked_count, report_table, Direction, FidelityConfig, FidelityReport, Substitution,
};
use attnfid::exec::Exec;
use attnfid::explain::random_attribution;
use attnfid::models::{FnScorer, ModelConfig, ModelKind, TrainedModel};
use attnfid::training::{train_classifier, TrainConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Records, labels and weights for `sigmoid(w · (x - 0.5))` with labels
/// drawn from the model itself.
fn additive_cohort(seed: u64) -> (Vec<Vec<f64>>, Vec<u8>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_tokens = 50;
    let w: Vec<f64> = (0..n_tokens)
        .map(|t| {
            if t % 5 == 0 {
                rng.random_range(1.0..4.0)
            } else {
                rng.random_range(-0.2..0.2)
            }
        })
        .collect();
    let rows: Vec<Vec<f64>> = (0..120)
        .map(|_| (0..n_tokens).map(|_| rng.random::<f64>()).collect())
        .collect();
    let labels = rows
        .iter()
        .map(|r| {
            let z: f64 = r.iter().zip(&w).map(|(x, w)| w * (x - 0.5)).sum();
            u8::from(rng.random::<f64>() < sigmoid(3.0 * z))
        })
        .collect();
    (rows, labels, w)
}

fn additive_score(w: &[f64], x: &[f64]) -> f64 {
    sigmoid(3.0 * x.iter().zip(w).map(|(x, w)| w * (x - 0.5)).sum::<f64>())
}

#[test]
fn plus_delta_grows_along_the_ladder() {
    let fractions = vec![0.02, 0.05, 0.1, 0.2, 0.4, 0.6];
    for seed in 0..5 {
        let (rows, labels, w) = additive_cohort(seed);
        let scorer = FnScorer(|x: &[f64]| additive_score(&w, x));
        let oracle: Vec<f64> = w.iter().map(|v| v.abs()).collect();
        let cfg = FidelityConfig {
            fractions: fractions.clone(),
            draws: 20,
            seed,
            ..FidelityConfig::default()
        };
        let report = fidelity(
            &scorer,
            &rows,
            &labels,
            &[oracle],
            Direction::Plus,
            &cfg,
            "additive",
            "oracle",
        )
        .unwrap();
        for metric in [
            |r: &attnfid::evaluation::FidelityRung| r.auroc.delta,
            |r: &attnfid::evaluation::FidelityRung| r.mean_prob.delta,
        ] {
            let mags: Vec<f64> = report.rungs.iter().map(|r| metric(r).abs()).collect();
            let inversions = mags.windows(2).filter(|p| p[1] < p[0]).count();
            assert!(inversions <= 1, "seed {seed}: {mags:?}");
        }
    }
}

#[test]
fn reading_one_token_is_invisible_to_minus() {
    let (rows, labels, _) = additive_cohort(3);
    let scorer = FnScorer(|x: &[f64]| sigmoid(6.0 * (x[5] - 0.5)));
    let labels: Vec<u8> = rows
        .iter()
        .zip(&labels)
        .map(|(r, _)| u8::from(r[5] > 0.5))
        .collect();
    let mut oracle = vec![0.0; 50];
    oracle[5] = 1.0;
    let cfg = FidelityConfig {
        draws: 20,
        ..FidelityConfig::default()
    };
    let plus = fidelity(
        &scorer,
        &rows,
        &labels,
        &[oracle.clone()],
        Direction::Plus,
        &cfg,
        "m",
        "oracle",
    )
    .unwrap();
    let minus = fidelity(
        &scorer,
        &rows,
        &labels,
        &[oracle],
        Direction::Minus,
        &cfg,
        "m",
        "oracle",
    )
    .unwrap();
    for (p, m) in plus.rungs.iter().zip(&minus.rungs) {
        assert!(p.mean_prob.delta < 0.0);
        assert_eq!(m.mean_prob.delta, 0.0);
        assert_eq!(m.auroc.delta, 0.0);
    }
}

struct Planted {
    rows: Vec<Vec<f64>>,
    labels: Vec<u8>,
    truth: Vec<f64>,
    model: TrainedModel,
}

fn planted_setup() -> Planted {
    let synth = synth_generate(200, 0.5, 13).unwrap();
    let imputed = mice_impute(&synth.cohort, 10).unwrap();
    let (cohort, _) = minmax_normalize(&imputed).unwrap();
    let rows = cohort.token_matrix().unwrap();
    let labels = cohort.labels();
    let mut model = TrainedModel::new(ModelKind::Logistic, ModelConfig::default()).unwrap();
    train_classifier(
        model.classifier_mut(),
        &rows,
        &labels,
        &TrainConfig {
            epochs: 100,
            lr: 0.05,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    let mut truth = vec![0.0; rows[0].len()];
    for &t in &synth.truth.important_tokens {
        truth[t] = 1.0;
    }
    Planted {
        rows,
        labels,
        truth,
        model,
    }
}

fn run(p: &Planted, attribution: &[f64], direction: Direction) -> FidelityReport {
    let cfg = FidelityConfig {
        seed: 4,
        ..FidelityConfig::default()
    };
    fidelity(
        &p.model,
        &p.rows,
        &p.labels,
        &[attribution.to_vec()],
        direction,
        &cfg,
        "logistic",
        "truth",
    )
    .unwrap()
}

#[test]
fn ground_truth_is_asymmetric_and_beats_random() {
    let p = planted_setup();
    let plus = run(&p, &p.truth, Direction::Plus)
        .rung(0.1)
        .unwrap()
        .auroc
        .delta;
    let minus = run(&p, &p.truth, Direction::Minus)
        .rung(0.1)
        .unwrap()
        .auroc
        .delta;
    assert!(plus.abs() > minus.abs(), "plus {plus} minus {minus}");
    let random = random_attribution(p.truth.len(), None, 99);
    let random_plus = run(&p, &random.scores, Direction::Plus)
        .rung(0.1)
        .unwrap()
        .auroc
        .delta;
    assert!(
        plus.abs() > random_plus.abs(),
        "truth {plus} random {random_plus}"
    );
}

#[test]
fn same_seed_is_bit_reproducible_in_either_mode() {
    let (rows, labels, w) = additive_cohort(8);
    let scorer = FnScorer(|x: &[f64]| additive_score(&w, x));
    let attributions: Vec<Vec<f64>> = (0..rows.len())
        .map(|i| random_attribution(50, None, i as u64).scores)
        .collect();
    for substitution in [Substitution::Uniform, Substitution::Permutation] {
        let make = |exec| FidelityConfig {
            seed: 21,
            substitution,
            exec,
            ..FidelityConfig::default()
        };
        let a = fidelity(
            &scorer,
            &rows,
            &labels,
            &attributions,
            Direction::Plus,
            &make(Exec::Parallel),
            "m",
            "r",
        )
        .unwrap();
        let b = fidelity(
            &scorer,
            &rows,
            &labels,
            &attributions,
            Direction::Plus,
            &make(Exec::Parallel),
            "m",
            "r",
        )
        .unwrap();
        let c = fidelity(
            &scorer,
            &rows,
            &labels,
            &attributions,
            Direction::Plus,
            &make(Exec::Sequential),
            "m",
            "r",
        )
        .unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        assert_eq!(a, c);
        let other = fidelity(
            &scorer,
            &rows,
            &labels,
            &attributions,
            Direction::Plus,
            &FidelityConfig {
                seed: 22,
                ..make(Exec::Sequential)
            },
            "m",
            "r",
        )
        .unwrap();
        assert_ne!(a, other);
    }
}

#[test]
fn bad_fractions_and_mismatched_inputs_are_rejected() {
    let (rows, labels, w) = additive_cohort(1);
    let scorer = FnScorer(|x: &[f64]| additive_score(&w, x));
    let att = vec![vec![0.0; 50]];
    for fractions in [vec![0.0], vec![1.5], vec![], vec![f64::NAN]] {
        let cfg = FidelityConfig {
            fractions,
            ..FidelityConfig::default()
        };
        assert!(matches!(
            fidelity(
                &scorer,
                &rows,
                &labels,
                &att,
                Direction::Plus,
                &cfg,
                "m",
                "r"
            ),
            Err(Error::Config(_))
        ));
    }
    let cfg = FidelityConfig::default();
    let two = vec![vec![0.0; 50]; 2];
    assert!(fidelity(
        &scorer,
        &rows,
        &labels,
        &two,
        Direction::Plus,
        &cfg,
        "m",
        "r"
    )
    .is_err());
    let short = vec![vec![0.0; 49]];
    assert!(fidelity(
        &scorer,
        &rows,
        &labels,
        &short,
        Direction::Plus,
        &cfg,
        "m",
        "r"
    )
    .is_err());
}

#[test]
fn full_masking_in_either_direction_agrees() {
    let (rows, labels, w) = additive_cohort(2);
    let scorer = FnScorer(|x: &[f64]| additive_score(&w, x));
    let att = vec![random_attribution(50, None, 5).scores];
    let cfg = FidelityConfig {
        fractions: vec![1.0],
        draws: 3,
        ..FidelityConfig::default()
    };
    let plus = fidelity(
        &scorer,
        &rows,
        &labels,
        &att,
        Direction::Plus,
        &cfg,
        "m",
        "r",
    )
    .unwrap();
    let minus = fidelity(
        &scorer,
        &rows,
        &labels,
        &att,
        Direction::Minus,
        &cfg,
        "m",
        "r",
    )
    .unwrap();
    assert_eq!(plus.rungs[0].k, 50);
    assert_eq!(plus.rungs, minus.rungs);
}

#[test]
fn table_lists_every_configured_pair() {
    let (rows, labels, w) = additive_cohort(4);
    let scorer = FnScorer(|x: &[f64]| additive_score(&w, x));
    let cfg = FidelityConfig {
        draws: 2,
        ..FidelityConfig::default()
    };
    let mut reports = Vec::new();
    for method in ["attention", "shap", "random"] {
        for direction in [Direction::Plus, Direction::Minus] {
            let att = vec![random_attribution(50, None, method.len() as u64).scores];
            reports.push(
                fidelity(
                    &scorer, &rows, &labels, &att, direction, &cfg, "attn", method,
                )
                .unwrap(),
            );
        }
    }
    let table = report_table(&reports, 0.1);
    let header = table.csv.lines().next().unwrap();
    assert_eq!(header, "Metric,attn/attention,attn/shap,attn/random");
    assert_eq!(table.csv.lines().count(), 7);
    let json = serde_json::to_string(&reports[0]).unwrap();
    assert_eq!(
        serde_json::from_str::<FidelityReport>(&json).unwrap(),
        reports[0]
    );
}

proptest! {
    #[test]
    fn masked_count_is_a_ceiling(fraction in 0.001f64..=1.0, n in 1usize..400) {
        let k = masked_count(fraction, n);
        prop_assert!(k >= 1 && k <= n);
        prop_assert!(k as f64 >= fraction * n as f64 - 1e-9);
        prop_assert!(((k - 1) as f64) < fraction * n as f64);
    }

    #[test]
    fn deltas_are_exact_differences(seed in 0u64..1000) {
        let (rows, labels, w) = additive_cohort(seed);
        let scorer = FnScorer(|x: &[f64]| additive_score(&w, x));
        let att = vec![random_attribution(50, None, seed).scores];
        let cfg = FidelityConfig { draws: 2, seed, ..FidelityConfig::default() };
        let report = fidelity(&scorer, &rows, &labels, &att, Direction::Minus, &cfg, "m", "r").unwrap();
        for rung in &report.rungs {
            for p in [&rung.auroc, &rung.auprc, &rung.mean_prob] {
                prop_assert_eq!(p.delta, p.perturbed - p.baseline);
                prop_assert!((0.0..=1.0).contains(&p.perturbed));
            }
        }
    }
}
