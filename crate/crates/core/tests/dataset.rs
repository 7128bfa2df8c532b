use attnfid::dataset::{
    generate, make_windows, mice_impute, minmax_normalize, undersample_balance, Cohort, MiceConfig,
    MiceModel, PatientRecord, Stage, SynthConfig,
};
use attnfid::{Error, Layout};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_layout() -> Layout {
    Layout {
        channels: 1,
        hours: 2,
        features: 2,
    }
}

#[test]
fn mutually_missing_columns_converge() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let records: Vec<PatientRecord> = (0..50)
        .map(|i| {
            let a: f64 = rng.random();
            let b = 0.5 * a + 0.2 + 0.05 * rng.random::<f64>();
            let c = 0.3 * a - 0.4 * b + 0.05 * rng.random::<f64>();
            let d = a + b;
            let mut agg = vec![Some(c), Some(d)];
            let mut vit = vec![Some(a), Some(b)];
            if i % 5 == 0 {
                vit[1] = None;
                agg[0] = None;
            }
            if i % 7 == 3 {
                agg[0] = None;
            }
            if i % 9 == 4 {
                vit[1] = None;
            }
            PatientRecord {
                stay_id: format!("r{i}"),
                vitals: vit,
                aggregated: agg,
                label: (i % 2) as u8,
            }
        })
        .collect();
    let cohort = Cohort::new(small_layout(), records, "test").unwrap();
    let (imputed, model) = MiceModel::fit(
        &cohort,
        MiceConfig {
            rounds: 10,
            ..MiceConfig::default()
        },
    )
    .unwrap();
    assert_eq!(model.round_deltas.len(), 10);
    assert!(
        model.round_deltas[9] < 1e-6,
        "deltas {:?}",
        model.round_deltas
    );
    for (before, after) in cohort.records.iter().zip(&imputed.records) {
        for (x, y) in before
            .vitals
            .iter()
            .chain(&before.aggregated)
            .zip(after.vitals.iter().chain(&after.aggregated))
        {
            if let Some(v) = x {
                assert_eq!(Some(*v), *y);
            }
        }
    }
    assert!(imputed.records.iter().all(|r| r.is_complete()));
}

#[test]
fn cohort_of_2089_undersamples_to_614() {
    let synth = generate(&SynthConfig {
        n: 2089,
        positive_fraction: 307.0 / 2089.0,
        seed: 11,
        ..SynthConfig::default()
    })
    .unwrap();
    assert_eq!(synth.cohort.positives(), 307);
    let balanced = undersample_balance(&synth.cohort, 3).unwrap();
    assert_eq!(balanced.len(), 614);
    assert_eq!(balanced.positives(), 307);
    let again = undersample_balance(&synth.cohort, 3).unwrap();
    assert_eq!(balanced.records, again.records);
}

#[test]
fn pipeline_order_is_enforced() {
    let synth = generate(&SynthConfig {
        n: 40,
        ..SynthConfig::default()
    })
    .unwrap();
    let raw = &synth.cohort;
    assert_eq!(raw.stage(), Stage::Raw);
    assert!(matches!(make_windows(raw), Err(Error::State(_))));
    assert!(matches!(minmax_normalize(raw), Err(Error::State(_))));
    let imputed = mice_impute(raw, 10).unwrap();
    assert!(matches!(mice_impute(&imputed, 10), Err(Error::State(_))));
    assert!(matches!(make_windows(&imputed), Err(Error::State(_))));
    let (normalized, _) = minmax_normalize(&imputed).unwrap();
    let balanced = undersample_balance(&normalized, 1).unwrap();
    let windows = make_windows(&balanced).unwrap();
    assert_eq!(windows.len(), 35 * balanced.len());
    let mut seen: Vec<(String, usize, usize)> = windows
        .iter()
        .map(|w| (w.stay_id.clone(), w.channel, w.start))
        .collect();
    seen.sort();
    seen.dedup();
    assert_eq!(seen.len(), windows.len());
    for r in &balanced.records {
        assert!(r
            .vitals
            .iter()
            .chain(&r.aggregated)
            .all(|v| matches!(v, Some(x) if (0.0..=1.0).contains(x))));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn minmax_inverse_recovers_values(values in prop::collection::vec(-50.0f64..50.0, 12)) {
        let layout = small_layout();
        let records: Vec<PatientRecord> = values
            .chunks(4)
            .enumerate()
            .map(|(i, c)| PatientRecord::complete(format!("r{i}"), &c[..2], &c[2..], (i % 2) as u8))
            .collect();
        let cohort = Cohort::new(layout, records, "prop").unwrap();
        let imputed = mice_impute(&cohort, 10).unwrap();
        let (scaled, reg) = minmax_normalize(&imputed).unwrap();
        for (orig, s) in imputed.records.iter().zip(&scaled.records) {
            let o = orig.tokens().unwrap();
            let t = s.tokens().unwrap();
            for tok in 0..layout.tokens() {
                prop_assert!((0.0..=1.0).contains(&t[tok]));
                if !reg.range_of(tok).is_constant() {
                    prop_assert!((reg.inverse(tok, t[tok]) - o[tok]).abs() < 1e-9);
                }
            }
        }
    }
}
