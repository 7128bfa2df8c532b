mod support;

use attnfid::evaluation::{auprc, auroc};
use attnfid::Error;
use support::{brute_auroc, metric_instance, step_auprc};

#[test]
fn auroc_equals_pairwise_count() {
    for seed in 0..200 {
        let (s, y) = metric_instance(seed);
        assert_eq!(auroc(&s, &y).unwrap(), brute_auroc(&s, &y), "seed {seed}");
    }
}

#[test]
fn auprc_equals_step_sum() {
    for seed in 0..200 {
        let (s, y) = metric_instance(seed);
        assert_eq!(auprc(&s, &y).unwrap(), step_auprc(&s, &y), "seed {seed}");
    }
}

#[test]
fn hand_cases() {
    assert_eq!(auroc(&[0.9, 0.8, 0.7, 0.6], &[1, 0, 1, 0]).unwrap(), 0.75);
    let ap = auprc(&[0.9, 0.8, 0.7], &[1, 0, 1]).unwrap();
    assert!((ap - (0.5 + 2.0 / 3.0 * 0.5)).abs() < 1e-15);
    assert_eq!(auroc(&[0.3; 6], &[1, 0, 1, 0, 1, 0]).unwrap(), 0.5);
    assert_eq!(auprc(&[0.2, 0.4], &[1, 1]).unwrap(), 1.0);
}

#[test]
fn degenerate_inputs() {
    assert!(matches!(auroc(&[0.1, 0.2], &[1, 1]), Err(Error::Metric(_))));
    assert!(matches!(auprc(&[0.1, 0.2], &[0, 0]), Err(Error::Metric(_))));
}
