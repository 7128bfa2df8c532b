//! Analytic gradients against central finite differences, 50 random
//! shape/value draws per op.

mod support;

use attnfid_tensor::{Tape, Tensor, LEAKY_SLOPE};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::ops::{cases, random_tensor, worst_over_seeds};

const SEEDS: u64 = 50;
const TOL: f64 = 1e-4;

#[test]
fn every_op_matches_finite_differences() {
    for (name, gen) in cases() {
        let (err, seed) = worst_over_seeds(gen, SEEDS);
        assert!(err <= TOL, "{name}: relative error {err:e} at seed {seed}");
    }
}

#[test]
fn forward_ops_are_deterministic() {
    let build = |seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_tensor(&mut rng, &[6, 5], -3.0, 3.0);
        let w = random_tensor(&mut rng, &[5, 5], -1.0, 1.0);
        let mut tape = Tape::new();
        let (x, w) = (tape.constant(x), tape.constant(w));
        let h = tape.matmul(x, w).unwrap();
        let s = tape.softmax(h, 1).unwrap();
        let l = tape.leaky_relu(s, LEAKY_SLOPE);
        tape.value(l)
            .data()
            .iter()
            .map(|v| v.to_bits())
            .collect::<Vec<_>>()
    };
    for seed in 0..10 {
        assert_eq!(build(seed), build(seed));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn softmax_slices_sum_to_one(
        rows in 1usize..5,
        values in prop::collection::vec(-1e3f64..1e3, 1..40),
    ) {
        let cols = values.len();
        let data: Vec<f64> = (0..rows).flat_map(|r| values.iter().map(move |v| v * (r as f64 + 1.0) / rows as f64)).collect();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![rows, cols], data).unwrap());
        let y = tape.softmax(x, 1).unwrap();
        for row in tape.value(y).data().chunks(cols) {
            let s: f64 = row.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
            prop_assert!(row.iter().all(|&p| p >= 0.0 && p.is_finite()));
        }
    }

    #[test]
    fn sigmoid_stays_in_unit_interval(x in -800.0f64..800.0) {
        let s = attnfid_tensor::sigmoid(x);
        prop_assert!((0.0..=1.0).contains(&s) && s.is_finite());
    }
}
