//! Randomized op instances shared by the gradient-check tests.

use attnfid_tensor::gradcheck::{central_difference, max_relative_error, FD_STEP};
use attnfid_tensor::{Tape, Tensor, Var, LEAKY_SLOPE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Build = dyn Fn(&mut Tape, &[Var]) -> Var;

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Scalarises an op output with fixed random weights so that every output
/// element contributes a distinct gradient.
fn weighted_loss(tape: &mut Tape, out: Var, weights: &Tensor) -> Var {
    if tape.value(out).len() == 1 {
        return out;
    }
    let w = tape.constant(weights.clone());
    let flat = tape.reshape(out, &[weights.len()]).unwrap();
    let p = tape.mul(flat, w).unwrap();
    tape.sum(p)
}

/// Worst relative error between analytic and numeric gradients over all
/// inputs of one op instance.
pub fn check(inputs: Vec<Tensor>, build: &Build, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let out_len = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = build(&mut tape, &vars);
        tape.value(out).len()
    };
    let weights = random_tensor(&mut rng, &[out_len], -1.0, 1.0);

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = build(&mut tape, &vars);
    let loss = weighted_loss(&mut tape, out, &weights);
    tape.backward(loss).unwrap();

    let mut worst = 0.0f64;
    for (i, input) in inputs.iter().enumerate() {
        let analytic = tape.grad(vars[i]).unwrap();
        let numeric = central_difference(
            |x| {
                let mut t = Tape::new();
                let vs: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, orig)| {
                        if j == i {
                            t.constant(Tensor::new(orig.shape().to_vec(), x.to_vec()).unwrap())
                        } else {
                            t.constant(orig.clone())
                        }
                    })
                    .collect();
                let o = build(&mut t, &vs);
                let l = weighted_loss(&mut t, o, &weights);
                t.value(l).item()
            },
            input.data(),
            FD_STEP,
        );
        let err = max_relative_error(analytic.data(), &numeric);
        worst = worst.max(err);
    }
    worst
}

fn dims(rng: &mut ChaCha8Rng, n: usize, max: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(1..=max)).collect()
}

pub type Gen = fn(&mut ChaCha8Rng) -> (Vec<Tensor>, Box<Build>);

/// Worst error of `gen` over seeds `0..seeds`.
pub fn worst_over_seeds(gen: Gen, seeds: u64) -> (f64, u64) {
    let mut worst = (0.0, 0);
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (inputs, build) = gen(&mut rng);
        let err = check(inputs, build.as_ref(), seed);
        if err > worst.0 {
            worst = (err, seed);
        }
    }
    worst
}

/// Every differentiable op, by name.
pub fn cases() -> Vec<(&'static str, Gen)> {
    vec![
        ("matmul", matmul),
        ("batch_matmul", batch_matmul_both_layouts),
        ("add/sub/mul", elementwise_binary),
        ("add_bias", add_bias_and_scale),
        ("permute", permute_and_reshape),
        ("softmax", softmax_any_axis),
        ("activations", activations),
        ("layer_norm", layer_norm),
        ("gather/concat/slice", gather_concat_slice),
        ("grouped_linear", grouped_linear),
        ("sum/mean_axis", reductions),
        ("linear/mean", linear_mean),
        ("mse/bce", losses),
        ("composite", composite_graph_with_fan_out),
    ]
}

fn matmul(rng: &mut ChaCha8Rng) -> (Vec<Tensor>, Box<Build>) {
    let d = dims(rng, 3, 5);
    (
        vec![
            random_tensor(rng, &[d[0], d[1]], -2.0, 2.0),
            random_tensor(rng, &[d[1], d[2]], -2.0, 2.0),
        ],
        Box::new(|t, v| t.matmul(v[0], v[1]).unwrap()),
    )
}

fn batch_matmul_both_layouts(rng: &mut ChaCha8Rng) -> (Vec<Tensor>, Box<Build>) {
    let d = dims(rng, 4, 4);
    let trans = rng.random_bool(0.5);
    let b_shape = if trans {
        [d[0], d[3], d[2]]
    } else {
        [d[0], d[2], d[3]]
    };
    (
        vec![
            random_tensor(rng, &[d[0], d[1], d[2]], -2.0, 2.0),
            random_tensor(rng, &b_shape, -2.0, 2.0),
        ],
        Box::new(move |t, v| t.batch_matmul(v[0], v[1], trans).unwrap()),
    )
}

fn elementwise_binary(rng: &mut ChaCha8Rng) -> (Vec<Tensor>, Box<Build>) {
    let d = dims(rng, 2, 5);
    let which = rng.random_range(0..3);
    (
        vec![
            random_tensor(rng, &d, -2.0, 2.0),
            random_tensor(rng, &d, -2.0, 2.0),
        ],
        Box::new(move |t, v| match which {
            0 => t.add(v[0], v[1]).unwrap(),
            1 => t.sub(v[0], v[1]).unwrap(),
            _ => t.mul(v[0], v[1]).unwrap(),
        }),
    )
}

fn add_bias_and_scale(rng: &mut ChaCha8Rng) -> (Vec<Tensor>, Box<Build>) {
    let d = dims(rng, 3, 4);
    let factor = rng.random_range(-3.0..3.0);
    (
        vec![
            random_tensor(rng, &d, -2.0, 2.0),
            random_tensor(rng, &d[1..], -2.0, 2.0),
        ],
        Box::new(move |t, v| {
            let y = t.add_bias(v[0], v[1]).unwrap();
            t.scale(y, factor)
        }),
    )
}

fn permute_and_reshape(rng: &mut ChaCha8Rng) -> (Vec<Tensor>, Box<Build>) {
    let d = dims(rng, 4, 3);
    let mut axes = vec![0, 1, 2, 3];
    for i in (1..4).rev() {
        let j = rng.random_range(0..=i);
        axes.swap(i, j);
    }
    let total: usize = d.iter().product();
    (
        vec![random_tensor(rng, &d, -2.0, 2.0)],
        Box::new(move |t, v| {
            let p = t.permute(v[0], &axes).unwrap();
            let sq = t.mul(p, p).unwrap();
            t.reshape(sq, &[total]).unwrap()
        }),
    )
}

fn softmax_any_axis(rng: &mut ChaCha8Rng) -> (Vec<Tensor>, Box<Build>) {
    let d = dims(rng, 3, 5);
    let axis = rng.random_range(0..3);
    (
        vec![random_tensor(rng, &d, -4.0, 4.0)],
        Box::new(move |t, v| t.softmax(v[0], axis).unwrap()),
    )
}

fn activations(rng: &mut ChaCha8Rng) -> (Vec<Tensor>, Box<Build>) {
    let d = dims(rng, 2, 6);
    let n: usize = d.iter().product();
    // keep clear of the leaky_relu kink
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.05..3.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    let which = rng.random_range(0..3);
    (
        vec![Tensor::new(d, data).unwrap()],
        Box::new(move |t, v| match which {
            0 => t.leaky_relu(v[0], LEAKY_SLOPE),
            1 => t.sigmoid(v[0]),
            _ => t.tanh(v[0]),
        }),
    )
}

fn layer_norm(rng: &mut ChaCha8Rng) -> (Vec<Tensor>, Box<Build>) {
    let d = vec![rng.random_range(1..5), rng.random_range(2..7)];
    (
        vec![
            random_tensor(rng, &d, -2.0, 2.0),
            random_tensor(rng, &d[1..], 0.5, 1.5),
            random_tensor(rng, &d[1..], -0.5, 0.5),
        ],
        Box::new(|t, v| t.layer_norm(v[0], v[1], v[2]).unwrap()),
    )
}

fn gather_concat_slice(rng: &mut ChaCha8Rng) -> (Vec<Tensor>, Box<Build>) {
    let rows = rng.random_range(1..5);
    let d = rng.random_range(1..5);
    let idx: Vec<usize> = (0..rng.random_range(1..8))
        .map(|_| rng.random_range(0..rows))
        .collect();
    let extra = rng.random_range(1..4);
    (
        vec![
            random_tensor(rng, &[rows, d], -2.0, 2.0),
            random_tensor(rng, &[idx.len(), extra], -2.0, 2.0),
        ],
        Box::new(move |t, v| {
            let g = t.gather_rows(v[0], &idx).unwrap();
            let c = t.concat(&[g, v[1], g], 1).unwrap();
            let width = t.shape(c)[1];
            let s = t.slice(c, 1, 1, width - 1).unwrap();
            t.mul(s, s).unwrap()
        }),
    )
}

fn grouped_linear(rng: &mut ChaCha8Rng) -> (Vec<Tensor>, Box<Build>) {
    let d = dims(rng, 4, 4);
    (
        vec![
            random_tensor(rng, &[d[0], d[1], d[2]], -2.0, 2.0),
            random_tensor(rng, &[d[1], d[2], d[3]], -2.0, 2.0),
            random_tensor(rng, &[d[1], d[3]], -2.0, 2.0),
        ],
        Box::new(|t, v| t.grouped_linear(v[0], v[1], v[2]).unwrap()),
    )
}

fn reductions(rng: &mut ChaCha8Rng) -> (Vec<Tensor>, Box<Build>) {
    let d = dims(rng, 3, 4);
    let axis = rng.random_range(0..3);
    (
        vec![random_tensor(rng, &d, -2.0, 2.0)],
        Box::new(move |t, v| {
            let m = t.mean_axis(v[0], axis).unwrap();
            let sq = t.mul(m, m).unwrap();
            t.sum(sq)
        }),
    )
}

fn losses(rng: &mut ChaCha8Rng) -> (Vec<Tensor>, Box<Build>) {
    let n = rng.random_range(2..8);
    let mut mask: Vec<f64> = (0..n)
        .map(|_| f64::from(rng.random_bool(0.6) as u8))
        .collect();
    mask[0] = 1.0;
    let labels: Vec<f64> = (0..n)
        .map(|_| f64::from(rng.random_bool(0.5) as u8))
        .collect();
    let mask = Tensor::new(vec![n], mask).unwrap();
    let labels = Tensor::new(vec![n], labels).unwrap();
    (
        vec![
            random_tensor(rng, &[n], -2.0, 2.0),
            random_tensor(rng, &[n], -2.0, 2.0),
            random_tensor(rng, &[n], 0.05, 0.95),
        ],
        Box::new(move |t, v| {
            let a = t.mse_loss(v[0], v[1], &mask).unwrap();
            let b = t.bce_loss(v[2], &labels).unwrap();
            t.add(a, b).unwrap()
        }),
    )
}

// x feeds two consumers; the checker compares the summed path gradient.
fn composite_graph_with_fan_out(rng: &mut ChaCha8Rng) -> (Vec<Tensor>, Box<Build>) {
    let d = dims(rng, 2, 4);
    (
        vec![
            random_tensor(rng, &d, -1.0, 1.0),
            random_tensor(rng, &[d[1], d[1]], -1.0, 1.0),
        ],
        Box::new(|t, v| {
            let h = t.matmul(v[0], v[1]).unwrap();
            let a = t.tanh(h);
            let b = t.sigmoid(v[0]);
            let c = t.mul(a, b).unwrap();
            let s = t.softmax(c, 1).unwrap();
            t.add(s, v[0]).unwrap()
        }),
    )
}

fn linear_mean(rng: &mut ChaCha8Rng) -> (Vec<Tensor>, Box<Build>) {
    let d = dims(rng, 3, 5);
    (
        vec![
            random_tensor(rng, &[d[0], d[1]], -2.0, 2.0),
            random_tensor(rng, &[d[1], d[2]], -2.0, 2.0),
            random_tensor(rng, &[d[2]], -2.0, 2.0),
        ],
        Box::new(|t, v| {
            let y = t.linear(v[0], v[1], v[2]).unwrap();
            let sq = t.mul(y, y).unwrap();
            t.mean(sq)
        }),
    )
}
