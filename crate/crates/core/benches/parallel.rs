use attnfid::dataset::{mice_impute, minmax_normalize, synth_generate};
use attnfid::evaluation::{fidelity, Direction, FidelityConfig};
use attnfid::exec::Exec;
use attnfid::explain::{kernel_shap, random_attribution, ShapConfig};
use attnfid::models::{ModelConfig, MortalityModel};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn setup() -> (MortalityModel, Vec<Vec<f64>>, Vec<u8>) {
    let synth = synth_generate(64, 0.5, 1).unwrap();
    let imputed = mice_impute(&synth.cohort, 3).unwrap();
    let (cohort, _) = minmax_normalize(&imputed).unwrap();
    let model = MortalityModel::new(ModelConfig {
        d: 8,
        layers: 1,
        heads: 2,
        ffn_hidden: 16,
        ..ModelConfig::default()
    })
    .unwrap();
    (model, cohort.token_matrix().unwrap(), cohort.labels())
}

fn modes() -> [(&'static str, Exec); 2] {
    [
        ("sequential", Exec::Sequential),
        ("parallel", Exec::Parallel),
    ]
}

fn bench_fidelity(c: &mut Criterion) {
    let (model, rows, labels) = setup();
    let att = vec![random_attribution(rows[0].len(), None, 3).scores];
    let mut group = c.benchmark_group("fidelity");
    group.sample_size(10);
    for (name, exec) in modes() {
        let cfg = FidelityConfig {
            draws: 4,
            exec,
            ..FidelityConfig::default()
        };
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                fidelity(
                    &model,
                    &rows,
                    &labels,
                    &att,
                    Direction::Plus,
                    &cfg,
                    "attention",
                    "random",
                )
                .unwrap()
            })
        });
    }
    group.finish();
}

fn bench_shap(c: &mut Criterion) {
    let (model, rows, _) = setup();
    let background: Vec<f64> = (0..rows[0].len())
        .map(|t| rows.iter().map(|r| r[t]).sum::<f64>() / rows.len() as f64)
        .collect();
    let mut group = c.benchmark_group("kernel_shap");
    group.sample_size(10);
    for (name, exec) in modes() {
        let cfg = ShapConfig {
            n_samples: 1024,
            exec,
            ..ShapConfig::default()
        };
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| kernel_shap(&model, None, &rows[0], &background, &cfg).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_fidelity, bench_shap);
criterion_main!(benches);
