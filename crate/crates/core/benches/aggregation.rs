use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use hgnl_core::aggregator::{forward, init_params, AggregatorConfig};
use hgnl_core::pipeline::{evaluate, DatasetSpec, Model, SyntheticDataset};
use hgnl_core::{Execution, Tensor};

fn dataset() -> SyntheticDataset {
    SyntheticDataset::generate(&DatasetSpec {
        classes: 8,
        samples: 256,
        m: 128,
        n_total: 32,
        signal_frames: 2,
        noise: 0.5,
        seed: 0,
        partition: 0,
    })
    .unwrap()
}

fn evaluation(c: &mut Criterion) {
    let data = dataset();
    let mut group = c.benchmark_group("evaluate_256_samples");
    for (name, cfg) in [
        ("nl", AggregatorConfig::nl(128, 16)),
        ("hgnl", AggregatorConfig::hgnl(128, 16, 8, 4, false)),
    ] {
        let model = Model::init(&cfg, 8, 0).unwrap();
        for exec in [Execution::Sequential, Execution::Parallel] {
            group.bench_with_input(BenchmarkId::new(name, format!("{exec:?}")), &exec, |b, &exec| {
                b.iter(|| evaluate(black_box(&model), &data, 25, exec).unwrap())
            });
        }
    }
    group.finish();
}

fn single_forward(c: &mut Criterion) {
    let m = 1024;
    let f = Tensor::matrix(m, 25, (0..m * 25).map(|i| ((i * 37 % 101) as f64) / 101.0 - 0.5).collect())
        .unwrap();
    let mut group = c.benchmark_group("forward_m1024_n25");
    group.sample_size(20);
    for (name, cfg) in [
        ("nl_m1=m/8", AggregatorConfig::nl(m, m / 8)),
        ("hgnl_m1=m/8", AggregatorConfig::hgnl(m, m / 8, 16, 8, false)),
        ("hgnl_shared", AggregatorConfig::hgnl(m, m / 8, 16, 8, true)),
    ] {
        let mut params = init_params(&cfg, 0).unwrap();
        params.attention.as_mut().unwrap().s = 0.5;
        group.bench_function(name, |b| b.iter(|| forward(black_box(&params), &f, None).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, evaluation, single_forward);
criterion_main!(benches);
