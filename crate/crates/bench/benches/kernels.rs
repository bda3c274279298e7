use std::collections::BTreeMap;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use sentiprobe::classifier::{self, ClassifierKind, Hyperparams};
use sentiprobe::embedding;
use sentiprobe::pipeline::{self, ClassifyParams};
use sentiprobe::stats;
use sentiprobe_bench::{diffs, training_set};

fn wilcoxon(c: &mut Criterion) {
    let mut group = c.benchmark_group("wilcoxon");
    for n in [12, 25, 200] {
        let d = diffs(n, 7);
        group.bench_with_input(BenchmarkId::from_parameter(n), &d, |b, d| {
            b.iter(|| stats::wilcoxon_signed_rank(black_box(d)).unwrap())
        });
    }
    group.finish();
}

fn bootstrap(c: &mut Criterion) {
    let d = diffs(300, 3);
    c.bench_function("bootstrap_ci/300x1000", |b| {
        b.iter(|| stats::bootstrap_ci(black_box(&d), 1000, 0.95, 1).unwrap())
    });
    c.bench_function("classify_bias/300", |b| {
        b.iter(|| pipeline::classify_bias("n", black_box(&d), &ClassifyParams::default()).unwrap())
    });
}

fn training(c: &mut Criterion) {
    let data = training_set(1000, 32, 5);
    let mut group = c.benchmark_group("train");
    group.sample_size(10);
    for kind in [ClassifierKind::Svm, ClassifierKind::Mlp] {
        let hp = Hyperparams::default_for(kind);
        group.bench_function(kind.to_string(), |b| {
            b.iter(|| classifier::train(black_box(&data), kind, &hp, 5).unwrap())
        });
    }
    group.finish();
}

fn encode(c: &mut Criterion) {
    let axis = embedding::seeded_unit_axis(768, 0);
    let bias = BTreeMap::from([("Syrian".to_string(), -0.3)]);
    let words = vec![("happy".to_string(), 1i8), ("angry".to_string(), -1i8)];
    c.bench_function("synthetic_encode/768", |b| {
        b.iter(|| embedding::synthetic_encode(black_box("This Syrian person is neutral."), 1, &axis, &bias, &words))
    });
}

criterion_group!(benches, wilcoxon, bootstrap, training, encode);
criterion_main!(benches);
