use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use lsm_core::cluster_init;
use lsm_core::dataio::synth_biased_collection;
use lsm_core::optim::{self, train_svm};
use lsm_core::{MtlHyper, MultiTaskModel, SgdConfig, SynthConfig};

fn bench_training(c: &mut Criterion) {
    let coll = synth_biased_collection(&SynthConfig {
        dim: 10,
        ..SynthConfig::default()
    })
    .unwrap();
    let cfg = SgdConfig {
        epochs: 10,
        ..SgdConfig::default()
    };
    let h = MtlHyper {
        k: 2,
        c1: 1.0,
        c2: 1.0,
        rho: 1.0,
    };
    let init = MultiTaskModel::zeros(2, coll.len(), coll.dim);
    c.bench_function("train_mtl_10_epochs", |b| {
        b.iter(|| optim::train_mtl(black_box(&coll), &h, &init, &cfg).unwrap())
    });

    let data = coll.concatenated("all");
    let pos: Vec<&[f64]> = data.positives().collect();
    let neg: Vec<&[f64]> = data.negatives().collect();
    c.bench_function("train_svm_10_epochs", |b| {
        b.iter(|| train_svm(black_box(&pos), &neg, 1e-2, &cfg).unwrap())
    });
    c.bench_function("kmeans_k4", |b| {
        b.iter(|| cluster_init::kmeans(black_box(&pos), 4, 0, 10).unwrap())
    });
}

criterion_group!(benches, bench_training);
criterion_main!(benches);
