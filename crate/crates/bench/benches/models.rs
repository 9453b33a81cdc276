use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use skelfuse_bench::{rng, uniform5};
use skelfuse_core::former::{FormerConfig, FormerModel};
use skelfuse_core::gcn::{AdjacencyMode, GcnConfig, GcnModel};
use skelfuse_core::skeleton::Topology;
use skelfuse_core::Network;

fn gcn(c: &mut Criterion) {
    let x = uniform5(5, (8, 2, 64, 17, 2));
    let mut g = c.benchmark_group("gcn");
    for mode in [AdjacencyMode::Static, AdjacencyMode::ChannelRefined, AdjacencyMode::TemporalDependent] {
        let model = GcnModel::new(Topology::coco17(), 2, 10, GcnConfig::default().with_mode(mode), &mut rng(6)).unwrap();
        g.bench_function(format!("forward/{mode:?}"), |b| b.iter(|| model.forward(black_box(&x)).unwrap()));
        g.bench_function(format!("train_step/{mode:?}"), |b| {
            b.iter(|| {
                let (logits, cache) = model.forward_train(black_box(&x)).unwrap();
                model.backward(&cache, &logits)
            })
        });
    }
    g.finish();
}

fn former(c: &mut Criterion) {
    let x = uniform5(7, (8, 2, 64, 17, 2));
    let model = FormerModel::new(17, 2, 10, FormerConfig::default(), &mut rng(8)).unwrap();
    let mut g = c.benchmark_group("former");
    g.bench_function("forward", |b| b.iter(|| model.forward(black_box(&x)).unwrap()));
    g.bench_function("train_step", |b| {
        b.iter(|| {
            let (logits, cache) = model.forward_train(black_box(&x)).unwrap();
            model.backward(&cache, &logits)
        })
    });
    g.finish();
}

criterion_group!(benches, gcn, former);
criterion_main!(benches);
