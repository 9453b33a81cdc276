use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use skelfuse_bench::{joint_sequence, score_streams, uniform2, uniform4};
use skelfuse_core::ensemble::grid_search_weights;
use skelfuse_core::gcn::{graph_conv_forward, normalized_adjacency};
use skelfuse_core::skeleton::{derive_modality, Modality, Topology};

fn derivation(c: &mut Criterion) {
    let topo = Topology::coco17();
    let seq = joint_sequence(1, 2, 64, 17);
    let mut g = c.benchmark_group("derive");
    for m in Modality::ALL {
        g.bench_with_input(BenchmarkId::from_parameter(m.short_name()), &m, |b, &m| {
            b.iter(|| derive_modality(black_box(&seq), &topo, m).unwrap())
        });
    }
    g.finish();
}

fn graph_conv(c: &mut Criterion) {
    let a = normalized_adjacency(&Topology::coco17());
    let mut g = c.benchmark_group("graph_conv");
    for ch in [16, 64] {
        let h = uniform4(2, (8, 64, 17, ch));
        let w = uniform2(3, ch, ch);
        g.bench_with_input(BenchmarkId::from_parameter(ch), &ch, |b, _| {
            b.iter(|| graph_conv_forward(black_box(&h), &a, &w).unwrap())
        });
    }
    g.finish();
}

fn grid_search(c: &mut Criterion) {
    let mut g = c.benchmark_group("grid_search");
    for streams in [2, 4] {
        let (mats, labels) = score_streams(4, streams, 200, 10);
        g.bench_with_input(BenchmarkId::from_parameter(streams), &streams, |b, _| {
            b.iter(|| grid_search_weights(black_box(&mats), &labels, 0.1).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, derivation, graph_conv, grid_search);
criterion_main!(benches);
