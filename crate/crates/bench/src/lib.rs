//! Seeded inputs shared by the benchmarks.

use ndarray::{Array2, Array4, Array5};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skelfuse_core::ensemble::ScoreMatrix;
use skelfuse_core::skeleton::{Modality, SkeletonSequence};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Joint sequence with shape `(persons, frames, joints, 2)`.
pub fn joint_sequence(seed: u64, persons: usize, frames: usize, joints: usize) -> SkeletonSequence {
    let mut r = rng(seed);
    let data = Array4::from_shape_simple_fn((persons, frames, joints, 2), || r.random_range(-1.0f32..1.0));
    SkeletonSequence::new(data, Modality::Joint, "bench", Some(0)).unwrap()
}

pub fn uniform4(seed: u64, shape: (usize, usize, usize, usize)) -> Array4<f64> {
    let mut r = rng(seed);
    Array4::from_shape_simple_fn(shape, || r.random_range(-1.0..1.0))
}

pub fn uniform5(seed: u64, shape: (usize, usize, usize, usize, usize)) -> Array5<f64> {
    let mut r = rng(seed);
    Array5::from_shape_simple_fn(shape, || r.random_range(-1.0..1.0))
}

pub fn uniform2(seed: u64, rows: usize, cols: usize) -> Array2<f64> {
    let mut r = rng(seed);
    Array2::from_shape_simple_fn((rows, cols), || r.random_range(-1.0..1.0))
}

/// `streams` score matrices over the same samples plus their labels.
pub fn score_streams(seed: u64, streams: usize, samples: usize, classes: usize) -> (Vec<ScoreMatrix>, Vec<(String, usize)>) {
    let mut r = rng(seed);
    let ids: Vec<String> = (0..samples).map(|i| format!("s{i:04}")).collect();
    let labels = ids.iter().map(|id| (id.clone(), r.random_range(0..classes))).collect();
    let mats = (0..streams)
        .map(|k| ScoreMatrix::new(format!("stream{k}"), ids.clone(), uniform2(seed + 1 + k as u64, samples, classes)).unwrap())
        .collect();
    (mats, labels)
}
