//! Reference implementations written as plain loops, shared by the
//! integration tests.
#![allow(dead_code)]

use ndarray::{Array2, Array3, Array4, Array5};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skelfuse_core::former::{AttentionParams, NORM_EPS};
use skelfuse_core::gcn::{AdjacencyMode, GcnConfig, GcnModel};
use skelfuse_core::skeleton::{Modality, SkeletonSequence, Topology};

pub fn random_joints(rng: &mut ChaCha8Rng, m: usize, t: usize, v: usize, c: usize) -> SkeletonSequence {
    let data = Array4::from_shape_simple_fn((m, t, v, c), || rng.random_range(-2.0f32..2.0));
    SkeletonSequence::new(data, Modality::Joint, "rand", Some(0)).unwrap()
}

pub fn random5(rng: &mut ChaCha8Rng, shape: (usize, usize, usize, usize, usize)) -> Array5<f64> {
    Array5::from_shape_simple_fn(shape, || rng.random_range(-1.0..1.0))
}

pub fn random2(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((r, c), || rng.random_range(-1.0..1.0))
}

fn subtract_from(x: &Array4<f32>, anchor: &[usize]) -> Array4<f32> {
    let (m, t, v, c) = x.dim();
    let mut out = Array4::<f32>::zeros((m, t, v, c));
    for mi in 0..m {
        for ti in 0..t {
            for vi in 0..v {
                for ci in 0..c {
                    out[[mi, ti, vi, ci]] = x[[mi, ti, vi, ci]] - x[[mi, ti, anchor[vi], ci]];
                }
            }
        }
    }
    out
}

fn forward_difference(x: &Array4<f32>) -> Array4<f32> {
    let (m, t, v, c) = x.dim();
    let mut out = Array4::<f32>::zeros((m, t, v, c));
    for mi in 0..m {
        for ti in 0..t.saturating_sub(1) {
            for vi in 0..v {
                for ci in 0..c {
                    out[[mi, ti, vi, ci]] = x[[mi, ti + 1, vi, ci]] - x[[mi, ti, vi, ci]];
                }
            }
        }
    }
    out
}

pub fn naive_modality(x: &Array4<f32>, topo: &Topology, modality: Modality) -> Array4<f32> {
    let bone = || subtract_from(x, topo.parent());
    let k2 = || {
        let p2: Vec<usize> = topo.parent().iter().map(|&p| topo.parent()[p]).collect();
        subtract_from(x, &p2)
    };
    match modality {
        Modality::Joint => x.clone(),
        Modality::Bone => bone(),
        Modality::JointMotion => forward_difference(x),
        Modality::BoneMotion => forward_difference(&bone()),
        Modality::K2 => k2(),
        Modality::K2Motion => forward_difference(&k2()),
    }
}

/// `relu(sum_j sum_c A[i,j] H[b,t,j,c] W[c,o])`.
pub fn naive_graph_conv(h: &Array4<f64>, a: &Array2<f64>, w: &Array2<f64>) -> Array4<f64> {
    let (b, t, v, c) = h.dim();
    let o = w.ncols();
    let mut out = Array4::zeros((b, t, v, o));
    for bi in 0..b {
        for ti in 0..t {
            for i in 0..v {
                for oi in 0..o {
                    let mut acc = 0.0;
                    for j in 0..v {
                        for ci in 0..c {
                            acc += a[[i, j]] * h[[bi, ti, j, ci]] * w[[ci, oi]];
                        }
                    }
                    out[[bi, ti, i, oi]] = acc.max(0.0);
                }
            }
        }
    }
    out
}

fn naive_norm(row: &[f64], scale: &[f64], shift: &[f64]) -> Vec<f64> {
    let d = row.len() as f64;
    let mean = row.iter().sum::<f64>() / d;
    let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / d;
    row.iter()
        .enumerate()
        .map(|(j, x)| (x - mean) / (var + NORM_EPS).sqrt() * scale[j] + shift[j])
        .collect()
}

/// Per-pair attention for one sample: `[N, d]` in, `[N, d]` out.
pub fn naive_attention(x: &Array2<f64>, p: &AttentionParams) -> Array2<f64> {
    let (n, d) = x.dim();
    let dh_total = p.w_q.ncols();
    let dh = dh_total / p.heads;
    let proj = |w: &Array2<f64>| {
        let mut out = Array2::<f64>::zeros((n, dh_total));
        for i in 0..n {
            for k in 0..dh_total {
                for j in 0..d {
                    out[[i, k]] += x[[i, j]] * w[[j, k]];
                }
            }
        }
        out
    };
    let (q, k, v) = (proj(&p.w_q), proj(&p.w_k), proj(&p.w_v));
    let mut ctx = Array2::<f64>::zeros((n, dh_total));
    for h in 0..p.heads {
        for i in 0..n {
            let mut scores = vec![0.0; n];
            for (j, s) in scores.iter_mut().enumerate() {
                for e in h * dh..(h + 1) * dh {
                    *s += q[[i, e]] * k[[j, e]];
                }
                *s /= (dh as f64).sqrt();
            }
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            for j in 0..n {
                for e in h * dh..(h + 1) * dh {
                    ctx[[i, e]] += exps[j] / total * v[[j, e]];
                }
            }
        }
    }
    let mut out = Array2::<f64>::zeros((n, d));
    for i in 0..n {
        let mut resid = vec![0.0; d];
        for (j, r) in resid.iter_mut().enumerate() {
            *r = x[[i, j]];
            for e in 0..dh_total {
                *r += ctx[[i, e]] * p.w_o[[e, j]];
            }
        }
        let normed = naive_norm(&resid, p.norm_scale.as_slice().unwrap(), p.norm_shift.as_slice().unwrap());
        for j in 0..d {
            out[[i, j]] = normed[j];
        }
    }
    out
}

pub fn random_attention(rng: &mut ChaCha8Rng, d: usize, dh: usize, heads: usize) -> AttentionParams {
    AttentionParams {
        w_q: random2(rng, d, dh),
        w_k: random2(rng, d, dh),
        w_v: random2(rng, d, dh),
        w_o: random2(rng, dh, d),
        norm_scale: ndarray::Array1::from_shape_simple_fn(d, || rng.random_range(0.5..1.5)),
        norm_shift: ndarray::Array1::from_shape_simple_fn(d, || rng.random_range(-0.5..0.5)),
        heads,
    }
}

/// Segment means over frames and persons, token index `v * S + s`.
pub fn naive_tokens(x: &Array5<f64>, segments: usize) -> Array3<f64> {
    let (b, m, t, v, c) = x.dim();
    let mut out = Array3::zeros((b, v * segments, c));
    for bi in 0..b {
        for vi in 0..v {
            for s in 0..segments {
                let (lo, hi) = (s * t / segments, (s + 1) * t / segments);
                for ci in 0..c {
                    let mut acc = 0.0;
                    for mi in 0..m {
                        for ti in lo..hi {
                            acc += x[[bi, mi, ti, vi, ci]];
                        }
                    }
                    out[[bi, vi * segments + s, ci]] = acc / ((hi - lo) * m) as f64;
                }
            }
        }
    }
    out
}

pub fn max_abs_diff<D: ndarray::Dimension>(a: &ndarray::Array<f64, D>, b: &ndarray::Array<f64, D>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Smallest distance of any ReLU input from zero.
pub fn relu_margin(model: &GcnModel, x: &Array5<f64>) -> f64 {
    model
        .block_preactivations(x)
        .unwrap()
        .iter()
        .flat_map(|(g, t)| g.iter().chain(t.iter()))
        .fold(f64::INFINITY, |m, v| m.min(v.abs()))
}

/// A one-block GCN and batch whose ReLU inputs all sit at least `margin`
/// away from zero, so central differences of step 1e-3 never straddle a
/// kink. Draws fixtures from `seed` onwards until one qualifies.
pub fn kink_free_gcn(mode: AdjacencyMode, seed: u64, margin: f64) -> (GcnModel, Array5<f64>, u64) {
    for attempt in 0..10_000 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + attempt);
        let cfg = GcnConfig {
            channels: vec![4],
            temporal_kernel: 3,
            mode,
        };
        let mut model = GcnModel::new(Topology::random(5, 2, &mut rng), 2, 3, cfg, &mut rng).unwrap();
        for layer in &mut model.layers {
            if let Some(rp) = &mut layer.refine {
                rp.scale[0] = 0.3;
            }
            layer.temporal.bias.fill(0.1);
        }
        let x = random5(&mut rng, (2, 2, 4, 5, 2));
        if relu_margin(&model, &x) >= margin {
            return (model, x, attempt + 1);
        }
    }
    panic!("no fixture with ReLU margin {margin}");
}
