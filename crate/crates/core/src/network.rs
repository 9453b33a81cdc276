//! Shared plumbing for the trainable backbones.

use ndarray::{Array, Array2, Array5, Dimension, ShapeBuilder};
use rand::Rng;

use crate::error::Result;

/// A classifier over batches shaped `[batch, persons, frames, joints, channels]`.
///
/// Gradients are returned as a value of the model type itself, so parameter
/// visiting gives optimizers and checkpoints a uniform flat view.
pub trait Network: Clone + Send + Sync {
    type Cache;

    fn num_classes(&self) -> usize;

    fn in_channels(&self) -> usize;

    fn forward(&self, x: &Array5<f64>) -> Result<Array2<f64>>;

    fn forward_train(&self, x: &Array5<f64>) -> Result<(Array2<f64>, Self::Cache)>;

    /// Parameter gradients for upstream gradient `dlogits` (`[batch, K]`).
    fn backward(&self, cache: &Self::Cache, dlogits: &Array2<f64>) -> Self;

    /// Visit every learnable tensor in a fixed order as `(name, shape, values)`.
    fn visit_params(&self, f: &mut dyn FnMut(&str, &[usize], &[f64]));

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64]));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, _, v| n += v.len());
        n
    }

    fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.visit_params(&mut |_, _, v| out.extend_from_slice(v));
        out
    }

    fn set_flat_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params(), "flat parameter length");
        let mut offset = 0;
        self.visit_params_mut(&mut |_, v| {
            v.copy_from_slice(&flat[offset..offset + v.len()]);
            offset += v.len();
        });
    }

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_params_mut(&mut |_, v| v.fill(0.0));
        z
    }
}

/// Uniform He-style initialization: `U(-b, b)` with `b = sqrt(6 / fan_in)`.
pub(crate) fn he_uniform<Sh, D, R>(shape: Sh, fan_in: usize, rng: &mut R) -> Array<f64, D>
where
    Sh: ShapeBuilder<Dim = D>,
    D: Dimension,
    R: Rng + ?Sized,
{
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    Array::from_shape_simple_fn(shape, || rng.random_range(-bound..bound))
}

pub(crate) fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(row: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, x) in row.into_iter().enumerate() {
        if x > best_val || i == 0 {
            best = i;
            best_val = x;
        }
    }
    best
}
