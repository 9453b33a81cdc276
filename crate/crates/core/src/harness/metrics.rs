use ndarray::Array2;

use crate::ensemble::{labels_for, ScoreMatrix};
use crate::error::{Error, Result};

/// Top-1 accuracy and a `[K, K]` confusion matrix, rows true, columns
/// predicted.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub top1: f64,
    pub confusion: Array2<u64>,
}

impl Metrics {
    pub fn num_classes(&self) -> usize {
        self.confusion.nrows()
    }

    pub fn total(&self) -> u64 {
        self.confusion.sum()
    }

    /// Each row divided by its sum; empty rows stay zero.
    pub fn row_normalized(&self) -> Array2<f64> {
        let mut out = self.confusion.mapv(|c| c as f64);
        for mut row in out.rows_mut() {
            let s = row.sum();
            if s > 0.0 {
                row.mapv_inplace(|x| x / s);
            }
        }
        out
    }
}

pub fn evaluate(scores: &ScoreMatrix, labels: &[(String, usize)]) -> Result<Metrics> {
    let y = labels_for(scores.sample_ids(), labels)?;
    let k = scores.num_classes();
    if let Some(&bad) = y.iter().find(|&&l| l >= k) {
        return Err(Error::Dimension(format!("label {bad} outside {k} scored classes")));
    }
    let mut confusion = Array2::<u64>::zeros((k, k));
    for (&truth, pred) in y.iter().zip(scores.predictions()) {
        confusion[[truth, pred]] += 1;
    }
    let correct: u64 = (0..k).map(|i| confusion[[i, i]]).sum();
    let top1 = if y.is_empty() {
        0.0
    } else {
        correct as f64 / y.len() as f64
    };
    Ok(Metrics { top1, confusion })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i}")).collect()
    }

    #[test]
    fn one_hot_scores_are_perfect() {
        let s = ScoreMatrix::new("a", ids(3), array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]).unwrap();
        let labels: Vec<_> = ids(3).into_iter().zip([0, 1, 2]).collect();
        let m = evaluate(&s, &labels).unwrap();
        assert_eq!(m.top1, 1.0);
        assert_eq!(m.confusion, Array2::from_diag(&array![1u64, 1, 1]));
    }

    #[test]
    fn zero_logits_predict_class_zero() {
        let s = ScoreMatrix::new("a", ids(2), Array2::zeros((2, 3))).unwrap();
        let labels: Vec<_> = ids(2).into_iter().zip([1, 2]).collect();
        let m = evaluate(&s, &labels).unwrap();
        assert_eq!(m.top1, 0.0);
        assert_eq!(m.confusion.column(0).sum(), 2);
    }

    #[test]
    fn missing_label_is_alignment_error() {
        let s = ScoreMatrix::new("a", ids(2), Array2::zeros((2, 2))).unwrap();
        let labels = vec![("s0".to_string(), 0), ("zz".to_string(), 1)];
        assert!(matches!(evaluate(&s, &labels), Err(Error::Alignment(_))));
    }

    #[test]
    fn random_scores_match_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let (n, k) = (rng.random_range(1..40), rng.random_range(2..6));
            let logits = Array2::from_shape_fn((n, k), |_| (rng.random_range(0..4) as f64) * 0.5);
            let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            let s = ScoreMatrix::new("r", ids(n), logits.clone()).unwrap();
            let m = evaluate(&s, &ids(n).into_iter().zip(y.clone()).collect::<Vec<_>>()).unwrap();

            let mut confusion = vec![vec![0u64; k]; k];
            let mut correct = 0;
            for i in 0..n {
                let mut best = 0;
                for j in 1..k {
                    if logits[[i, j]] > logits[[i, best]] {
                        best = j;
                    }
                }
                confusion[y[i]][best] += 1;
                if best == y[i] {
                    correct += 1;
                }
            }
            assert_eq!(m.top1, correct as f64 / n as f64);
            for i in 0..k {
                for j in 0..k {
                    assert_eq!(m.confusion[[i, j]], confusion[i][j]);
                }
            }
            let trace: u64 = (0..k).map(|i| m.confusion[[i, i]]).sum();
            assert_eq!(trace as f64 / m.total() as f64, m.top1);
            assert_eq!(m.total(), n as u64);
        }
    }
}
