//! Cross-entropy objective, SGD with momentum and step decay, the training
//! loop, and finite-difference gradient verification.

use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Array5};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::input::Samples;
use crate::network::{argmax, Network};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub decay_factor: f64,
    pub milestones: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub seed: u64,
    pub weight_decay: f64,
    /// Stop once the running train accuracy of an epoch reaches this value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_train_acc: Option<f64>,
    /// Rescale each batch gradient to at most this Euclidean norm.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_grad_norm: Option<f64>,
}

impl TrainConfig {
    /// GCN schedule: lr 0.1, x0.1 at epochs 35 and 55, 65 epochs, batch 64.
    pub fn full_scale_gcn() -> Self {
        TrainConfig {
            base_lr: 0.1,
            decay_factor: 0.1,
            milestones: vec![35, 55],
            epochs: 65,
            batch_size: 64,
            momentum: 0.9,
            seed: 0,
            weight_decay: 4e-4,
            target_train_acc: None,
            clip_grad_norm: None,
        }
    }

    /// Attention schedule: lr 0.02, 90 epochs, batch 128, no stated decay.
    pub fn full_scale_former() -> Self {
        TrainConfig {
            base_lr: 0.02,
            decay_factor: 0.1,
            milestones: vec![],
            epochs: 90,
            batch_size: 128,
            momentum: 0.9,
            seed: 0,
            weight_decay: 4e-4,
            target_train_acc: None,
            clip_grad_norm: None,
        }
    }

    /// CPU-sized GCN schedule used by the synthetic benchmarks.
    pub fn desk_gcn() -> Self {
        TrainConfig {
            base_lr: 0.05,
            decay_factor: 0.1,
            milestones: vec![120, 170],
            epochs: 200,
            batch_size: 8,
            momentum: 0.9,
            seed: 0,
            weight_decay: 4e-4,
            target_train_acc: Some(0.99),
            clip_grad_norm: Some(1.0),
        }
    }

    pub fn desk_former() -> Self {
        TrainConfig {
            base_lr: 0.002,
            decay_factor: 0.1,
            milestones: vec![120, 170],
            epochs: 200,
            batch_size: 8,
            momentum: 0.9,
            seed: 0,
            weight_decay: 4e-4,
            target_train_acc: Some(0.99),
            clip_grad_norm: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) {
            return Err(Error::Config(format!("base_lr must be >= 0, got {}", self.base_lr)));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor < 1.0) {
            return Err(Error::Config(format!(
                "decay_factor must lie in (0, 1), got {}",
                self.decay_factor
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be >= 0".into()));
        }
        if self.clip_grad_norm.is_some_and(|c| !(c > 0.0 && c.is_finite())) {
            return Err(Error::Config("clip_grad_norm must be positive".into()));
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("milestones must be strictly increasing".into()));
        }
        if self.milestones.iter().any(|&m| m >= self.epochs) {
            return Err(Error::Config("milestones must be below the epoch count".into()));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: TrainConfig =
            toml::from_str(text).map_err(|e| Error::Format(format!("train config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }
}

/// `base_lr * decay_factor^(number of milestones <= epoch)`.
///
/// A factor of the form `1/n` is applied as a division by `n^k`, which keeps
/// decimal schedules such as 0.1 / 0.01 / 0.001 free of rounding drift.
pub fn lr_at_epoch(config: &TrainConfig, epoch: usize) -> f64 {
    let passed = config.milestones.iter().filter(|&&m| m <= epoch).count() as i32;
    if passed == 0 {
        return config.base_lr;
    }
    let inv = 1.0 / config.decay_factor;
    let n = inv.round();
    if config.decay_factor > 0.0 && n >= 2.0 && (inv - n).abs() <= 1e-9 * n {
        config.base_lr / n.powi(passed)
    } else {
        config.base_lr * config.decay_factor.powi(passed)
    }
}

/// Mean cross-entropy over the batch and its gradient `(softmax - onehot) / B`.
pub fn cross_entropy_loss(logits: &Array2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    let (b, k) = logits.dim();
    if labels.len() != b {
        return Err(Error::Dimension(format!(
            "{} labels for {b} logit rows",
            labels.len()
        )));
    }
    if b == 0 {
        return Err(Error::Argument("empty batch".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::Argument(format!("label {bad} outside [0, {k})")));
    }
    let mut grad = Array2::<f64>::zeros((b, k));
    let mut loss = 0.0;
    for (i, row) in logits.rows().into_iter().enumerate() {
        let max = row.fold(f64::NEG_INFINITY, |a, &x| a.max(x));
        let sum: f64 = row.iter().map(|&x| (x - max).exp()).sum();
        let lse = max + sum.ln();
        loss += lse - row[labels[i]];
        for j in 0..k {
            grad[[i, j]] = (row[j] - lse).exp() / b as f64;
        }
        grad[[i, labels[i]]] -= 1.0 / b as f64;
    }
    Ok((loss / b as f64, grad))
}

/// One momentum-SGD update, in place:
/// `v <- momentum * v + grad + weight_decay * param; param <- param - lr * v`.
pub fn sgd_step(
    params: &mut [f64],
    grads: &[f64],
    velocity: &mut [f64],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(Error::Dimension(format!(
            "sgd step on {} params with {} grads and {} velocities",
            params.len(),
            grads.len(),
            velocity.len()
        )));
    }
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v + g + weight_decay * *p;
        *p -= lr * *v;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub lr: Vec<f64>,
    pub train_loss: Vec<f64>,
    pub train_acc: Vec<f64>,
    /// NaN when no validation set was given.
    pub val_acc: Vec<f64>,
}

impl TrainHistory {
    pub fn epochs(&self) -> usize {
        self.lr.len()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,lr,train_loss,train_acc,val_acc\n");
        for e in 0..self.epochs() {
            out.push_str(&format!(
                "{},{:e},{:.16e},{:.16e},{:.16e}\n",
                e, self.lr[e], self.train_loss[e], self.train_acc[e], self.val_acc[e]
            ));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv().as_bytes())
            .map_err(|e| Error::io(path, e))
    }
}

/// Scale `grads` down so its Euclidean norm is at most `max_norm`.
pub fn clip_to_norm(grads: &mut [f64], max_norm: f64) {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let k = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= k);
    }
}

/// Logits for every sample, computed in chunks.
pub fn predict<N: Network>(model: &N, inputs: &Array5<f64>, chunk: usize) -> Result<Array2<f64>> {
    let n = inputs.dim().0;
    let mut out = Array2::zeros((n, model.num_classes()));
    let chunk = chunk.max(1);
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let logits = model.forward(&inputs.slice(ndarray::s![start..end, .., .., .., ..]).to_owned())?;
        out.slice_mut(ndarray::s![start..end, ..]).assign(&logits);
        start = end;
    }
    Ok(out)
}

pub fn accuracy(logits: &Array2<f64>, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let correct = logits
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(row, &y)| argmax(row.iter().copied()) == y)
        .count();
    correct as f64 / labels.len() as f64
}

/// Called with `(model, epoch, val_acc)` whenever validation accuracy improves.
pub type CheckpointHook<'a, N> = dyn FnMut(&N, usize, f64) -> Result<()> + 'a;

/// Mini-batch SGD. Deterministic for a fixed `config.seed`: the shuffle of
/// every epoch comes from one seeded stream, and updates are sequential.
pub fn train_model<N: Network>(
    mut model: N,
    train: &Samples,
    val: Option<&Samples>,
    config: &TrainConfig,
    mut on_best: Option<&mut CheckpointHook<'_, N>>,
) -> Result<(N, TrainHistory)> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Argument("training set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut velocity = vec![0.0; model.num_params()];
    let mut history = TrainHistory::default();
    let mut best_val = f64::NEG_INFINITY;

    for epoch in 0..config.epochs {
        let lr = lr_at_epoch(config, epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(config.batch_size) {
            let (x, y) = train.select(batch);
            let (logits, cache) = model.forward_train(&x)?;
            let (loss, dlogits) = cross_entropy_loss(&logits, &y)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss at epoch {epoch}")));
            }
            loss_sum += loss * batch.len() as f64;
            correct += logits
                .rows()
                .into_iter()
                .zip(&y)
                .filter(|(row, &l)| argmax(row.iter().copied()) == l)
                .count();
            if lr == 0.0 {
                continue;
            }
            let mut grads = model.backward(&cache, &dlogits).flat_params();
            if let Some(max_norm) = config.clip_grad_norm {
                clip_to_norm(&mut grads, max_norm);
            }
            let mut params = model.flat_params();
            sgd_step(
                &mut params,
                &grads,
                &mut velocity,
                lr,
                config.momentum,
                config.weight_decay,
            )?;
            if params.iter().any(|p| !p.is_finite()) {
                return Err(Error::NonFinite(format!("parameters at epoch {epoch}")));
            }
            model.set_flat_params(&params);
        }
        let train_acc = correct as f64 / train.len() as f64;
        let val_acc = match val {
            Some(v) if !v.is_empty() => accuracy(&predict(&model, &v.inputs, 64)?, &v.labels),
            _ => f64::NAN,
        };
        history.lr.push(lr);
        history.train_loss.push(loss_sum / train.len() as f64);
        history.train_acc.push(train_acc);
        history.val_acc.push(val_acc);
        if val_acc > best_val {
            best_val = val_acc;
            if let Some(hook) = on_best.as_mut() {
                hook(&model, epoch, val_acc)?;
            }
        }
        if config.target_train_acc.is_some_and(|t| train_acc >= t) {
            break;
        }
    }
    Ok((model, history))
}

pub const FD_STEP: f64 = 1e-3;

/// Compare `analytic` against central differences of `f` (step 1e-3) on
/// `probe_count` randomly chosen coordinates. Returns the largest relative
/// error `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn finite_difference_check<F>(
    mut f: F,
    params: &[f64],
    analytic: &[f64],
    probe_count: usize,
    seed: u64,
) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    if probe_count == 0 {
        return Err(Error::Argument("probe_count must be at least 1".into()));
    }
    if params.len() != analytic.len() || params.is_empty() {
        return Err(Error::Dimension(format!(
            "{} params vs {} gradient entries",
            params.len(),
            analytic.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = params.to_vec();
    let mut worst = 0.0f64;
    for _ in 0..probe_count {
        let i = rng.random_range(0..params.len());
        probe[i] = params[i] + FD_STEP;
        let up = f(&probe);
        probe[i] = params[i] - FD_STEP;
        let down = f(&probe);
        probe[i] = params[i];
        let numeric = (up - down) / (2.0 * FD_STEP);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Finite-difference check of a network's cross-entropy gradient on one batch.
pub fn network_gradient_check<N: Network>(
    model: &N,
    x: &Array5<f64>,
    labels: &[usize],
    probe_count: usize,
    seed: u64,
) -> Result<f64> {
    let (logits, cache) = model.forward_train(x)?;
    let (_, dlogits) = cross_entropy_loss(&logits, labels)?;
    let analytic = model.backward(&cache, &dlogits).flat_params();
    let params = model.flat_params();
    let mut probe_model = model.clone();
    finite_difference_check(
        |p| {
            probe_model.set_flat_params(p);
            let logits = probe_model.forward(x).expect("shapes already validated");
            cross_entropy_loss(&logits, labels).expect("labels validated").0
        },
        &params,
        &analytic,
        probe_count,
        seed,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn uniform_logits_give_log_k() {
        let (loss, _) = cross_entropy_loss(&Array2::zeros((1, 4)), &[2]).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
        assert!((loss - 1.386294).abs() < 1e-6);
    }

    #[test]
    fn saturated_logit_gives_zero_loss() {
        let (loss, _) = cross_entropy_loss(&array![[100.0, 0.0, 0.0]], &[0]).unwrap();
        assert!(loss < 1e-6);
    }

    #[test]
    fn label_out_of_range() {
        assert!(matches!(
            cross_entropy_loss(&Array2::zeros((1, 3)), &[3]),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn gradient_rows_sum_to_zero() {
        let logits = array![[0.3, -1.0, 2.0], [5.0, 5.0, -3.0]];
        let (_, g) = cross_entropy_loss(&logits, &[1, 0]).unwrap();
        for row in g.rows() {
            assert!(row.sum().abs() < 1e-7);
        }
    }

    #[test]
    fn loss_gradient_matches_central_differences() {
        let logits = array![
            [0.2, -1.3, 0.7, 2.1, -0.4],
            [1.1, 0.0, -0.6, 0.3, 0.9],
            [-2.0, 0.5, 1.5, -0.1, 0.05]
        ];
        let labels = [3, 0, 2];
        let (_, g) = cross_entropy_loss(&logits, &labels).unwrap();
        let flat: Vec<f64> = logits.iter().copied().collect();
        let f = |p: &[f64]| {
            let m = Array2::from_shape_vec((3, 5), p.to_vec()).unwrap();
            cross_entropy_loss(&m, &labels).unwrap().0
        };
        // every coordinate, by central differences
        let h = 1e-5;
        for i in 0..flat.len() {
            let mut up = flat.clone();
            up[i] += h;
            let mut down = flat.clone();
            down[i] -= h;
            let num = (f(&up) - f(&down)) / (2.0 * h);
            let a = g.as_slice().unwrap()[i];
            assert!((a - num).abs() / a.abs().max(num.abs()).max(1e-8) < 1e-4);
        }
    }

    #[test]
    fn full_scale_schedule() {
        let cfg = TrainConfig::full_scale_gcn();
        assert_eq!(lr_at_epoch(&cfg, 0), 0.1);
        assert_eq!(lr_at_epoch(&cfg, 34), 0.1);
        assert_eq!(lr_at_epoch(&cfg, 35), 0.01);
        assert_eq!(lr_at_epoch(&cfg, 55), 0.001);
        assert_eq!(lr_at_epoch(&cfg, 60), 0.001);
        let halving = TrainConfig {
            decay_factor: 0.5,
            ..cfg.clone()
        };
        assert_eq!(lr_at_epoch(&halving, 55), 0.025);
        let odd = TrainConfig {
            decay_factor: 0.3,
            ..cfg.clone()
        };
        assert_eq!(lr_at_epoch(&odd, 55), 0.1 * 0.3f64.powi(2));
        let lrs: Vec<f64> = (0..cfg.epochs).map(|e| lr_at_epoch(&cfg, e)).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn config_validation() {
        let mut cfg = TrainConfig::full_scale_gcn();
        cfg.milestones = vec![55, 35];
        assert!(cfg.validate().is_err());
        cfg.milestones = vec![35, 65];
        assert!(cfg.validate().is_err());
        cfg = TrainConfig::full_scale_gcn();
        cfg.momentum = 1.0;
        assert!(cfg.validate().is_err());
        let text = TrainConfig::desk_former().to_toml_string();
        assert_eq!(TrainConfig::from_toml_str(&text).unwrap(), TrainConfig::desk_former());
        let text = TrainConfig::desk_gcn().to_toml_string();
        assert_eq!(TrainConfig::from_toml_str(&text).unwrap(), TrainConfig::desk_gcn());
        for bad in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            cfg = TrainConfig::full_scale_gcn();
            cfg.clip_grad_norm = Some(bad);
            assert!(cfg.validate().is_err(), "{bad}");
        }
    }

    #[test]
    fn clipping_rescales_only_long_gradients() {
        let mut g = vec![3.0, 4.0];
        clip_to_norm(&mut g, 1.0);
        assert!((g[0] - 0.6).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15);
        let mut g = vec![0.3, -0.4];
        clip_to_norm(&mut g, 1.0);
        assert_eq!(g, vec![0.3, -0.4]);
        let mut g = vec![0.0; 3];
        clip_to_norm(&mut g, 1.0);
        assert_eq!(g, vec![0.0; 3]);
    }

    #[test]
    fn sgd_examples() {
        let mut p = vec![1.0, -2.0];
        let mut v = vec![0.0; 2];
        sgd_step(&mut p, &[0.5, 0.25], &mut v, 1.0, 0.0, 0.0).unwrap();
        assert_eq!(p, vec![0.5, -2.25]);

        let mut p = vec![3.0];
        let mut v = vec![0.0];
        sgd_step(&mut p, &[0.0], &mut v, 0.1, 0.9, 0.0).unwrap();
        assert_eq!(p, vec![3.0]);

        // scalar recurrence: v1 = g1, p1 = p0 - lr v1; v2 = 0.9 v1 + g2, p2 = p1 - lr v2
        let (lr, mu) = (0.1, 0.9);
        let (p0, g1, g2) = (1.0, 0.5, -0.2);
        let v1 = g1;
        let p1 = p0 - lr * v1;
        let v2 = mu * v1 + g2;
        let p2 = p1 - lr * v2;
        let mut p = vec![p0];
        let mut v = vec![0.0];
        sgd_step(&mut p, &[g1], &mut v, lr, mu, 0.0).unwrap();
        sgd_step(&mut p, &[g2], &mut v, lr, mu, 0.0).unwrap();
        assert!((p[0] - p2).abs() < 1e-15);

        assert!(sgd_step(&mut p, &[0.0, 1.0], &mut v, lr, mu, 0.0).is_err());
    }

    #[test]
    fn fd_check_on_quadratic() {
        let params = vec![0.5, -1.5, 2.0, 0.0];
        let analytic: Vec<f64> = params.iter().map(|x| 2.0 * x).collect();
        let err = finite_difference_check(
            |p| p.iter().map(|x| x * x).sum(),
            &params,
            &analytic,
            16,
            1,
        )
        .unwrap();
        assert!(err < 1e-6);
        assert!(finite_difference_check(|_| 0.0, &params, &analytic, 0, 1).is_err());
    }
}
