//! Losses, Adam, the exponential LR schedule, the learning-rate range test,
//! and the training loop.
//!
//! A run is a pure function of (model seed, config): batch shuffling,
//! initialization, and every update are driven by the documented RNG, so the
//! same inputs reproduce every reported number bit-exactly.

use crate::data::{batch_iter, BatchSize, Dataset, Targets};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::models::Sequential;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// Binary cross-entropy on logits, mean over all elements.
    BceWithLogits,
    /// Softmax + negative log likelihood, mean over the batch. Targets are
    /// class indices.
    CrossEntropy,
    /// Mean squared error over all elements.
    Mse,
}

impl Loss {
    /// Loss value (batch mean) and its exact gradient w.r.t. predictions.
    pub fn forward_backward(&self, pred: &Matrix, targets: &Targets) -> Result<(f64, Matrix)> {
        match (self, targets) {
            (Loss::Mse, Targets::Values(t)) => {
                if pred.shape() != t.shape() {
                    return Err(Error::DimMismatch {
                        op: "mse",
                        lhs: format!("{:?}", pred.shape()),
                        rhs: format!("{:?}", t.shape()),
                    });
                }
                let n = (pred.rows() * pred.cols()) as f64;
                let mut grad = Matrix::zeros(pred.rows(), pred.cols());
                let mut sum = 0.0;
                for (i, (p, tv)) in pred.data().iter().zip(t.data()).enumerate() {
                    let d = p - tv;
                    sum += d * d;
                    grad.data_mut()[i] = 2.0 * d / n;
                }
                Ok((sum / n, grad))
            }
            (Loss::BceWithLogits, Targets::Values(t)) => {
                if pred.shape() != t.shape() {
                    return Err(Error::DimMismatch {
                        op: "bce_with_logits",
                        lhs: format!("{:?}", pred.shape()),
                        rhs: format!("{:?}", t.shape()),
                    });
                }
                let n = (pred.rows() * pred.cols()) as f64;
                let mut grad = Matrix::zeros(pred.rows(), pred.cols());
                let mut sum = 0.0;
                for (i, (&z, &y)) in pred.data().iter().zip(t.data()).enumerate() {
                    // Stable form: max(z,0) - z*y + ln(1 + exp(-|z|)).
                    sum += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
                    let sigma = 1.0 / (1.0 + (-z).exp());
                    grad.data_mut()[i] = (sigma - y) / n;
                }
                Ok((sum / n, grad))
            }
            (Loss::CrossEntropy, Targets::Classes(classes)) => {
                if classes.len() != pred.rows() {
                    return Err(Error::DimMismatch {
                        op: "cross_entropy",
                        lhs: format!("{} rows", pred.rows()),
                        rhs: format!("{} targets", classes.len()),
                    });
                }
                let n_classes = pred.cols();
                let n = pred.rows() as f64;
                let mut grad = Matrix::zeros(pred.rows(), pred.cols());
                let mut sum = 0.0;
                for i in 0..pred.rows() {
                    let c = classes[i];
                    if c >= n_classes {
                        return Err(Error::ClassOutOfRange {
                            index: c,
                            n_classes,
                        });
                    }
                    let row = pred.row(i);
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let logsum = row.iter().map(|z| (z - max).exp()).sum::<f64>().ln() + max;
                    sum += logsum - row[c];
                    let grow = grad.row_mut(i);
                    for j in 0..n_classes {
                        let softmax = (row[j] - logsum).exp();
                        grow[j] = (softmax - if j == c { 1.0 } else { 0.0 }) / n;
                    }
                }
                Ok((sum / n, grad))
            }
            (loss, _) => Err(Error::InvalidConfig(format!(
                "loss {loss:?} is incompatible with the target representation"
            ))),
        }
    }
}

/// Adam with bias correction; beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(shapes: &[usize]) -> AdamState {
        AdamState {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn for_model(model: &Sequential) -> AdamState {
        let shapes: Vec<usize> = model.param_slices().iter().map(|s| s.len()).collect();
        AdamState::new(&shapes)
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update over every parameter tensor. `params`, `grads`, and
    /// `names` are aligned; a non-finite gradient aborts with the offending
    /// parameter's name before any tensor is touched.
    pub fn step(
        &mut self,
        params: &mut [&mut [f64]],
        grads: &[&[f64]],
        names: &[String],
        lr: f64,
    ) -> Result<()> {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        for (k, g) in grads.iter().enumerate() {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    param: names
                        .get(k)
                        .cloned()
                        .unwrap_or_else(|| format!("param[{k}]")),
                });
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// lr_t = lr0 * gamma^t where t counts completed epochs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LrSchedule {
    pub lr0: f64,
    pub gamma: f64,
}

impl LrSchedule {
    pub fn lr(&self, epoch: usize) -> f64 {
        self.lr0 * self.gamma.powi(epoch as i32)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: BatchSize,
    pub lr0: f64,
    pub gamma: f64,
    pub loss: Loss,
    pub seed: u64,
    /// Evaluate the test split at the end of every epoch.
    pub eval_every_epoch: bool,
}

/// Per-run curve data produced by `train`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainRecord {
    pub train_loss_per_epoch: Vec<f64>,
    pub test_loss_per_epoch: Vec<f64>,
    /// Set when a non-finite loss aborted the run at the given epoch.
    pub aborted_at_epoch: Option<usize>,
}

/// Mean loss of a model over a dataset, evaluated in chunks.
pub fn evaluate_loss(model: &mut Sequential, data: &Dataset, loss: Loss) -> Result<f64> {
    let n = data.inputs.rows();
    let chunk = 1000usize;
    let mut total = 0.0;
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let x = data.inputs_slice(start, end)?;
        let t = data.targets_slice(start, end)?;
        let pred = model.forward_batch(&x)?;
        let (value, _) = loss.forward_backward(&pred, &t)?;
        total += value * (end - start) as f64;
        start = end;
    }
    Ok(total / n as f64)
}

/// Forward the whole dataset in chunks; returns the stacked predictions.
pub fn predict(model: &mut Sequential, inputs: &Matrix) -> Result<Matrix> {
    let n = inputs.rows();
    let chunk = 1000usize;
    let mut out: Option<Matrix> = None;
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let x = Matrix::from_vec(
            end - start,
            inputs.cols(),
            inputs.data()[start * inputs.cols()..end * inputs.cols()].to_vec(),
        )?;
        let y = model.forward_batch(&x)?;
        match &mut out {
            None => {
                let mut full = Matrix::zeros(n, y.cols());
                full.data_mut()[..y.data().len()].copy_from_slice(y.data());
                out = Some(full);
            }
            Some(full) => {
                let cols = full.cols();
                full.data_mut()[start * cols..end * cols].copy_from_slice(y.data());
            }
        }
        start = end;
    }
    out.ok_or(Error::EmptyInput("predict"))
}

/// Train `model` in place for exactly `cfg.epochs` epochs.
///
/// Mini-batch order is a seeded permutation per (seed, epoch); the
/// full-batch regime skips shuffling. A non-finite loss stops the run and is
/// recorded in the returned curves rather than raised.
pub fn train(
    model: &mut Sequential,
    train_data: &Dataset,
    test_data: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<TrainRecord> {
    let n = train_data.inputs.rows();
    if n == 0 {
        return Err(Error::EmptyInput("train"));
    }
    let schedule = LrSchedule {
        lr0: cfg.lr0,
        gamma: cfg.gamma,
    };
    let mut adam = AdamState::for_model(model);
    let names = model.param_names();
    let mut record = TrainRecord {
        train_loss_per_epoch: Vec::with_capacity(cfg.epochs),
        test_loss_per_epoch: Vec::new(),
        aborted_at_epoch: None,
    };

    'epochs: for epoch in 0..cfg.epochs {
        let lr = schedule.lr(epoch);
        let batches = batch_iter(n, cfg.batch_size, cfg.seed, epoch);
        let mut epoch_loss = 0.0;
        for batch in &batches {
            let x = train_data.inputs_select(batch)?;
            let t = train_data.targets_select(batch)?;
            let pred = model.forward_batch(&x)?;
            let (value, dpred) = cfg.loss.forward_backward(&pred, &t)?;
            if !value.is_finite() {
                record.aborted_at_epoch = Some(epoch);
                break 'epochs;
            }
            epoch_loss += value * batch.len() as f64;
            let grads = model.backward_batch(&dpred)?;
            let grad_slices: Vec<&[f64]> = grads.iter().flat_map(|g| g.slices()).collect();
            let mut param_slices = model.param_slices_mut();
            adam.step(&mut param_slices, &grad_slices, &names, lr)?;
        }
        record.train_loss_per_epoch.push(epoch_loss / n as f64);
        if cfg.eval_every_epoch {
            if let Some(test) = test_data {
                record
                    .test_loss_per_epoch
                    .push(evaluate_loss(model, test, cfg.loss)?);
            }
        }
    }
    if let (false, Some(test)) = (cfg.eval_every_epoch, test_data) {
        if record.aborted_at_epoch.is_none() {
            record
                .test_loss_per_epoch
                .push(evaluate_loss(model, test, cfg.loss)?);
        }
    }
    Ok(record)
}

/// Result of a learning-rate range test.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LrSweep {
    pub chosen_lr: f64,
    /// (lr, smoothed loss) per executed step; truncated on divergence.
    pub curve: Vec<(f64, f64)>,
}

/// Sweep the learning rate geometrically from `lr_min` to `lr_max` over
/// `steps` mini-batches on a fresh model, recording an EMA-smoothed loss
/// (decay 0.98, bias-corrected). The sweep stops once the smoothed loss
/// exceeds 4x its best value; the chosen rate is the more conservative of
/// the two usual read-offs — lr at the minimum smoothed loss divided by 10,
/// and lr at the steepest descent of the smoothed curve.
pub fn lr_range_test<F>(
    model_factory: F,
    train_data: &Dataset,
    loss: Loss,
    batch_size: BatchSize,
    lr_min: f64,
    lr_max: f64,
    steps: usize,
    seed: u64,
) -> Result<LrSweep>
where
    F: FnOnce() -> Result<Sequential>,
{
    if !(lr_min < lr_max) || lr_min <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "lr range test requires 0 < lr_min < lr_max, got {lr_min} .. {lr_max}"
        )));
    }
    if steps < 10 {
        return Err(Error::InvalidConfig(format!(
            "lr range test requires at least 10 steps, got {steps}"
        )));
    }
    let mut model = model_factory()?;
    let mut adam = AdamState::for_model(&model);
    let names = model.param_names();
    let n = train_data.inputs.rows();

    let ratio = lr_max / lr_min;
    let ema_decay = 0.98;
    let mut ema = 0.0;
    let mut best = f64::INFINITY;
    let mut best_lr = lr_min;
    let mut curve = Vec::with_capacity(steps);

    let mut step_idx = 0usize;
    let mut epoch = 0usize;
    'sweep: while step_idx < steps {
        let batches = batch_iter(n, batch_size, seed, epoch);
        epoch += 1;
        for batch in &batches {
            if step_idx >= steps {
                break 'sweep;
            }
            let frac = step_idx as f64 / (steps - 1) as f64;
            let lr = lr_min * ratio.powf(frac);

            let x = train_data.inputs_select(batch)?;
            let t = train_data.targets_select(batch)?;
            let pred = model.forward_batch(&x)?;
            let (value, dpred) = loss.forward_backward(&pred, &t)?;

            let smoothed = if value.is_finite() {
                ema = ema_decay * ema + (1.0 - ema_decay) * value;
                ema / (1.0 - ema_decay.powi(step_idx as i32 + 1))
            } else {
                f64::INFINITY
            };
            curve.push((lr, smoothed));

            if step_idx < 5 && !smoothed.is_finite() {
                return Err(Error::SweepDiverged {
                    first_loss: value,
                    smoothed,
                });
            }
            if smoothed < best {
                best = smoothed;
                best_lr = lr;
            }
            if smoothed > 4.0 * best || !smoothed.is_finite() {
                break 'sweep;
            }

            let grads = model.backward_batch(&dpred)?;
            let grad_slices: Vec<&[f64]> = grads.iter().flat_map(|g| g.slices()).collect();
            let mut param_slices = model.param_slices_mut();
            adam.step(&mut param_slices, &grad_slices, &names, lr)?;
            step_idx += 1;
        }
    }
    Ok(LrSweep {
        chosen_lr: (best_lr / 10.0).min(steepest_descent_lr(&curve).unwrap_or(f64::INFINITY)),
        curve,
    })
}

/// Lr at the steepest descent of the smoothed sweep curve, measured as the
/// most negative slope of loss against log-lr over a 5-step window. `None`
/// when the curve is too short to fit a window.
fn steepest_descent_lr(curve: &[(f64, f64)]) -> Option<f64> {
    const WINDOW: usize = 5;
    if curve.len() <= WINDOW {
        return None;
    }
    let mut best_slope = f64::INFINITY;
    let mut at = None;
    for i in 0..curve.len() - WINDOW {
        let (lr0, l0) = curve[i];
        let (lr1, l1) = curve[i + WINDOW];
        if !(l0.is_finite() && l1.is_finite()) {
            continue;
        }
        let slope = (l1 - l0) / (lr1.ln() - lr0.ln());
        if slope < best_slope {
            best_slope = slope;
            at = Some(curve[i + WINDOW / 2].0);
        }
    }
    at.filter(|_| best_slope < 0.0)
}

/// Mean and sample standard deviation (n-1 denominator) of a metric across
/// seeds. A single run is flagged so reports can carry the single-run note.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
    pub single_run: bool,
}

pub fn aggregate(values: &[f64]) -> Aggregate {
    let n = values.len();
    assert!(n >= 1, "aggregate requires at least one value");
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0)).sqrt()
    } else {
        0.0
    };
    Aggregate {
        mean,
        std,
        n,
        single_run: n == 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Targets;

    #[test]
    fn mse_perfect_fit() {
        let pred = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let (v, g) = Loss::Mse
            .forward_backward(&pred, &Targets::Values(pred.clone()))
            .unwrap();
        assert_eq!(v, 0.0);
        assert!(g.data().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn bce_logit_zero_target_one() {
        let pred = Matrix::from_rows(&[vec![0.0]]).unwrap();
        let t = Matrix::from_rows(&[vec![1.0]]).unwrap();
        let (v, g) = Loss::BceWithLogits
            .forward_backward(&pred, &Targets::Values(t))
            .unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((g.get(0, 0) + 0.5).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let pred = Matrix::zeros(3, 10);
        let t = Targets::Classes(vec![0, 5, 9]);
        let (v, _) = Loss::CrossEntropy.forward_backward(&pred, &t).unwrap();
        assert!((v - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_class_out_of_range() {
        let pred = Matrix::zeros(1, 3);
        let t = Targets::Classes(vec![3]);
        assert!(matches!(
            Loss::CrossEntropy.forward_backward(&pred, &t),
            Err(Error::ClassOutOfRange { .. })
        ));
    }

    #[test]
    fn adam_first_step_hand_value() {
        let mut adam = AdamState::new(&[2]);
        let mut p = vec![1.0, -2.0];
        let g = vec![1.0, 1.0];
        let names = vec!["p".to_string()];
        adam.step(&mut [&mut p], &[&g], &names, 0.1).unwrap();
        // Bias correction makes m_hat = v_hat = 1 on step 1.
        let expected = 0.1 / (1.0 + 1e-8);
        assert!((p[0] - (1.0 - expected)).abs() < 1e-15);
        assert!((p[1] - (-2.0 - expected)).abs() < 1e-15);
    }

    #[test]
    fn adam_zero_gradient_no_change() {
        let mut adam = AdamState::new(&[3]);
        let mut p = vec![1.0, 2.0, 3.0];
        let g = vec![0.0; 3];
        let names = vec!["p".to_string()];
        for _ in 0..10 {
            adam.step(&mut [&mut p], &[&g], &names, 0.5).unwrap();
        }
        assert_eq!(p, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn adam_matches_scalar_recurrence() {
        // Hand-rolled scalar reference over 100 randomized steps.
        let mut rng = crate::rng::SeededRng::new(31);
        let mut adam = AdamState::new(&[1]);
        let names = vec!["theta".to_string()];
        let (b1, b2, eps, lr) = (0.9, 0.999, 1e-8, 0.01);
        let mut theta = 0.3;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        let mut theta_ref = 0.3;
        for t in 1..=100u64 {
            let g = rng.standard_normal();
            let mut p = [theta];
            adam.step(&mut [&mut p], &[&[g]], &names, lr).unwrap();
            theta = p[0];

            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let m_hat = m / (1.0 - b1.powi(t as i32));
            let v_hat = v / (1.0 - b2.powi(t as i32));
            theta_ref -= lr * m_hat / (v_hat.sqrt() + eps);
            assert!((theta - theta_ref).abs() <= 1e-15, "step {t}");
        }
    }

    #[test]
    fn adam_nonfinite_gradient_names_param() {
        let mut adam = AdamState::new(&[1, 1]);
        let mut a = vec![0.0];
        let mut b = vec![0.0];
        let names = vec!["stage0.alpha".to_string(), "stage0.w".to_string()];
        let err = adam
            .step(
                &mut [&mut a, &mut b],
                &[&[1.0], &[f64::NAN]],
                &names,
                0.1,
            )
            .unwrap_err();
        assert!(err.to_string().contains("stage0.w"));
    }

    #[test]
    fn schedule_values() {
        let s = LrSchedule {
            lr0: 0.1,
            gamma: 0.95,
        };
        assert_eq!(s.lr(0), 0.1);
        assert!((s.lr(2) - 0.09025).abs() < 1e-15);
        let slow = LrSchedule {
            lr0: 1.0,
            gamma: 0.9999,
        };
        assert!((slow.lr(4000) - 0.9999f64.powi(4000)).abs() < 1e-12);
        assert!((slow.lr(4000) - 0.6703).abs() < 5e-4);
    }

    #[test]
    fn aggregate_cases() {
        let a = aggregate(&[1.0, 2.0, 3.0]);
        assert_eq!(a.mean, 2.0);
        assert!((a.std - 1.0).abs() < 1e-15);
        assert!(!a.single_run);

        let b = aggregate(&[5.0]);
        assert_eq!(b.std, 0.0);
        assert!(b.single_run);

        let c = aggregate(&[4.0, 4.0, 4.0]);
        assert_eq!(c.std, 0.0);
    }
}
