//! Evaluation metrics: classification (accuracy, macro-F1), regression
//! (MSE / MAE / R^2), and the bit-efficiency score for comparing models of
//! very different parameter counts.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use serde::{Deserialize, Serialize};

/// Class predictions from multiclass logits: row-wise argmax.
pub fn argmax_classes(logits: &Matrix) -> Vec<usize> {
    (0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Class predictions from single-logit binary output: positive logit is
/// class 1 (equivalent to sigmoid(z) > 0.5).
pub fn binary_classes(logits: &Matrix) -> Vec<usize> {
    logits.data().iter().map(|&z| (z > 0.0) as usize).collect()
}

/// Fraction of matching predictions.
pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::EmptyInput("accuracy"));
    }
    if pred.len() != truth.len() {
        return Err(Error::DimMismatch {
            op: "accuracy",
            lhs: pred.len().to_string(),
            rhs: truth.len().to_string(),
        });
    }
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Macro-averaged F1 over `n_classes` classes. A class with no true or
/// predicted instances contributes F1 = 0 and still counts in the average.
pub fn macro_f1(pred: &[usize], truth: &[usize], n_classes: usize) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::EmptyInput("macro_f1"));
    }
    if pred.len() != truth.len() {
        return Err(Error::DimMismatch {
            op: "macro_f1",
            lhs: pred.len().to_string(),
            rhs: truth.len().to_string(),
        });
    }
    for &c in pred.iter().chain(truth) {
        if c >= n_classes {
            return Err(Error::ClassOutOfRange {
                index: c,
                n_classes,
            });
        }
    }
    let mut tp = vec![0usize; n_classes];
    let mut fp = vec![0usize; n_classes];
    let mut fnn = vec![0usize; n_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        if p == t {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fnn[t] += 1;
        }
    }
    let mut sum = 0.0;
    for c in 0..n_classes {
        let denom = 2 * tp[c] + fp[c] + fnn[c];
        if denom > 0 {
            sum += 2.0 * tp[c] as f64 / denom as f64;
        }
    }
    Ok(sum / n_classes as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub mse: f64,
    pub mae: f64,
    pub r2: f64,
}

/// MSE, MAE, and R^2 between prediction and target matrices (mean over all
/// elements). Fails if the targets have zero variance, where R^2 is
/// undefined.
pub fn regression_metrics(pred: &Matrix, truth: &Matrix) -> Result<RegressionMetrics> {
    if pred.shape() != truth.shape() {
        return Err(Error::DimMismatch {
            op: "regression_metrics",
            lhs: format!("{:?}", pred.shape()),
            rhs: format!("{:?}", truth.shape()),
        });
    }
    if pred.data().is_empty() {
        return Err(Error::EmptyInput("regression_metrics"));
    }
    let n = truth.data().len() as f64;
    let mean = truth.data().iter().sum::<f64>() / n;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    let mut abs_sum = 0.0;
    for (&p, &t) in pred.data().iter().zip(truth.data()) {
        let r = p - t;
        ss_res += r * r;
        abs_sum += r.abs();
        ss_tot += (t - mean) * (t - mean);
    }
    if ss_tot == 0.0 {
        return Err(Error::ZeroTargetVariance);
    }
    Ok(RegressionMetrics {
        mse: ss_res / n,
        mae: abs_sum / n,
        r2: 1.0 - ss_res / ss_tot,
    })
}

/// Mean squared error alone (reconstruction tasks).
pub fn mse(pred: &Matrix, truth: &Matrix) -> Result<f64> {
    if pred.shape() != truth.shape() {
        return Err(Error::DimMismatch {
            op: "mse",
            lhs: format!("{:?}", pred.shape()),
            rhs: format!("{:?}", truth.shape()),
        });
    }
    if pred.data().is_empty() {
        return Err(Error::EmptyInput("mse"));
    }
    let ss: f64 = pred
        .data()
        .iter()
        .zip(truth.data())
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(ss / pred.data().len() as f64)
}

/// Bit-efficiency score: (accuracy - chance) * log2(n_samples * d_in)
/// / log2(n_params). Rewards accuracy gained per bit of parameter storage.
pub fn bit_efficiency_score(
    accuracy: f64,
    chance: f64,
    n_samples: usize,
    d_in: usize,
    n_params: usize,
) -> Result<f64> {
    if n_params <= 1 {
        return Err(Error::InvalidConfig(format!(
            "bit efficiency score needs n_params > 1, got {n_params}"
        )));
    }
    if n_samples == 0 || d_in == 0 {
        return Err(Error::EmptyInput("bit_efficiency_score"));
    }
    let info = ((n_samples * d_in) as f64).log2();
    Ok((accuracy - chance) * info / (n_params as f64).log2())
}

/// Task-appropriate metric bundle attached to a single evaluated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MetricReport {
    Classification {
        accuracy: f64,
        macro_f1: f64,
        #[serde(skip_serializing_if = "Option::is_none")]
        bit_efficiency: Option<f64>,
    },
    Regression {
        mse: f64,
        mae: f64,
        r2: f64,
    },
    Reconstruction {
        mse: f64,
    },
}

impl MetricReport {
    /// The headline scalar for cross-run aggregation (higher is better for
    /// classification/regression; reconstruction returns negative MSE).
    pub fn primary(&self) -> f64 {
        match self {
            MetricReport::Classification { accuracy, .. } => *accuracy,
            MetricReport::Regression { r2, .. } => *r2,
            MetricReport::Reconstruction { mse } => -mse,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    #[test]
    fn accuracy_basics() {
        assert_eq!(accuracy(&[1, 0, 1, 1], &[1, 0, 0, 1]).unwrap(), 0.75);
        assert!(matches!(
            accuracy(&[], &[]),
            Err(Error::EmptyInput("accuracy"))
        ));
        assert!(accuracy(&[1], &[1, 2]).is_err());
    }

    #[test]
    fn argmax_and_binary_predictions() {
        let logits = Matrix::from_vec(2, 3, vec![0.1, 2.0, -1.0, 5.0, 4.9, 4.99]).unwrap();
        assert_eq!(argmax_classes(&logits), vec![1, 0]);
        let z = Matrix::from_vec(3, 1, vec![-0.2, 0.0, 3.0]).unwrap();
        assert_eq!(binary_classes(&z), vec![0, 0, 1]);
    }

    #[test]
    fn macro_f1_hand_example() {
        // Two classes: class 0 has tp=1 fp=1 fn=0 -> F1 = 2/3;
        // class 1 has tp=1 fp=0 fn=1 -> F1 = 2/3. Macro = 2/3.
        let pred = [0, 0, 1];
        let truth = [0, 1, 1];
        let f1 = macro_f1(&pred, &truth, 2).unwrap();
        assert!((f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn macro_f1_counts_absent_class_as_zero() {
        // Class 2 never appears: its F1 is 0 but it still divides the mean.
        let pred = [0, 1];
        let truth = [0, 1];
        let f1 = macro_f1(&pred, &truth, 3).unwrap();
        assert!((f1 - 2.0 / 3.0).abs() < 1e-15);
        assert!(matches!(
            macro_f1(&pred, &[0, 5], 3),
            Err(Error::ClassOutOfRange { index: 5, .. })
        ));
    }

    /// Independent oracle: macro-F1 from scratch via per-class counting
    /// loops, compared on random label vectors.
    #[test]
    fn macro_f1_matches_brute_force_oracle() {
        fn oracle(pred: &[usize], truth: &[usize], k: usize) -> f64 {
            let mut total = 0.0;
            for c in 0..k {
                let tp = pred
                    .iter()
                    .zip(truth)
                    .filter(|(p, t)| **p == c && **t == c)
                    .count() as f64;
                let pred_c = pred.iter().filter(|p| **p == c).count() as f64;
                let truth_c = truth.iter().filter(|t| **t == c).count() as f64;
                let precision = if pred_c > 0.0 { tp / pred_c } else { 0.0 };
                let recall = if truth_c > 0.0 { tp / truth_c } else { 0.0 };
                if precision + recall > 0.0 {
                    total += 2.0 * precision * recall / (precision + recall);
                }
            }
            total / k as f64
        }
        let mut rng = SeededRng::new(42);
        for trial in 0..50 {
            let k = 2 + (trial % 5);
            let n = 30;
            let pred: Vec<usize> = (0..n).map(|_| rng.next_below(k)).collect();
            let truth: Vec<usize> = (0..n).map(|_| rng.next_below(k)).collect();
            let got = macro_f1(&pred, &truth, k).unwrap();
            let want = oracle(&pred, &truth, k);
            assert!((got - want).abs() < 1e-12, "trial {trial}: {got} vs {want}");
        }
    }

    #[test]
    fn regression_metrics_hand_values() {
        let truth = Matrix::from_vec(4, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let pred = Matrix::from_vec(4, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let m = regression_metrics(&pred, &truth).unwrap();
        assert_eq!((m.mse, m.mae, m.r2), (0.0, 0.0, 1.0));

        // Constant prediction at the target mean: R^2 = 0.
        let pred = Matrix::from_vec(4, 1, vec![2.5; 4]).unwrap();
        let m = regression_metrics(&pred, &truth).unwrap();
        assert!((m.r2).abs() < 1e-15);
        assert!((m.mse - 1.25).abs() < 1e-15);
        assert!((m.mae - 1.0).abs() < 1e-15);
    }

    #[test]
    fn regression_rejects_zero_variance_targets() {
        let truth = Matrix::from_vec(3, 1, vec![2.0; 3]).unwrap();
        let pred = Matrix::from_vec(3, 1, vec![1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(
            regression_metrics(&pred, &truth),
            Err(Error::ZeroTargetVariance)
        ));
    }

    #[test]
    fn mse_mean_over_all_elements() {
        let a = Matrix::from_vec(2, 2, vec![0.0, 0.0, 0.0, 0.0]).unwrap();
        let b = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(mse(&a, &b).unwrap(), 0.5);
    }

    /// Published score table reproduced from the reported accuracies:
    /// 60k samples of dim 784, chance 0.1, three classifier sizes each on
    /// two datasets.
    #[test]
    fn bit_efficiency_published_values() {
        let cases = [
            (0.9779, 535_818, 1.18), // large dense
            (0.5578, 6_990, 0.91),   // low-rank
            (0.9166, 3_108, 1.79),   // modulated projection
            (0.8933, 535_818, 1.06),
            (0.8259, 6_990, 1.45),
            (0.8378, 3_108, 1.62),
        ];
        for (acc, params, want) in cases {
            let got = bit_efficiency_score(acc, 0.1, 60_000, 784, params).unwrap();
            assert!(
                (got - want).abs() < 0.005,
                "acc {acc}, params {params}: got {got}, want {want}"
            );
        }
    }

    #[test]
    fn bit_efficiency_rejects_degenerate_inputs() {
        assert!(bit_efficiency_score(0.9, 0.1, 100, 10, 1).is_err());
        assert!(bit_efficiency_score(0.9, 0.1, 0, 10, 50).is_err());
    }

    #[test]
    fn metric_report_serializes_with_kind_tag() {
        let r = MetricReport::Regression {
            mse: 0.1,
            mae: 0.2,
            r2: 0.9,
        };
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"kind\":\"regression\""));
        let back: MetricReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }
}
