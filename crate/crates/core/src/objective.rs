//! Mean multiclass cross-entropy over softmax outputs.
//!
//! The loss is reported per sample (mean over the batch), so learning rates
//! do not depend on the batch size.

use crate::error::{Error, Result};
use crate::layers::softmax;
use crate::tensor::Tensor;

/// Floor applied to probabilities inside the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

const ROW_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    /// Mean cross-entropy in nats per sample.
    pub loss: f64,
    pub error_rate: f64,
    pub samples: usize,
}

impl LossReport {
    pub fn accuracy(&self) -> f64 {
        1.0 - self.error_rate
    }

    /// Combines reports over disjoint sample sets.
    pub fn merge(reports: &[LossReport]) -> LossReport {
        let samples: usize = reports.iter().map(|r| r.samples).sum();
        if samples == 0 {
            return LossReport { loss: 0.0, error_rate: 0.0, samples: 0 };
        }
        let mut loss = 0.0;
        let mut errors = 0.0;
        for r in reports {
            loss += r.loss * r.samples as f64;
            errors += r.error_rate * r.samples as f64;
        }
        LossReport {
            loss: loss / samples as f64,
            error_rate: errors / samples as f64,
            samples,
        }
    }
}

fn check_labels(k: usize, n: usize, labels: &[usize]) -> Result<()> {
    if labels.len() != n {
        return Err(Error::dim("labels", &[labels.len()], &[n]));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::invalid(format!("label {bad} out of range for {k} classes")));
    }
    Ok(())
}

pub fn cross_entropy(probs: &Tensor, labels: &[usize]) -> Result<LossReport> {
    if probs.rank() != 2 {
        return Err(Error::dim("cross_entropy", probs.shape(), &[0, 0]));
    }
    let (n, k) = (probs.shape()[0], probs.shape()[1]);
    check_labels(k, n, labels)?;
    let mut total = 0.0;
    let mut wrong = 0usize;
    for (r, &label) in labels.iter().enumerate() {
        let row = probs.row(r);
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(Error::invalid(format!("row {r} sums to {s}, not 1")));
        }
        total += -row[label].max(PROB_FLOOR).ln();
        if crate::tensor::argmax_by(k, |i| row[i]) != label {
            wrong += 1;
        }
    }
    Ok(if n == 0 {
        LossReport { loss: 0.0, error_rate: 0.0, samples: 0 }
    } else {
        LossReport {
            loss: total / n as f64,
            error_rate: wrong as f64 / n as f64,
            samples: n,
        }
    })
}

/// Gradient of the mean loss with respect to the logits:
/// `(softmax(logits) - onehot) / N`.
pub fn softmax_xent_backward(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let mut p = softmax(logits)?;
    let (n, k) = (p.shape()[0], p.shape()[1]);
    check_labels(k, n, labels)?;
    let inv_n = 1.0 / n.max(1) as f64;
    for (r, &label) in labels.iter().enumerate() {
        let row = p.row_mut(r);
        row[label] -= 1.0;
        for v in row.iter_mut() {
            *v *= inv_n;
        }
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_function, random_tensor};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn perfect_predictions() {
        let p = Tensor::matrix(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let r = cross_entropy(&p, &[0, 1]).unwrap();
        assert_eq!(r.loss, 0.0);
        assert_eq!(r.error_rate, 0.0);
    }

    #[test]
    fn uniform_is_ln_k() {
        let p = Tensor::filled(&[3, 10], 0.1);
        let r = cross_entropy(&p, &[0, 4, 9]).unwrap();
        assert!((r.loss - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn half_misclassified() {
        let p = Tensor::matrix(&[&[0.9, 0.1], &[0.8, 0.2]]);
        assert_eq!(cross_entropy(&p, &[0, 1]).unwrap().error_rate, 0.5);
    }

    #[test]
    fn argmax_ties_go_low() {
        let p = Tensor::matrix(&[&[0.5, 0.5]]);
        assert_eq!(cross_entropy(&p, &[0]).unwrap().error_rate, 0.0);
        assert_eq!(cross_entropy(&p, &[1]).unwrap().error_rate, 1.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = Tensor::matrix(&[&[0.5, 0.5]]);
        assert!(cross_entropy(&p, &[2]).is_err());
        assert!(cross_entropy(&Tensor::matrix(&[&[0.5, 0.6]]), &[0]).is_err());
        assert!(softmax_xent_backward(&p, &[3]).is_err());
    }

    #[test]
    fn backward_hand_case() {
        let g = softmax_xent_backward(&Tensor::matrix(&[&[0.0, 0.0]]), &[0]).unwrap();
        assert_eq!(g.data(), &[-0.5, 0.5]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let logits = random_tensor(&[4, 5], 3.0, &mut rng);
            let labels: Vec<usize> = (0..4).map(|_| rng.gen_range(0..5)).collect();
            let g = softmax_xent_backward(&logits, &labels).unwrap();
            let e = check_function(&logits, &g, |t| {
                cross_entropy(&softmax(t).unwrap(), &labels).unwrap().loss
            });
            assert!(e < 1e-6, "{e}");
        }
    }

    #[test]
    fn loss_decreases_as_target_probability_grows() {
        let mut prev = f64::INFINITY;
        for i in 1..10 {
            let t = i as f64 / 10.0;
            let rest = (1.0 - t) / 2.0;
            let p = Tensor::matrix(&[&[t, rest, rest]]);
            let l = cross_entropy(&p, &[0]).unwrap().loss;
            assert!(l < prev);
            prev = l;
        }
    }

    proptest! {
        #[test]
        fn gradient_rows_sum_to_zero(seed in any::<u64>(), n in 1usize..8, k in 2usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let logits = random_tensor(&[n, k], 5.0, &mut rng);
            let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
            let g = softmax_xent_backward(&logits, &labels).unwrap();
            for r in 0..n {
                prop_assert!(g.row(r).iter().sum::<f64>().abs() < 1e-15);
            }
        }

        #[test]
        fn mean_loss_independent_of_partition(seed in any::<u64>(), split in 1usize..9) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let probs = softmax(&random_tensor(&[10, 4], 2.0, &mut rng)).unwrap();
            let labels: Vec<usize> = (0..10).map(|_| rng.gen_range(0..4)).collect();
            let whole = cross_entropy(&probs, &labels).unwrap();
            let a = cross_entropy(&probs.slice(0, 0..split).unwrap(), &labels[..split]).unwrap();
            let b = cross_entropy(&probs.slice(0, split..10).unwrap(), &labels[split..]).unwrap();
            let merged = LossReport::merge(&[a, b]);
            prop_assert!((merged.loss - whole.loss).abs() < 1e-12);
            prop_assert!((merged.error_rate - whole.error_rate).abs() < 1e-12);
        }
    }
}
