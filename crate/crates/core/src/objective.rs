//! Softmax cross-entropy and top-1 accuracy.

use crate::error::{Error, Result};
use crate::layers::softmax;
use crate::tensor::Vector;

/// Probabilities are clamped to at least this value before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Returns `(-ln softmax(logits)[label], softmax(logits) - onehot(label))`.
pub fn softmax_xent(logits: &[f64], label: usize) -> Result<(f64, Vector)> {
    if label >= logits.len() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: logits.len(),
        });
    }
    let mut grad = softmax(logits);
    let p = grad[label];
    // f64::max would swallow a NaN probability
    let loss = if p.is_nan() { f64::NAN } else { -p.max(PROB_FLOOR).ln() };
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// A model output paired with its true class.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub logits: Vector,
    pub label: usize,
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Percentage of predictions whose argmax equals the label.
pub fn top1_accuracy(preds: &[Prediction]) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let correct = preds.iter().filter(|p| argmax(&p.logits) == p.label).count();
    Ok(100.0 * correct as f64 / preds.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::Rng;

    fn pred(logits: &[f64], label: usize) -> Prediction {
        Prediction {
            logits: Vector::from_vec(logits.to_vec()),
            label,
        }
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn uniform_logits_give_ln_k() {
        let (loss, grad) = softmax_xent(&[0.3; 10], 4).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
        assert!((loss - 2.302585).abs() < 1e-6);
        assert!(grad.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn saturated_logits_do_not_overflow() {
        let (loss, grad) = softmax_xent(&[0.0, 1000.0], 1).unwrap();
        assert!(loss.abs() < 1e-12);
        assert!(grad.is_finite());
        let (loss, _) = softmax_xent(&[0.0, 1000.0], 0).unwrap();
        assert!((loss - -PROB_FLOOR.ln()).abs() < 1e-9);
    }

    #[test]
    fn label_out_of_range() {
        assert!(matches!(
            softmax_xent(&[0.0, 1.0], 2),
            Err(Error::LabelOutOfRange { label: 2, classes: 2 })
        ));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = Rng::new(31);
        let h = 1e-6;
        for trial in 0..20 {
            let logits: Vec<f64> = (0..6).map(|_| rng.uniform(-3.0, 3.0)).collect();
            let label = trial % 6;
            let (_, grad) = softmax_xent(&logits, label).unwrap();
            for k in 0..logits.len() {
                let mut up = logits.clone();
                let mut down = logits.clone();
                up[k] += h;
                down[k] -= h;
                let fd = (softmax_xent(&up, label).unwrap().0 - softmax_xent(&down, label).unwrap().0) / (2.0 * h);
                let rel = (fd - grad[k]).abs() / fd.abs().max(grad[k].abs()).max(1e-8);
                assert!(rel < 1e-6, "trial {trial} k {k}: fd {fd} vs {}", grad[k]);
            }
        }
    }

    #[test]
    fn accuracy_cases() {
        assert_eq!(top1_accuracy(&[pred(&[0.0, 1.0], 1), pred(&[2.0, 1.0], 0)]).unwrap(), 100.0);
        assert_eq!(top1_accuracy(&[pred(&[1.0, 1.0], 0)]).unwrap(), 100.0);
        assert_eq!(top1_accuracy(&[pred(&[1.0, 1.0], 1)]).unwrap(), 0.0);
        let three_of_four = [
            pred(&[0.0, 1.0], 1),
            pred(&[1.0, 0.0], 0),
            pred(&[0.0, 1.0, 3.0], 2),
            pred(&[5.0, 1.0], 1),
        ];
        assert_eq!(top1_accuracy(&three_of_four).unwrap(), 75.0);
        assert!(top1_accuracy(&[]).is_err());
    }
}
