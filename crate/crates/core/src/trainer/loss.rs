//! Episode losses and their gradients with respect to the model output.

use ndarray::{Array1, Array2};

use crate::error::{bail, Result};
use crate::net::{ForwardOutput, Real};
use crate::TaskKind;

fn check_label(y: f64, num_classes: usize) -> Result<usize> {
    if y < 0.0 || y.fract() != 0.0 || y >= num_classes as f64 {
        bail!(Data, "label {y} outside [0, {num_classes})");
    }
    Ok(y as usize)
}

/// Mean label-smoothed cross-entropy over query rows. Only the first
/// `num_classes` logits take part; the smoothing mass `eps` is spread over
/// them. Returns the loss and `dL/dlogits` (zero on masked classes).
pub fn smoothed_cross_entropy<T: Real>(
    logits: &Array2<T>,
    labels: &[f64],
    num_classes: usize,
    eps: f64,
) -> Result<(f64, Array2<T>)> {
    let (n, width) = logits.dim();
    if labels.len() != n {
        bail!(Shape, "{} labels for {n} logit rows", labels.len());
    }
    if num_classes == 0 || num_classes > width {
        bail!(Shape, "{num_classes} classes for a {width}-way head");
    }
    if n == 0 {
        bail!(Shape, "no query rows");
    }
    let off = eps / num_classes as f64;
    let mut grad = Array2::zeros((n, width));
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let y = check_label(y, num_classes)?;
        let row: Vec<f64> = (0..num_classes).map(|c| logits[[i, c]].as_f64()).collect();
        let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
        for (c, &z) in row.iter().enumerate() {
            let q = off + if c == y { 1.0 - eps } else { 0.0 };
            let logp = z - lse;
            total -= q * logp;
            grad[[i, c]] = T::lit((logp.exp() - q) / n as f64);
        }
    }
    Ok((total / n as f64, grad))
}

/// Mean squared error and its gradient.
pub fn mse<T: Real>(pred: &Array1<T>, targets: &[f64]) -> Result<(f64, Array1<T>)> {
    let n = pred.len();
    if targets.len() != n || n == 0 {
        bail!(Shape, "{} predictions for {} targets", n, targets.len());
    }
    let mut grad = Array1::zeros(n);
    let mut total = 0.0;
    for i in 0..n {
        let d = pred[i].as_f64() - targets[i];
        total += d * d;
        grad[i] = T::lit(2.0 * d / n as f64);
    }
    Ok((total / n as f64, grad))
}

/// Training loss of one episode and the gradient seed for backpropagation.
pub fn episode_loss<T: Real>(
    output: &ForwardOutput<T>,
    y_qy: &[f64],
    task: TaskKind,
    num_classes: usize,
    smoothing: f64,
) -> Result<(f64, ForwardOutput<T>)> {
    match (output, task) {
        (ForwardOutput::Classification(l), TaskKind::Classification) => {
            let (loss, g) = smoothed_cross_entropy(l, y_qy, num_classes, smoothing)?;
            Ok((loss, ForwardOutput::Classification(g)))
        }
        (ForwardOutput::Regression(p), TaskKind::Regression) => {
            let (loss, g) = mse(p, y_qy)?;
            Ok((loss, ForwardOutput::Regression(g)))
        }
        _ => bail!(Precondition, "output kind {} does not match task {task}", output.task()),
    }
}

/// Class probabilities over the first `num_classes` logits of each row.
pub fn masked_softmax<T: Real>(logits: &Array2<T>, num_classes: usize) -> Array2<f64> {
    let n = logits.nrows();
    let mut p = Array2::zeros((n, num_classes));
    for i in 0..n {
        let mx = (0..num_classes).map(|c| logits[[i, c]].as_f64()).fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for c in 0..num_classes {
            let e = (logits[[i, c]].as_f64() - mx).exp();
            p[[i, c]] = e;
            z += e;
        }
        p.row_mut(i).mapv_inplace(|v| v / z);
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn uniform_logits_give_log_c() {
        let l = Array2::<f64>::zeros((3, 10));
        for eps in [0.0, 0.1] {
            let (loss, _) = smoothed_cross_entropy(&l, &[0.0, 4.0, 9.0], 10, eps).unwrap();
            assert!((loss - 10f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn confident_correct_logits_hit_the_smoothing_floor() {
        // direct evaluation: q = (0.95, 0.05), p = softmax(20, 0)
        let l = array![[20.0f64, 0.0, 7.0]];
        let (loss, _) = smoothed_cross_entropy(&l, &[0.0], 2, 0.1).unwrap();
        let lse = (20f64.exp() + 1.0).ln();
        let expected = -(0.95 * (20.0 - lse) + 0.05 * (0.0 - lse));
        assert!((loss - expected).abs() < 1e-12);
        assert!(loss > 0.9);
    }

    #[test]
    fn masked_classes_get_no_gradient_and_labels_are_checked() {
        let l = array![[1.0f64, 2.0, 3.0]];
        let (_, g) = smoothed_cross_entropy(&l, &[1.0], 2, 0.1).unwrap();
        assert_eq!(g[[0, 2]], 0.0);
        assert!((g.sum()).abs() < 1e-12);
        assert!(smoothed_cross_entropy(&l, &[2.0], 2, 0.1).is_err());
        assert!(smoothed_cross_entropy(&l, &[0.5], 2, 0.1).is_err());
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let l = array![[0.3f64, -1.2, 0.8, 5.0], [2.0, 0.1, -0.4, 1.0]];
        let labels = [2.0, 0.0];
        let (_, g) = smoothed_cross_entropy(&l, &labels, 3, 0.1).unwrap();
        for i in 0..2 {
            for c in 0..3 {
                let mut up = l.clone();
                up[[i, c]] += 1e-6;
                let mut dn = l.clone();
                dn[[i, c]] -= 1e-6;
                let fd = (smoothed_cross_entropy(&up, &labels, 3, 0.1).unwrap().0
                    - smoothed_cross_entropy(&dn, &labels, 3, 0.1).unwrap().0)
                    / 2e-6;
                assert!((fd - g[[i, c]]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn mse_cases() {
        let (l, g) = mse(&array![1.0f64, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
        let (l, g) = mse(&array![1.0f64, 0.0], &[0.0, 0.0]).unwrap();
        assert_eq!(l, 0.5);
        assert_eq!(g, array![1.0, 0.0]);
    }

    #[test]
    fn softmax_sums_to_one_over_active_classes() {
        let p = masked_softmax(&array![[1.0f32, 2.0, 100.0], [0.0, 0.0, 0.0]], 2);
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }
}
