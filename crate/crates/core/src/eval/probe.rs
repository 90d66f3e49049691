//! Multinomial logistic-regression probe on fixed features.

use crate::error::{Error, Result};

/// Trains on `(train_x, train_y)` by full-batch gradient descent on
/// standardised features and returns test accuracy in percent.
pub fn linear_probe_accuracy(
    train_x: &[Vec<f64>],
    train_y: &[usize],
    test_x: &[Vec<f64>],
    test_y: &[usize],
    classes: usize,
) -> Result<f64> {
    if train_x.is_empty() || test_x.is_empty() {
        return Err(Error::EmptyDataset(
            "probe needs training and test rows".into(),
        ));
    }
    if train_x.len() != train_y.len() || test_x.len() != test_y.len() {
        return Err(Error::Shape(
            "probe features and labels differ in length".into(),
        ));
    }
    let d = train_x[0].len();
    let n = train_x.len() as f64;
    let mut mean = vec![0.0; d];
    for x in train_x {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v / n;
        }
    }
    let mut std = vec![0.0; d];
    for x in train_x {
        for k in 0..d {
            std[k] += (x[k] - mean[k]).powi(2) / n;
        }
    }
    let std: Vec<f64> = std
        .iter()
        .map(|v| if *v > 1e-12 { v.sqrt() } else { 1.0 })
        .collect();
    let norm = |x: &[f64]| -> Vec<f64> { (0..d).map(|k| (x[k] - mean[k]) / std[k]).collect() };
    let tx: Vec<Vec<f64>> = train_x.iter().map(|x| norm(x)).collect();

    let mut w = vec![vec![0.0; d]; classes];
    let mut b = vec![0.0; classes];
    let (lr, l2, iterations) = (0.5, 1e-4, 300);
    let softmax = |w: &[Vec<f64>], b: &[f64], x: &[f64]| -> Vec<f64> {
        let logits: Vec<f64> = (0..classes)
            .map(|c| b[c] + w[c].iter().zip(x).map(|(a, v)| a * v).sum::<f64>())
            .collect();
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    };
    for _ in 0..iterations {
        let mut gw = vec![vec![0.0; d]; classes];
        let mut gb = vec![0.0; classes];
        for (x, &y) in tx.iter().zip(train_y) {
            let p = softmax(&w, &b, x);
            for c in 0..classes {
                let g = p[c] - if c == y { 1.0 } else { 0.0 };
                gb[c] += g / n;
                for k in 0..d {
                    gw[c][k] += g * x[k] / n;
                }
            }
        }
        for c in 0..classes {
            b[c] -= lr * gb[c];
            for k in 0..d {
                w[c][k] -= lr * (gw[c][k] + l2 * w[c][k]);
            }
        }
    }
    let correct = test_x
        .iter()
        .zip(test_y)
        .filter(|(x, &y)| {
            let p = softmax(&w, &b, &norm(x));
            let mut best = 0;
            for c in 1..classes {
                if p[c] > p[best] {
                    best = c;
                }
            }
            best == y
        })
        .count();
    Ok(100.0 * correct as f64 / test_x.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_classes_are_learned() {
        let xs: Vec<Vec<f64>> = (0..60)
            .map(|i| vec![(i % 3) as f64 * 2.0 + (i as f64 * 0.01), 1.0])
            .collect();
        let ys: Vec<usize> = (0..60).map(|i| i % 3).collect();
        assert_eq!(linear_probe_accuracy(&xs, &ys, &xs, &ys, 3).unwrap(), 100.0);
    }

    #[test]
    fn uninformative_features_near_chance() {
        let xs: Vec<Vec<f64>> = (0..40).map(|_| vec![1.0]).collect();
        let ys: Vec<usize> = (0..40).map(|i| i % 2).collect();
        assert_eq!(linear_probe_accuracy(&xs, &ys, &xs, &ys, 2).unwrap(), 50.0);
    }
}
