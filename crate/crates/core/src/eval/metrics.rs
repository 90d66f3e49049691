use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stage::{SleepStage, NUM_STAGES};

/// Counts indexed `[truth][prediction]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_STAGES]; NUM_STAGES],
}

impl ConfusionMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_counts(counts: [[u64; NUM_STAGES]; NUM_STAGES]) -> Self {
        ConfusionMatrix { counts }
    }

    pub fn add(&mut self, truth: SleepStage, prediction: SleepStage) {
        self.counts[truth.index()][prediction.index()] += 1;
    }

    pub fn from_pairs(truth: &[SleepStage], prediction: &[SleepStage]) -> Result<Self> {
        if truth.len() != prediction.len() {
            return Err(Error::Shape(format!(
                "{} labels for {} predictions",
                truth.len(),
                prediction.len()
            )));
        }
        let mut m = Self::new();
        for (&t, &p) in truth.iter().zip(prediction) {
            m.add(t, p);
        }
        Ok(m)
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for i in 0..NUM_STAGES {
            for j in 0..NUM_STAGES {
                self.counts[i][j] += other.counts[i][j];
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_STAGES).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sums(&self) -> [u64; NUM_STAGES] {
        std::array::from_fn(|i| self.counts[i].iter().sum())
    }

    pub fn col_sums(&self) -> [u64; NUM_STAGES] {
        std::array::from_fn(|j| self.counts.iter().map(|r| r[j]).sum())
    }
}

/// Accuracy, F1 scores in percent; kappa on the unit scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub kappa: f64,
    pub per_class_f1: [f64; NUM_STAGES],
}

pub fn compute_metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    let n = cm.total();
    if n == 0 {
        return Err(Error::EmptyEvaluation);
    }
    let rows = cm.row_sums();
    let cols = cm.col_sums();
    let per_class_f1: [f64; NUM_STAGES] = std::array::from_fn(|c| {
        let tp = cm.counts[c][c];
        let denom = rows[c] + cols[c];
        if tp == 0 || denom == 0 {
            0.0
        } else {
            100.0 * (2 * tp) as f64 / denom as f64
        }
    });
    let chance: u128 = (0..NUM_STAGES)
        .map(|c| rows[c] as u128 * cols[c] as u128)
        .sum();
    let n2 = n as u128 * n as u128;
    let kappa = if chance == n2 {
        1.0
    } else {
        let num = n as i128 * cm.trace() as i128 - chance as i128;
        num as f64 / (n2 - chance) as f64
    };
    Ok(Metrics {
        accuracy: 100.0 * cm.trace() as f64 / n as f64,
        macro_f1: per_class_f1.iter().sum::<f64>() / NUM_STAGES as f64,
        kappa,
        per_class_f1,
    })
}

/// Mean and between-fold sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> MeanStd {
        let n = values.len();
        if n == 0 {
            return MeanStd {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        MeanStd { mean, std }
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.2} ± {:.2}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub accuracy: MeanStd,
    pub macro_f1: MeanStd,
    pub kappa: MeanStd,
    pub per_class_f1: [MeanStd; NUM_STAGES],
}

pub fn summarize(folds: &[Metrics]) -> Summary {
    let col = |f: &dyn Fn(&Metrics) -> f64| MeanStd::of(&folds.iter().map(f).collect::<Vec<_>>());
    Summary {
        accuracy: col(&|m| m.accuracy),
        macro_f1: col(&|m| m.macro_f1),
        kappa: col(&|m| m.kappa),
        per_class_f1: std::array::from_fn(|c| col(&|m| m.per_class_f1[c])),
    }
}

/// Most frequent stage; ties go to the lowest stage index.
pub fn majority_baseline(labels: &[SleepStage]) -> Result<SleepStage> {
    if labels.is_empty() {
        return Err(Error::EmptyDataset("no training labels".into()));
    }
    let mut counts = [0usize; NUM_STAGES];
    for s in labels {
        counts[s.index()] += 1;
    }
    let mut best = 0;
    for c in 1..NUM_STAGES {
        if counts[c] > counts[best] {
            best = c;
        }
    }
    Ok(SleepStage::ALL[best])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn embed(m: [[u64; 2]; 2]) -> ConfusionMatrix {
        let mut c = ConfusionMatrix::new();
        for i in 0..2 {
            for j in 0..2 {
                c.counts[i][j] = m[i][j];
            }
        }
        c
    }

    #[test]
    fn hand_computed_kappa() {
        let m = compute_metrics(&embed([[40, 10], [20, 30]])).unwrap();
        assert_eq!(m.accuracy, 70.0);
        assert_eq!(m.kappa, 0.40);
    }

    #[test]
    fn perfect_diagonal() {
        let mut c = ConfusionMatrix::new();
        for i in 0..5 {
            c.counts[i][i] = 10;
        }
        let m = compute_metrics(&c).unwrap();
        assert_eq!((m.accuracy, m.macro_f1, m.kappa), (100.0, 100.0, 1.0));
    }

    #[test]
    fn constant_predictor_has_zero_kappa() {
        let mut c = ConfusionMatrix::new();
        for (i, n) in [5u64, 3, 40, 7, 9].iter().enumerate() {
            c.counts[i][2] = *n;
        }
        assert_eq!(compute_metrics(&c).unwrap().kappa, 0.0);
    }

    #[test]
    fn empty_matrix_rejected() {
        assert!(matches!(
            compute_metrics(&ConfusionMatrix::new()),
            Err(Error::EmptyEvaluation)
        ));
    }

    #[test]
    fn summary_format() {
        let s = MeanStd::of(&[80.0, 90.0]);
        assert_eq!(s.to_string(), "85.00 ± 7.07");
    }

    #[test]
    fn majority_ties_and_single_class() {
        use SleepStage::*;
        assert_eq!(majority_baseline(&[N2, N2, W, Rem]).unwrap(), N2);
        assert_eq!(majority_baseline(&[Rem, W]).unwrap(), W);
        assert_eq!(majority_baseline(&[N3]).unwrap(), N3);
    }

    proptest! {
        #[test]
        fn macro_f1_invariant_under_relabeling(
            counts in proptest::collection::vec(0u64..50, 25),
            perm in Just([0usize, 1, 2, 3, 4]).prop_shuffle(),
        ) {
            let mut a = ConfusionMatrix::new();
            let mut b = ConfusionMatrix::new();
            for i in 0..5 {
                for j in 0..5 {
                    a.counts[i][j] = counts[i * 5 + j];
                    b.counts[perm[i]][perm[j]] = counts[i * 5 + j];
                }
            }
            prop_assume!(a.total() > 0);
            let (ma, mb) = (compute_metrics(&a).unwrap(), compute_metrics(&b).unwrap());
            prop_assert!((ma.macro_f1 - mb.macro_f1).abs() < 1e-9);
            prop_assert_eq!(ma.kappa, mb.kappa);
            for c in 0..5 {
                prop_assert!((ma.per_class_f1[c] - mb.per_class_f1[perm[c]]).abs() < 1e-9);
            }
        }

        #[test]
        fn kappa_one_iff_diagonal(counts in proptest::collection::vec(0u64..5, 25)) {
            let mut a = ConfusionMatrix::new();
            for i in 0..5 {
                for j in 0..5 {
                    a.counts[i][j] = counts[i * 5 + j];
                }
            }
            prop_assume!(a.total() > 0);
            let diagonal = a.trace() == a.total();
            prop_assert_eq!(compute_metrics(&a).unwrap().kappa == 1.0, diagonal);
        }
    }
}
