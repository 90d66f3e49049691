use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::metrics::Metrics;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Wasserstein-1 distance between two empirical distributions on the line,
/// computed exactly as the integral of `|F_a - F_b|`.
pub fn wasserstein1(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyDataset(
            "distance needs two nonempty sample sets".into(),
        ));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::numerical("distance samples"));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut prev = a[0].min(b[0]);
    let mut dist = 0.0;
    while i < a.len() || j < b.len() {
        let x = match (a.get(i), b.get(j)) {
            (Some(&u), Some(&v)) => u.min(v),
            (Some(&u), None) => u,
            (None, Some(&v)) => v,
            (None, None) => unreachable!(),
        };
        dist += (i as f64 / na - j as f64 / nb).abs() * (x - prev);
        while i < a.len() && a[i] == x {
            i += 1;
        }
        while j < b.len() && b[j] == x {
            j += 1;
        }
        prev = x;
    }
    Ok(dist)
}

/// At most `max` samples drawn without replacement, in original order.
pub fn subsample(samples: &[f64], max: usize, rng: &mut Rng) -> Vec<f64> {
    if samples.len() <= max {
        return samples.to_vec();
    }
    let mut idx = index::sample(rng, samples.len(), max).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| samples[i]).collect()
}

/// Mean distance from a test subject's samples to each training subject's.
pub fn emd_subject_distance(test: &[f64], train_subjects: &[Vec<f64>]) -> Result<f64> {
    if train_subjects.is_empty() {
        return Err(Error::EmptyDataset("no training subjects".into()));
    }
    let mut total = 0.0;
    for t in train_subjects {
        total += wasserstein1(test, t)?;
    }
    Ok(total / train_subjects.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstCaseEntry {
    pub subject_id: String,
    pub emd: f64,
    pub metrics: Option<Metrics>,
}

/// Subjects by descending distance; equal distances by ascending id.
pub fn worst_case_report(mut entries: Vec<WorstCaseEntry>) -> Vec<WorstCaseEntry> {
    entries.sort_by(|a, b| {
        b.emd
            .total_cmp(&a.emd)
            .then_with(|| a.subject_id.cmp(&b.subject_id))
    });
    entries
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn point_masses() {
        assert_eq!(wasserstein1(&[2.0], &[-1.5]).unwrap(), 3.5);
        assert_eq!(
            wasserstein1(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]).unwrap(),
            0.0
        );
        assert!(wasserstein1(&[], &[1.0]).is_err());
    }

    #[test]
    fn unequal_sizes() {
        // Half the mass at 0 moves to 1 against a single point mass at 1: 0.5.
        assert!((wasserstein1(&[0.0, 1.0], &[1.0]).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ranking_order() {
        let e = |id: &str, emd: f64| WorstCaseEntry {
            subject_id: id.into(),
            emd,
            metrics: None,
        };
        let r = worst_case_report(vec![e("b", 1.0), e("a", 1.0), e("c", 3.0)]);
        let ids: Vec<_> = r.iter().map(|x| x.subject_id.as_str()).collect();
        assert_eq!(ids, ["c", "a", "b"]);
    }

    #[test]
    fn subsample_is_bounded_and_seeded() {
        let v: Vec<f64> = (0..1000).map(f64::from).collect();
        let a = subsample(&v, 100, &mut crate::rng::stream(1, "emd", 0));
        let b = subsample(&v, 100, &mut crate::rng::stream(1, "emd", 0));
        assert_eq!(a.len(), 100);
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn symmetric_and_nonnegative(
            a in proptest::collection::vec(-5.0f64..5.0, 1..30),
            b in proptest::collection::vec(-5.0f64..5.0, 1..30),
        ) {
            let ab = wasserstein1(&a, &b).unwrap();
            let ba = wasserstein1(&b, &a).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert_eq!(wasserstein1(&a, &a).unwrap(), 0.0);
        }
    }
}
