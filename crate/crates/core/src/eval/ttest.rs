use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    /// Two-sided.
    pub p: f64,
    pub df: usize,
    /// The differences have zero variance; `t` and `p` are conventional.
    pub degenerate: bool,
}

/// Paired two-sided t-test on `a[i] - b[i]`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "paired samples of lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::Shape(
            "paired t-test needs at least two pairs".into(),
        ));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let df = n - 1;
    if var == 0.0 {
        let (t, p) = if mean == 0.0 {
            (0.0, 1.0)
        } else {
            (mean.signum() * f64::INFINITY, 0.0)
        };
        return Ok(TTest {
            t,
            p,
            df,
            degenerate: true,
        });
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df as f64).map_err(|e| Error::Config(e.to_string()))?;
    let p = (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0);
    Ok(TTest {
        t,
        p,
        df,
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_is_degenerate_zero() {
        let r = paired_t_test(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(r.t, 0.0);
        assert!(r.degenerate);
    }

    #[test]
    fn consistent_gain_is_significant() {
        let a = [1.01, 0.99, 1.02, 0.98];
        let r = paired_t_test(&a, &[0.0; 4]).unwrap();
        assert!(r.p < 0.05 && !r.degenerate);
        let s = paired_t_test(&[0.0; 4], &a).unwrap();
        assert_eq!(s.t, -r.t);
        assert_eq!(s.p, r.p);
    }

    #[test]
    fn closed_form_two_pairs() {
        // d = [1, 3]: mean 2, s = sqrt(2), t = 2 / (sqrt(2)/sqrt(2)) = 2; df = 1 Cauchy:
        // p = 2 * (1/2 - atan(2)/pi).
        let r = paired_t_test(&[1.0, 3.0], &[0.0, 0.0]).unwrap();
        assert!((r.t - 2.0).abs() < 1e-12);
        let p = 2.0 * (0.5 - 2f64.atan() / std::f64::consts::PI);
        assert!((r.p - p).abs() < 1e-9);
    }

    #[test]
    fn length_mismatch_rejected() {
        assert!(paired_t_test(&[1.0], &[1.0]).is_err());
        assert!(paired_t_test(&[1.0, 2.0], &[1.0]).is_err());
    }
}
