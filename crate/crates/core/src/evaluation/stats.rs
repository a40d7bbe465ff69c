use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::{EvalError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t: f64,
    /// Two-sided p-value.
    pub p: f64,
}

/// Paired t-test on `a - b`. With zero-variance differences: `t = 0, p = 1`
/// when the mean difference is 0, otherwise `t = ±inf, p = 0`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTestResult> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch(a.len(), b.len()));
    }
    let n = a.len();
    if n < 2 {
        return Err(EvalError::TooFewSamples { what: "paired scores", n, min: 2 });
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        return Ok(if mean == 0.0 {
            TTestResult { t: 0.0, p: 1.0 }
        } else {
            TTestResult {
                t: f64::INFINITY.copysign(mean),
                p: 0.0,
            }
        });
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("degrees of freedom are positive");
    let p = (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0);
    Ok(TTestResult { t, p })
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Some((mean, 0.0));
    }
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some((mean, var.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_conventions() {
        assert_eq!(paired_t_test(&[0.8, 0.9, 0.7], &[0.8, 0.9, 0.7]).unwrap(), TTestResult { t: 0.0, p: 1.0 });
        let c = paired_t_test(&[1.5, 2.5], &[1.0, 2.0]).unwrap();
        assert_eq!(c.p, 0.0);
        assert!(c.t.is_infinite() && c.t > 0.0);
        let sym = paired_t_test(&[1.0, -1.0, 1.0, -1.0], &[0.0; 4]).unwrap();
        assert_eq!(sym, TTestResult { t: 0.0, p: 1.0 });
        assert!(paired_t_test(&[1.0], &[0.0]).is_err());
        assert!(paired_t_test(&[1.0, 2.0], &[0.0]).is_err());
    }

    #[test]
    fn matches_hand_computed_statistic() {
        // d = [1, 2, 3]: mean 2, sd 1, t = 2 / (1 / sqrt 3) = 2 sqrt 3.
        let r = paired_t_test(&[2.0, 4.0, 6.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!((r.t - 2.0 * 3f64.sqrt()).abs() < 1e-12);
        // Two degrees of freedom: P(|T| > t) = 1 - t / sqrt(2 + t^2).
        let expected = 1.0 - r.t / (2.0 + r.t * r.t).sqrt();
        assert!((r.p - expected).abs() < 1e-9, "{} vs {expected}", r.p);
    }

    #[test]
    fn mean_std_of_identical_values_is_zero_spread() {
        assert_eq!(mean_std(&[0.5, 0.5, 0.5]), Some((0.5, 0.0)));
        assert_eq!(mean_std(&[]), None);
    }
}
