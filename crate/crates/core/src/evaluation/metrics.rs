use serde::{Deserialize, Serialize};

use super::{EvalError, Result};

fn check_pair(y_true: &[usize], y_pred: &[usize]) -> Result<()> {
    if y_true.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    if y_true.len() != y_pred.len() {
        return Err(EvalError::LengthMismatch(y_true.len(), y_pred.len()));
    }
    Ok(())
}

/// Fraction of exact matches.
pub fn accuracy(y_true: &[usize], y_pred: &[usize]) -> Result<f64> {
    check_pair(y_true, y_pred)?;
    let hits = y_true.iter().zip(y_pred).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / y_true.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Number of true samples of the class.
    pub support: usize,
}

/// Per-class precision, recall and F1. Undefined ratios are 0, so a class
/// absent from both label lists scores 0 everywhere.
pub fn per_class_scores(y_true: &[usize], y_pred: &[usize], n_classes: usize) -> Result<Vec<ClassScores>> {
    check_pair(y_true, y_pred)?;
    if n_classes < 2 {
        return Err(EvalError::TooFewClasses(n_classes));
    }
    if let Some(&label) = y_true.iter().chain(y_pred).find(|&&l| l >= n_classes) {
        return Err(EvalError::LabelOutOfRange { label, n_classes });
    }
    let mut tp = vec![0usize; n_classes];
    let mut predicted = vec![0usize; n_classes];
    let mut actual = vec![0usize; n_classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        actual[t] += 1;
        predicted[p] += 1;
        if t == p {
            tp[t] += 1;
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok((0..n_classes)
        .map(|k| {
            let precision = ratio(tp[k], predicted[k]);
            let recall = ratio(tp[k], actual[k]);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassScores {
                precision,
                recall,
                f1,
                support: actual[k],
            }
        })
        .collect())
}

/// Unweighted mean of the per-class F1 over all `n_classes` classes.
pub fn macro_f1(y_true: &[usize], y_pred: &[usize], n_classes: usize) -> Result<f64> {
    let scores = per_class_scores(y_true, y_pred, n_classes)?;
    Ok(scores.iter().map(|s| s.f1).sum::<f64>() / n_classes as f64)
}

/// Test-split scores of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub new_user: String,
    pub seed: u64,
    pub n_samples: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassScores>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_distance: Option<f64>,
}

impl MetricsReport {
    pub fn compute(
        new_user: impl Into<String>,
        seed: u64,
        y_true: &[usize],
        y_pred: &[usize],
        n_classes: usize,
    ) -> Result<Self> {
        let per_class = per_class_scores(y_true, y_pred, n_classes)?;
        Ok(Self {
            new_user: new_user.into(),
            seed,
            n_samples: y_true.len(),
            accuracy: accuracy(y_true, y_pred)?,
            macro_f1: per_class.iter().map(|s| s.f1).sum::<f64>() / n_classes as f64,
            per_class,
            a_distance: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 1], &[1, 0]).unwrap(), 0.0);
        assert_eq!(accuracy(&[0, 0, 1, 1], &[0, 1, 1, 1]).unwrap(), 0.75);
        assert!(matches!(accuracy(&[], &[]), Err(EvalError::EmptyInput)));
        assert!(accuracy(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn macro_f1_examples() {
        assert_eq!(macro_f1(&[0, 1, 2, 1], &[0, 1, 2, 1], 3).unwrap(), 1.0);
        // Class 0: P = 1, R = 1/2. Class 1: P = 2/3, R = 1.
        let two = macro_f1(&[0, 0, 1, 1], &[0, 1, 1, 1], 2).unwrap();
        assert!((two - (2.0 / 3.0 + 4.0 / 5.0) / 2.0).abs() < 1e-12);
        assert_eq!(format!("{two:.4}"), "0.7333");
        let three = macro_f1(&[0, 0, 1, 1], &[0, 1, 1, 1], 3).unwrap();
        assert_eq!(format!("{three:.4}"), "0.4889");
        assert!(matches!(
            macro_f1(&[0, 3], &[0, 1], 3),
            Err(EvalError::LabelOutOfRange { label: 3, .. })
        ));
    }

    #[test]
    fn report_matches_free_functions() {
        let r = MetricsReport::compute("u1", 3, &[0, 0, 1, 1], &[0, 1, 1, 1], 2).unwrap();
        assert_eq!(r.accuracy, 0.75);
        assert_eq!(r.macro_f1, macro_f1(&[0, 0, 1, 1], &[0, 1, 1, 1], 2).unwrap());
        assert_eq!(r.per_class[0].support, 2);
    }

    proptest! {
        #[test]
        fn scores_are_bounded(pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..60)) {
            let (t, p): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            let acc = accuracy(&t, &p).unwrap();
            let f1 = macro_f1(&t, &p, 4).unwrap();
            prop_assert!((0.0..=1.0).contains(&acc));
            prop_assert!((0.0..=1.0).contains(&f1));
            if acc == 1.0 {
                let present = (0..4).filter(|k| t.contains(k)).count() as f64;
                prop_assert!((f1 - present / 4.0).abs() < 1e-12);
            }
        }
    }
}
