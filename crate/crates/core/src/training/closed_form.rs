use crate::scalar::Scalar;

use super::TrainError;

/// `(αβ/2b) Σ_j (s·g_j) a_j`.
///
/// `s` is the gradient of the meta-classification loss at the simulated
/// parameters, `g_j` the per-sample domain-loss gradients at the
/// pre-alignment feature parameters (all flattened in the same order), and
/// `a_j` the gradients of the normalized weights with respect to the
/// allocator parameters. The sum runs over all `2b` samples.
///
/// Under a plain descent step on the allocator, the actual increment is the
/// negation of this value.
pub fn meta_gradient_closed_form<T: Scalar>(
    s: &[T],
    g: &[Vec<T>],
    a: &[Vec<T>],
    alpha: f64,
    beta: f64,
    b: usize,
) -> Result<Vec<T>, TrainError> {
    if g.len() != a.len() {
        return Err(TrainError::InvalidInput(format!(
            "{} feature gradients for {} weight gradients",
            g.len(),
            a.len()
        )));
    }
    if b == 0 {
        return Err(TrainError::InvalidInput("batch size must be positive".into()));
    }
    let width = a.first().map_or(0, Vec::len);
    let mut out = vec![T::zero(); width];
    for (gj, aj) in g.iter().zip(a) {
        if gj.len() != s.len() {
            return Err(TrainError::InvalidInput(format!(
                "gradient of length {} against s of length {}",
                gj.len(),
                s.len()
            )));
        }
        if aj.len() != width {
            return Err(TrainError::InvalidInput("weight gradients differ in length".into()));
        }
        let dot: T = s.iter().zip(gj).map(|(x, y)| *x * *y).sum();
        for (o, &av) in out.iter_mut().zip(aj) {
            *o += dot * av;
        }
    }
    let k = T::lit(alpha * beta / (2.0 * b as f64));
    Ok(out.into_iter().map(|v| v * k).collect())
}
