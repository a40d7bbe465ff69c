use std::f64::consts::PI;

use crate::scalar::Scalar;
use crate::tensor::{ParameterSet, Tensor};

use super::TrainError;

/// Cosine-annealed learning rate, `base · ½(1 + cos(πt/T))`.
pub fn cosine_lr(t: usize, total: usize, base_lr: f64) -> f64 {
    let total = total.max(1) as f64;
    let t = (t as f64).min(total);
    base_lr * 0.5 * (1.0 + (PI * t / total).cos())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Descend,
    Ascend,
}

/// Adam moments for one parameter set. Bias correction uses the number of
/// steps taken by this state, so a set stepped twice per iteration advances
/// its counter twice.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: ParameterSet<T>,
    pub v: ParameterSet<T>,
    pub steps: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(like: &ParameterSet<T>) -> Self {
        let zeros = |p: &ParameterSet<T>| {
            let mut z = ParameterSet::new();
            for (name, t) in p.iter() {
                z.insert(name, Tensor::zeros(t.shape().to_vec()).expect("shape is valid"))
                    .expect("names are unique");
            }
            z
        };
        Self {
            m: zeros(like),
            v: zeros(like),
            steps: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One Adam update. `Ascend` negates the gradients first.
pub fn optimizer_step<T: Scalar>(
    params: &mut ParameterSet<T>,
    grads: &ParameterSet<T>,
    state: &mut AdamState<T>,
    lr: f64,
    direction: Direction,
) -> Result<(), TrainError> {
    for (name, p) in params.iter() {
        let g = grads
            .get(name)
            .ok_or_else(|| TrainError::GradientMismatch(name.to_string()))?;
        if g.shape() != p.shape() {
            return Err(TrainError::GradientMismatch(name.to_string()));
        }
        if !g.is_finite() {
            return Err(TrainError::NonFinite(format!("gradient of {name}")));
        }
    }
    state.steps += 1;
    let (b1, b2) = (T::lit(state.beta1), T::lit(state.beta2));
    let c1 = T::lit(1.0 - state.beta1.powi(state.steps as i32));
    let c2 = T::lit(1.0 - state.beta2.powi(state.steps as i32));
    let lr = T::lit(lr);
    let eps = T::lit(state.eps);
    let sign = match direction {
        Direction::Descend => T::one(),
        Direction::Ascend => -T::one(),
    };
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in names {
        let g = grads.get(&name).expect("checked above").data();
        let p = params.get_mut(&name).expect("iterating own names").data_mut();
        let m = state
            .m
            .get_mut(&name)
            .ok_or_else(|| TrainError::GradientMismatch(name.clone()))?
            .data_mut();
        let v = state
            .v
            .get_mut(&name)
            .ok_or_else(|| TrainError::GradientMismatch(name.clone()))?
            .data_mut();
        for i in 0..p.len() {
            let gi = sign * g[i];
            m[i] = b1 * m[i] + (T::one() - b1) * gi;
            v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Plain gradient step `p ← p ∓ lr·g`.
pub fn sgd_step<T: Scalar>(
    params: &mut ParameterSet<T>,
    grads: &ParameterSet<T>,
    lr: f64,
    direction: Direction,
) -> Result<(), TrainError> {
    let lr = T::lit(match direction {
        Direction::Descend => lr,
        Direction::Ascend => -lr,
    });
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in names {
        let g = grads
            .get(&name)
            .ok_or_else(|| TrainError::GradientMismatch(name.clone()))?;
        if !g.is_finite() {
            return Err(TrainError::NonFinite(format!("gradient of {name}")));
        }
        let p = params.get_mut(&name).expect("iterating own names");
        if g.shape() != p.shape() {
            return Err(TrainError::GradientMismatch(name));
        }
        for (pi, &gi) in p.data_mut().iter_mut().zip(g.data()) {
            *pi -= lr * gi;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(v: &[f64]) -> ParameterSet<f64> {
        let mut p = ParameterSet::new();
        p.insert("w", Tensor::vector(v.to_vec()).unwrap()).unwrap();
        p
    }

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(0, 1000, 1e-3), 1e-3);
        assert!((cosine_lr(500, 1000, 1e-3) - 5e-4).abs() < 1e-18);
        assert!(cosine_lr(1000, 1000, 1e-3).abs() < 1e-18);
    }

    #[test]
    fn zero_gradient_leaves_parameters_and_decays_moments() {
        let mut p = set(&[1.0, -2.0]);
        let mut st = AdamState::new(&p);
        optimizer_step(&mut p, &set(&[0.5, 0.5]), &mut st, 1e-3, Direction::Descend).unwrap();
        let before = p.clone();
        let m_before = st.m.get("w").unwrap().data()[0];
        optimizer_step(&mut p, &set(&[0.0, 0.0]), &mut st, 1e-3, Direction::Descend).unwrap();
        assert!(st.m.get("w").unwrap().data()[0] < m_before);
        // Momentum still moves parameters; from a fresh state a zero gradient must not.
        let mut q = set(&[1.0, -2.0]);
        let mut fresh = AdamState::new(&q);
        optimizer_step(&mut q, &set(&[0.0, 0.0]), &mut fresh, 1e-3, Direction::Descend).unwrap();
        assert_eq!(q, set(&[1.0, -2.0]));
        assert_ne!(before, set(&[1.0, -2.0]));
    }

    #[test]
    fn first_step_moves_by_learning_rate_against_gradient() {
        let mut p = set(&[0.0, 0.0]);
        let mut st = AdamState::new(&p);
        optimizer_step(&mut p, &set(&[3.0, -0.2]), &mut st, 1e-3, Direction::Descend).unwrap();
        let d = p.get("w").unwrap().data();
        assert!((d[0] + 1e-3).abs() < 1e-8);
        assert!((d[1] - 1e-3).abs() < 1e-8);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut p = set(&[0.0]);
        let mut st = AdamState::new(&p);
        assert!(optimizer_step(&mut p, &set(&[f64::NAN]), &mut st, 1e-3, Direction::Descend).is_err());
        assert_eq!(st.steps, 0);
    }

    proptest! {
        #[test]
        fn ascend_equals_descend_on_negated_gradient(
            g in prop::collection::vec(-10.0f64..10.0, 1..6),
            steps in 1usize..4,
        ) {
            let p0: Vec<f64> = g.iter().map(|v| v * 0.3).collect();
            let neg: Vec<f64> = g.iter().map(|v| -v).collect();
            let (mut a, mut b) = (set(&p0), set(&p0));
            let (mut sa, mut sb) = (AdamState::new(&a), AdamState::new(&b));
            for _ in 0..steps {
                optimizer_step(&mut a, &set(&g), &mut sa, 1e-2, Direction::Ascend).unwrap();
                optimizer_step(&mut b, &set(&neg), &mut sb, 1e-2, Direction::Descend).unwrap();
            }
            prop_assert_eq!(a, b);
        }

        #[test]
        fn cosine_stays_within_base(t in 0usize..=1000) {
            let lr = cosine_lr(t, 1000, 1e-3);
            prop_assert!((0.0..=1e-3).contains(&lr));
        }
    }
}
