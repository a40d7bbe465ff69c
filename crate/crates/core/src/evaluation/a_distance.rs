use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EvalError, Result};
use crate::autodiff::Graph;
use crate::tensor::{ParameterSet, Tensor};
use crate::training::{optimizer_step, AdamState, Direction};

/// Minimum feature vectors per domain.
pub const MIN_SAMPLES_PER_DOMAIN: usize = 20;

/// Settings of the domain probe classifier.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeSettings {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        Self {
            hidden: 64,
            epochs: 300,
            lr: 1e-2,
        }
    }
}

/// `2(1 - 2ε)` clamped to `[0, 2]`.
pub fn a_distance_from_error(balanced_error: f64) -> f64 {
    (2.0 * (1.0 - 2.0 * balanced_error)).clamp(0.0, 2.0)
}

fn rows(x: &[f64], dim: usize, idx: &[usize]) -> Vec<f64> {
    idx.iter().flat_map(|&i| x[i * dim..(i + 1) * dim].iter().copied()).collect()
}

/// Proxy A-distance with default probe settings.
pub fn proxy_a_distance(source: &Tensor<f64>, target: &Tensor<f64>, seed: u64) -> Result<f64> {
    proxy_a_distance_with(source, target, seed, ProbeSettings::default())
}

/// Trains a fresh one-hidden-layer perceptron to tell the domains apart on
/// half of each domain and scores its balanced error on the other half.
/// Features are standardized with the training half's statistics.
pub fn proxy_a_distance_with(
    source: &Tensor<f64>,
    target: &Tensor<f64>,
    seed: u64,
    settings: ProbeSettings,
) -> Result<f64> {
    let (ns, nt) = (source.shape()[0], target.shape()[0]);
    for (what, n) in [("source features", ns), ("target features", nt)] {
        if n < MIN_SAMPLES_PER_DOMAIN {
            return Err(EvalError::TooFewSamples {
                what,
                n,
                min: MIN_SAMPLES_PER_DOMAIN,
            });
        }
    }
    if source.rank() != 2 || target.rank() != 2 || source.shape()[1] != target.shape()[1] {
        return Err(EvalError::LengthMismatch(source.shape()[1], target.shape()[1]));
    }
    let dim = source.shape()[1];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = |n: usize| {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        let held = idx.split_off(n / 2);
        (idx, held)
    };
    let (s_train, s_held) = split(ns);
    let (t_train, t_held) = split(nt);

    let mut train_x = rows(source.data(), dim, &s_train);
    train_x.extend(rows(target.data(), dim, &t_train));
    let n_train = s_train.len() + t_train.len();
    let mut mean = vec![0.0; dim];
    let mut std = vec![0.0; dim];
    for r in train_x.chunks(dim) {
        mean.iter_mut().zip(r).for_each(|(m, v)| *m += v / n_train as f64);
    }
    for r in train_x.chunks(dim) {
        std.iter_mut().zip(r).zip(&mean).for_each(|((s, v), m)| *s += (v - m).powi(2) / n_train as f64);
    }
    let std: Vec<f64> = std.iter().map(|v| if *v > 1e-12 { v.sqrt() } else { 1.0 }).collect();
    let standardize = |x: &mut [f64]| {
        for r in x.chunks_mut(dim) {
            for ((v, m), s) in r.iter_mut().zip(&mean).zip(&std) {
                *v = (*v - m) / s;
            }
        }
    };
    standardize(&mut train_x);
    let train_x = Tensor::new(vec![n_train, dim], train_x)?;
    let labels: Vec<f64> = s_train.iter().map(|_| 0.0).chain(t_train.iter().map(|_| 1.0)).collect();
    // Balanced training: each domain contributes half of the loss.
    let row_weights: Vec<f64> = labels
        .iter()
        .map(|&l| 0.5 / if l == 0.0 { s_train.len() } else { t_train.len() } as f64)
        .collect();

    let mut params = ParameterSet::new();
    let mut uniform = |shape: Vec<usize>, fan_in: usize| -> Result<Tensor<f64>> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let n = shape.iter().product();
        Ok(Tensor::new(shape, (0..n).map(|_| rng.gen_range(-bound..=bound)).collect())?)
    };
    params.insert("hidden.weight", uniform(vec![settings.hidden, dim], dim)?)?;
    params.insert("hidden.bias", Tensor::zeros(vec![settings.hidden])?)?;
    params.insert("out.weight", uniform(vec![1, settings.hidden], settings.hidden)?)?;
    params.insert("out.bias", Tensor::zeros(vec![1])?)?;
    let mut adam = AdamState::new(&params);

    let forward = |g: &mut Graph<f64>, x: Tensor<f64>, p: &ParameterSet<f64>| -> Result<_> {
        let tp = g.bind_params(p);
        let x = g.input(x);
        let h = g.linear(x, tp["hidden.weight"], tp["hidden.bias"])?;
        let h = g.relu(h)?;
        let o = g.linear(h, tp["out.weight"], tp["out.bias"])?;
        Ok((g.sigmoid(o)?, tp))
    };
    for _ in 0..settings.epochs {
        let mut g = Graph::new();
        let (p, tp) = forward(&mut g, train_x.clone(), &params)?;
        let bce = g.binary_cross_entropy(p, &labels)?;
        let w = g.constant(Tensor::new(vec![n_train], row_weights.clone())?);
        let weighted = g.mul(bce, w)?;
        let loss = g.sum(weighted)?;
        let grads = g.gradient_params(loss, &tp)?;
        optimizer_step(&mut params, &grads, &mut adam, settings.lr, Direction::Descend)?;
    }

    let error_rate = |x: &Tensor<f64>, idx: &[usize], label: f64| -> Result<f64> {
        let mut held = rows(x.data(), dim, idx);
        standardize(&mut held);
        let mut g = Graph::new();
        let (p, _) = forward(&mut g, Tensor::new(vec![idx.len(), dim], held)?, &params)?;
        let wrong = g
            .value(p)?
            .data()
            .iter()
            .filter(|&&v| (if v > 0.5 { 1.0 } else { 0.0 }) != label)
            .count();
        Ok(wrong as f64 / idx.len() as f64)
    };
    let eps = 0.5 * (error_rate(source, &s_held, 0.0)? + error_rate(target, &t_held, 1.0)?);
    Ok(a_distance_from_error(eps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn gaussian(n: usize, dim: usize, shift: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let normal = Normal::new(0.0, 1.0).unwrap();
        (0..n * dim).map(|_| normal.sample(rng) + shift).collect()
    }

    #[test]
    fn formula_examples() {
        assert_eq!(a_distance_from_error(0.5), 0.0);
        assert_eq!(a_distance_from_error(0.0), 2.0);
        assert_eq!(a_distance_from_error(0.6), 0.0);
    }

    #[test]
    fn separable_domains_are_far_apart() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = Tensor::new(vec![100, 4], gaussian(100, 4, -3.0, &mut rng)).unwrap();
        let t = Tensor::new(vec![100, 4], gaussian(100, 4, 3.0, &mut rng)).unwrap();
        assert!(proxy_a_distance(&s, &t, 0).unwrap() > 1.9);
    }

    #[test]
    fn random_relabeling_is_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 500;
        let x = gaussian(n, 8, 0.0, &mut rng);
        for seed in 0..10 {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(100 + seed));
            let (a, b) = idx.split_at(n / 2);
            let s = Tensor::new(vec![a.len(), 8], rows(&x, 8, a)).unwrap();
            let t = Tensor::new(vec![b.len(), 8], rows(&x, 8, b)).unwrap();
            let d = proxy_a_distance(&s, &t, seed).unwrap();
            assert!(d <= 0.3, "seed {seed}: {d}");
        }
    }

    #[test]
    fn too_few_samples() {
        let s = Tensor::zeros(vec![19, 2]).unwrap();
        let t = Tensor::zeros(vec![30, 2]).unwrap();
        assert!(matches!(
            proxy_a_distance(&s, &t, 0),
            Err(EvalError::TooFewSamples { n: 19, .. })
        ));
    }
}
