use crate::autodiff::{Graph, NodeId};
use crate::networks::NetworkBundle;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::Domain;

use super::TrainError;

/// Pseudo-labels for a target batch.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabelSet {
    pub labels: Vec<usize>,
    pub confidence: Vec<f64>,
    /// `true` exactly when the confidence strictly exceeds the threshold.
    pub mask: Vec<bool>,
}

impl PseudoLabelSet {
    pub fn selected(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Argmax class (lowest index on ties) and confidence per probability row.
pub fn pseudo_labels_from_probs<T: Scalar>(probs: &Tensor<T>, rho: f64) -> Result<PseudoLabelSet, TrainError> {
    let shape = probs.shape();
    if shape.len() != 2 || shape[0] == 0 {
        return Err(TrainError::InvalidInput(format!("probability rows of shape {shape:?}")));
    }
    let c = shape[1];
    let mut out = PseudoLabelSet {
        labels: Vec::with_capacity(shape[0]),
        confidence: Vec::with_capacity(shape[0]),
        mask: Vec::with_capacity(shape[0]),
    };
    for row in probs.data().chunks(c) {
        let mut best = 0;
        for (k, v) in row.iter().enumerate() {
            if *v > row[best] {
                best = k;
            }
        }
        let conf = row[best].to_f64_lossy();
        out.labels.push(best);
        out.confidence.push(conf);
        out.mask.push(conf > rho);
    }
    Ok(out)
}

/// Pseudo-labels from the activity recognition network in eval mode.
pub fn assign_pseudo_labels<T: Scalar>(
    net: &NetworkBundle<T>,
    target_x: &Tensor<T>,
    rho: f64,
) -> Result<PseudoLabelSet, TrainError> {
    let probs = net.class_probs(target_x)?;
    pseudo_labels_from_probs(&probs, rho)
}

/// Allocator outputs and their per-domain normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleWeights<T> {
    pub eta: Vec<T>,
    pub weights: Vec<T>,
    pub domains: Vec<Domain>,
}

impl<T: Scalar> SampleWeights<T> {
    pub fn domain_sum(&self, domain: Domain) -> T {
        self.weights
            .iter()
            .zip(&self.domains)
            .filter(|(_, d)| **d == domain)
            .map(|(w, _)| *w)
            .sum()
    }

    pub fn mean_eta(&self, domain: Domain) -> Option<f64> {
        let vals: Vec<f64> = self
            .eta
            .iter()
            .zip(&self.domains)
            .filter(|(_, d)| **d == domain)
            .map(|(e, _)| e.to_f64_lossy())
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

/// `δ(a) = τ` when `a = 0`, else 0.
fn delta<T: Scalar>(sum: T, tau: T) -> T {
    if sum == T::zero() {
        tau
    } else {
        T::zero()
    }
}

/// `w_i = η_i / (Σ η_j + δ(Σ η_j))` within each domain group.
pub fn normalize_weights<T: Scalar>(eta: &[T], domains: &[Domain], tau: T) -> Result<SampleWeights<T>, TrainError> {
    if eta.len() != domains.len() {
        return Err(TrainError::InvalidInput(format!(
            "{} allocator outputs for {} domain tags",
            eta.len(),
            domains.len()
        )));
    }
    if let Some(bad) = eta.iter().find(|e| !(**e >= T::zero())) {
        return Err(TrainError::InvalidInput(format!("allocator output {bad} is negative")));
    }
    let mut weights = vec![T::zero(); eta.len()];
    for domain in [Domain::Source, Domain::Target] {
        let sum: T = eta.iter().zip(domains).filter(|(_, d)| **d == domain).map(|(e, _)| *e).sum();
        let denom = sum + delta(sum, tau);
        for ((w, e), d) in weights.iter_mut().zip(eta).zip(domains) {
            if *d == domain {
                *w = *e / denom;
            }
        }
    }
    Ok(SampleWeights {
        eta: eta.to_vec(),
        weights,
        domains: domains.to_vec(),
    })
}

/// In-graph normalization of `eta` (`[n]` or `[n, 1]`), whose first
/// `n_source` rows are source samples and the rest target samples.
/// Returns weights of shape `[n]`.
pub fn normalize_weights_graph<T: Scalar>(
    g: &mut Graph<T>,
    eta: NodeId,
    n_source: usize,
    tau: T,
) -> Result<NodeId, TrainError> {
    let n = g.value(eta)?.len();
    let row = g.reshape(eta, vec![1, n])?;
    let mut parts = Vec::new();
    for (start, len) in [(0, n_source), (n_source, n - n_source)] {
        if len == 0 {
            continue;
        }
        let group = g.slice_last(row, start, len)?;
        parts.push(normalize_group(g, group, tau)?);
    }
    let joined = if parts.len() == 1 { parts[0] } else { g.concat_last(&parts)? };
    Ok(g.reshape(joined, vec![n])?)
}

/// Normalizes one `[1, k]` group of allocator outputs.
pub fn normalize_group<T: Scalar>(g: &mut Graph<T>, group: NodeId, tau: T) -> Result<NodeId, TrainError> {
    let sum = g.sum(group)?;
    let d = delta(g.scalar_value(sum)?, tau);
    let denom = g.add_scalar(sum, d)?;
    Ok(g.div(group, denom)?)
}

/// `Σ c_i · l^c_i` with `c_i = 1/n_S` on source rows and `m_i / Σm` on
/// target rows. The target term is omitted when no target row is selected
/// or no mask is given.
pub fn classification_loss<T: Scalar>(
    g: &mut Graph<T>,
    per_sample_ce: NodeId,
    n_source: usize,
    target_mask: Option<&[bool]>,
) -> Result<NodeId, TrainError> {
    let n = g.value(per_sample_ce)?.len();
    if n_source == 0 || n_source > n {
        return Err(TrainError::InvalidInput(format!("{n_source} source rows among {n}")));
    }
    let mut coef = vec![T::zero(); n];
    let src = T::one() / T::lit(n_source as f64);
    coef[..n_source].iter_mut().for_each(|c| *c = src);
    if let Some(mask) = target_mask {
        if mask.len() != n - n_source {
            return Err(TrainError::InvalidInput(format!(
                "{} mask entries for {} target rows",
                mask.len(),
                n - n_source
            )));
        }
        let selected = mask.iter().filter(|&&m| m).count();
        if selected > 0 {
            let t = T::one() / T::lit(selected as f64);
            for (c, &m) in coef[n_source..].iter_mut().zip(mask) {
                if m {
                    *c = t;
                }
            }
        }
    }
    let coef = g.constant(Tensor::new(vec![n], coef)?);
    let ce = g.reshape(per_sample_ce, vec![n])?;
    let weighted = g.mul(ce, coef)?;
    Ok(g.sum(weighted)?)
}

/// Unnormalized `Σ m_i · l^c_i` over target rows; a constant zero when no
/// row is selected.
pub fn meta_classification_loss<T: Scalar>(
    g: &mut Graph<T>,
    target_ce: NodeId,
    mask: &[bool],
) -> Result<NodeId, TrainError> {
    let n = g.value(target_ce)?.len();
    if mask.len() != n {
        return Err(TrainError::InvalidInput(format!("{} mask entries for {n} rows", mask.len())));
    }
    if !mask.iter().any(|&m| m) {
        return Ok(g.constant(Tensor::scalar(T::zero())));
    }
    let m = g.constant(Tensor::new(vec![n], mask.iter().map(|&m| if m { T::one() } else { T::zero() }).collect())?);
    let ce = g.reshape(target_ce, vec![n])?;
    let picked = g.mul(ce, m)?;
    Ok(g.sum(picked)?)
}

/// `-(1/n) Σ w_i · l^d_i`.
pub fn weighted_domain_alignment_loss<T: Scalar>(
    g: &mut Graph<T>,
    per_sample_bce: NodeId,
    weights: NodeId,
) -> Result<NodeId, TrainError> {
    let n = g.value(per_sample_bce)?.len();
    let ld = g.reshape(per_sample_bce, vec![n])?;
    let w = g.reshape(weights, vec![n])?;
    let prod = g.mul(ld, w)?;
    let s = g.sum(prod)?;
    Ok(g.scale(s, -T::one() / T::lit(n as f64))?)
}
