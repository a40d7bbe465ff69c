//! The four subnetworks: feature extractor, activity classifier, domain
//! discriminator and weight allocator, plus the gradient-reversal coupling.
//!
//! Each forward function appends to a caller-owned [`Graph`] and reads its
//! parameters from [`ParamNodes`], so the same code evaluates real
//! parameters and simulated (graph-valued) ones.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Graph, NodeId, ParamNodes};
use crate::scalar::Scalar;
use crate::tensor::{ParameterSet, Tensor, TensorError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NetworkError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("window length {len} is shorter than the largest kernel ({kernel})")]
    WindowTooShort { len: usize, kernel: usize },
    #[error("expected {expected} input channels, got {actual}")]
    ChannelMismatch { expected: usize, actual: usize },
    #[error("expected {expected} classes, got {actual}")]
    ClassMismatch { expected: usize, actual: usize },
    #[error("allocator inputs must be non-negative losses, found {0}")]
    NegativeLoss(f64),
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
}

pub type Result<T, E = NetworkError> = std::result::Result<T, E>;

/// Layer sizes. Defaults follow the CoDATS-style construction: three
/// conv blocks (128/256/128 filters, kernels 8/5/3, strides 2/2/1), a
/// 500-500 discriminator, and a one-hidden-layer allocator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Architecture {
    pub in_channels: usize,
    pub window_len: usize,
    pub n_classes: usize,
    pub conv_filters: Vec<usize>,
    pub conv_kernels: Vec<usize>,
    pub conv_strides: Vec<usize>,
    pub disc_hidden: Vec<usize>,
    pub allocator_hidden: usize,
    /// 2 for (classification loss, domain loss); 1 for the single-loss ablations.
    pub allocator_inputs: usize,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            in_channels: 3,
            window_len: 128,
            n_classes: 6,
            conv_filters: vec![128, 256, 128],
            conv_kernels: vec![8, 5, 3],
            conv_strides: vec![2, 2, 1],
            disc_hidden: vec![500, 500],
            allocator_hidden: 5,
            allocator_inputs: 2,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }
}

impl Architecture {
    pub fn feature_dim(&self) -> usize {
        *self.conv_filters.last().unwrap_or(&0)
    }

    pub fn max_kernel(&self) -> usize {
        self.conv_kernels.iter().copied().max().unwrap_or(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(NetworkError::InvalidArchitecture(m.to_string()));
        if self.conv_filters.is_empty()
            || self.conv_filters.len() != self.conv_kernels.len()
            || self.conv_filters.len() != self.conv_strides.len()
        {
            return bad("conv_filters, conv_kernels and conv_strides must have equal non-zero length");
        }
        if self.conv_filters.iter().chain(&self.conv_kernels).chain(&self.conv_strides).any(|&v| v == 0) {
            return bad("conv sizes must be positive");
        }
        if self.disc_hidden.iter().any(|&v| v == 0) {
            return bad("discriminator layer sizes must be positive");
        }
        if self.in_channels == 0 || self.n_classes < 2 || self.allocator_hidden == 0 {
            return bad("need in_channels >= 1, n_classes >= 2, allocator_hidden >= 1");
        }
        if !(1..=2).contains(&self.allocator_inputs) {
            return bad("allocator_inputs must be 1 or 2");
        }
        if self.window_len < self.max_kernel() {
            return Err(NetworkError::WindowTooShort {
                len: self.window_len,
                kernel: self.max_kernel(),
            });
        }
        Ok(())
    }
}

/// Identity forward, gradient scaled by `-lambda` backward.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradientReversal {
    pub lambda: f64,
}

impl Default for GradientReversal {
    fn default() -> Self {
        Self { lambda: 1.0 }
    }
}

/// How batch-norm layers obtain their statistics.
#[derive(Clone, Copy, Debug)]
pub enum BnMode<'a, T> {
    /// Batch statistics; the caller may fold them into running estimates.
    Train,
    /// Fixed running statistics.
    Eval(&'a ParameterSet<T>),
}

/// Result of a feature-extractor pass.
#[derive(Clone, Debug)]
pub struct FeatureOutput {
    pub features: NodeId,
    /// Training-mode batch-norm nodes, in layer order (empty in eval mode).
    pub bn_nodes: Vec<NodeId>,
}

fn param(p: &ParamNodes, name: &str) -> Result<NodeId> {
    p.get(name)
        .copied()
        .ok_or_else(|| NetworkError::MissingParam(name.to_string()))
}

/// `[b, C_in, L] -> [b, feature_dim]`: conv/BN/ReLU blocks then global
/// average pooling over time.
pub fn forward_features<T: Scalar>(
    g: &mut Graph<T>,
    x: NodeId,
    theta_f: &ParamNodes,
    arch: &Architecture,
    mode: BnMode<'_, T>,
) -> Result<FeatureOutput> {
    let shape = g.shape(x)?.to_vec();
    if shape.len() != 3 || shape[1] != arch.in_channels {
        return Err(NetworkError::ChannelMismatch {
            expected: arch.in_channels,
            actual: shape.get(1).copied().unwrap_or(0),
        });
    }
    if shape[2] < arch.max_kernel() {
        return Err(NetworkError::WindowTooShort {
            len: shape[2],
            kernel: arch.max_kernel(),
        });
    }
    let eps = T::lit(arch.bn_eps);
    let mut h = x;
    let mut bn_nodes = Vec::new();
    for (i, (&filters, &stride)) in arch.conv_filters.iter().zip(&arch.conv_strides).enumerate() {
        let w = param(theta_f, &format!("conv{i}.weight"))?;
        let b = param(theta_f, &format!("conv{i}.bias"))?;
        let conv = g.conv1d(h, w, stride)?;
        let b3 = g.reshape(b, vec![1, filters, 1])?;
        let conv = g.add(conv, b3)?;
        let gamma = param(theta_f, &format!("bn{i}.gamma"))?;
        let beta = param(theta_f, &format!("bn{i}.beta"))?;
        let normed = match mode {
            BnMode::Train => {
                let n = g.batch_norm_train(conv, gamma, beta, eps)?;
                bn_nodes.push(n);
                n
            }
            BnMode::Eval(running) => {
                let rm = running
                    .get(&format!("bn{i}.running_mean"))
                    .ok_or_else(|| NetworkError::MissingParam(format!("bn{i}.running_mean")))?;
                let rv = running
                    .get(&format!("bn{i}.running_var"))
                    .ok_or_else(|| NetworkError::MissingParam(format!("bn{i}.running_var")))?;
                g.batch_norm_eval(conv, gamma, beta, rm, rv, eps)?
            }
        };
        h = g.relu(normed)?;
    }
    let features = g.global_avg_pool(h)?;
    Ok(FeatureOutput { features, bn_nodes })
}

/// Pre-softmax classifier outputs `[b, n_c]`.
pub fn forward_class_logits<T: Scalar>(
    g: &mut Graph<T>,
    features: NodeId,
    theta_c: &ParamNodes,
    arch: &Architecture,
) -> Result<NodeId> {
    let w = param(theta_c, "dense.weight")?;
    let rows = g.shape(w)?[0];
    if rows != arch.n_classes {
        return Err(NetworkError::ClassMismatch {
            expected: arch.n_classes,
            actual: rows,
        });
    }
    let b = param(theta_c, "dense.bias")?;
    Ok(g.linear(features, w, b)?)
}

/// Class probabilities `[b, n_c]`; rows sum to one.
pub fn forward_class_probs<T: Scalar>(
    g: &mut Graph<T>,
    features: NodeId,
    theta_c: &ParamNodes,
    arch: &Architecture,
) -> Result<NodeId> {
    let logits = forward_class_logits(g, features, theta_c, arch)?;
    Ok(g.softmax(logits)?)
}

/// Probability `[b, 1]` that each sample comes from the target domain.
pub fn forward_domain_prob<T: Scalar>(
    g: &mut Graph<T>,
    features: NodeId,
    theta_d: &ParamNodes,
    reversal: Option<GradientReversal>,
) -> Result<NodeId> {
    let mut h = match reversal {
        Some(r) => g.grad_reverse(features, T::lit(r.lambda))?,
        None => features,
    };
    let mut layer = 0;
    while let Some(&w) = theta_d.get(&format!("dense{layer}.weight")) {
        let b = param(theta_d, &format!("dense{layer}.bias"))?;
        h = g.linear(h, w, b)?;
        if theta_d.contains_key(&format!("dense{}.weight", layer + 1)) {
            h = g.relu(h)?;
        }
        layer += 1;
    }
    if layer == 0 {
        return Err(NetworkError::MissingParam("dense0.weight".into()));
    }
    Ok(g.sigmoid(h)?)
}

/// Allocator output η `[b, 1]` for per-sample loss rows `[b, 1|2]`.
/// The inputs are expected to be detached losses.
pub fn forward_allocator<T: Scalar>(
    g: &mut Graph<T>,
    loss_pairs: NodeId,
    theta_w: &ParamNodes,
) -> Result<NodeId> {
    if let Ok(v) = g.value(loss_pairs) {
        if let Some(&neg) = v.data().iter().find(|&&x| x < T::zero()) {
            return Err(NetworkError::NegativeLoss(neg.to_f64_lossy()));
        }
    }
    let w1 = param(theta_w, "hidden.weight")?;
    let b1 = param(theta_w, "hidden.bias")?;
    let w2 = param(theta_w, "out.weight")?;
    let b2 = param(theta_w, "out.bias")?;
    let h = g.linear(loss_pairs, w1, b1)?;
    let h = g.relu(h)?;
    let o = g.linear(h, w2, b2)?;
    Ok(g.sigmoid(o)?)
}

fn uniform_tensor<T: Scalar, R: Rng>(rng: &mut R, shape: Vec<usize>, fan_in: usize) -> Result<Tensor<T>> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::lit(rng.gen_range(-bound..=bound))).collect();
    Ok(Tensor::new(shape, data)?)
}

fn dense<T: Scalar, R: Rng>(
    rng: &mut R,
    p: &mut ParameterSet<T>,
    name: &str,
    inputs: usize,
    outputs: usize,
) -> Result<()> {
    p.insert(format!("{name}.weight"), uniform_tensor(rng, vec![outputs, inputs], inputs)?)?;
    p.insert(format!("{name}.bias"), Tensor::zeros(vec![outputs])?)?;
    Ok(())
}

/// All parameters of the four subnetworks plus batch-norm running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkBundle<T> {
    pub arch: Architecture,
    pub feature: ParameterSet<T>,
    pub classifier: ParameterSet<T>,
    pub discriminator: ParameterSet<T>,
    /// Absent for methods without learned sample weights.
    pub allocator: Option<ParameterSet<T>>,
    /// `bn{i}.running_mean` / `bn{i}.running_var`.
    pub running: ParameterSet<T>,
}

/// Component prefixes used when the bundle is flattened (checkpoints).
pub const COMPONENTS: [&str; 5] = ["feature", "classifier", "discriminator", "allocator", "running"];

impl<T: Scalar> NetworkBundle<T> {
    /// Fresh parameters: weights uniform in ±1/sqrt(fan_in), zero biases,
    /// unit BN scale, zero BN shift, running statistics (0, 1).
    pub fn init<R: Rng>(arch: &Architecture, with_allocator: bool, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let mut feature = ParameterSet::new();
        let mut running = ParameterSet::new();
        let mut channels = arch.in_channels;
        for (i, (&f, &k)) in arch.conv_filters.iter().zip(&arch.conv_kernels).enumerate() {
            feature.insert(format!("conv{i}.weight"), uniform_tensor(rng, vec![f, channels, k], channels * k)?)?;
            feature.insert(format!("conv{i}.bias"), Tensor::zeros(vec![f])?)?;
            feature.insert(format!("bn{i}.gamma"), Tensor::filled(vec![f], T::one())?)?;
            feature.insert(format!("bn{i}.beta"), Tensor::zeros(vec![f])?)?;
            running.insert(format!("bn{i}.running_mean"), Tensor::zeros(vec![f])?)?;
            running.insert(format!("bn{i}.running_var"), Tensor::filled(vec![f], T::one())?)?;
            channels = f;
        }
        let mut classifier = ParameterSet::new();
        dense(rng, &mut classifier, "dense", arch.feature_dim(), arch.n_classes)?;
        let mut discriminator = ParameterSet::new();
        let mut width = arch.feature_dim();
        for (i, &h) in arch.disc_hidden.iter().enumerate() {
            dense(rng, &mut discriminator, &format!("dense{i}"), width, h)?;
            width = h;
        }
        dense(rng, &mut discriminator, &format!("dense{}", arch.disc_hidden.len()), width, 1)?;
        let allocator = if with_allocator {
            let mut w = ParameterSet::new();
            dense(rng, &mut w, "hidden", arch.allocator_inputs, arch.allocator_hidden)?;
            dense(rng, &mut w, "out", arch.allocator_hidden, 1)?;
            Some(w)
        } else {
            None
        };
        Ok(Self {
            arch: arch.clone(),
            feature,
            classifier,
            discriminator,
            allocator,
            running,
        })
    }

    pub fn component(&self, name: &str) -> Option<&ParameterSet<T>> {
        match name {
            "feature" => Some(&self.feature),
            "classifier" => Some(&self.classifier),
            "discriminator" => Some(&self.discriminator),
            "allocator" => self.allocator.as_ref(),
            "running" => Some(&self.running),
            _ => None,
        }
    }

    pub fn component_mut(&mut self, name: &str) -> Option<&mut ParameterSet<T>> {
        match name {
            "feature" => Some(&mut self.feature),
            "classifier" => Some(&mut self.classifier),
            "discriminator" => Some(&mut self.discriminator),
            "allocator" => self.allocator.as_mut(),
            "running" => Some(&mut self.running),
            _ => None,
        }
    }

    /// Folds the batch statistics of training-mode batch-norm nodes into the
    /// running estimates (unbiased variance, exponential moving average).
    pub fn update_running_stats(&mut self, g: &Graph<T>, bn_nodes: &[NodeId]) -> Result<()> {
        let m = T::lit(self.arch.bn_momentum);
        let keep = T::one() - m;
        for (i, node) in bn_nodes.iter().enumerate() {
            let Some(stats) = g.batch_stats(*node) else { continue };
            let n = stats.count as f64;
            let unbias = T::lit(if n > 1.0 { n / (n - 1.0) } else { 1.0 });
            let rm_name = format!("bn{i}.running_mean");
            let rv_name = format!("bn{i}.running_var");
            let rm = self.running.get_mut(&rm_name).ok_or(NetworkError::MissingParam(rm_name))?;
            for (r, &b) in rm.data_mut().iter_mut().zip(stats.mean.data()) {
                *r = keep * *r + m * b;
            }
            let rv = self.running.get_mut(&rv_name).ok_or(NetworkError::MissingParam(rv_name))?;
            for (r, &b) in rv.data_mut().iter_mut().zip(stats.var.data()) {
                *r = keep * *r + m * b * unbias;
            }
        }
        Ok(())
    }

    fn eval_chunks(
        &self,
        x: &Tensor<T>,
        f: impl Fn(&mut Graph<T>, NodeId, &Self) -> Result<NodeId>,
    ) -> Result<Tensor<T>> {
        const CHUNK: usize = 256;
        let n = x.shape()[0];
        let mut parts = Vec::new();
        let mut start = 0;
        while start < n {
            let len = CHUNK.min(n - start);
            let mut g = Graph::new();
            let xi = g.input(x.rows(start, len)?);
            let out = f(&mut g, xi, self)?;
            parts.push(g.value(out)?.clone());
            start += len;
        }
        let refs: Vec<&Tensor<T>> = parts.iter().collect();
        Ok(Tensor::concat_rows(&refs)?)
    }

    /// Eval-mode features `[n, feature_dim]`.
    pub fn features(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.eval_chunks(x, |g, xi, net| {
            let tf = g.bind_params(&net.feature);
            Ok(forward_features(g, xi, &tf, &net.arch, BnMode::Eval(&net.running))?.features)
        })
    }

    /// Eval-mode classifier logits `[n, n_c]` (before softmax).
    pub fn class_logits(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.eval_chunks(x, |g, xi, net| {
            let tf = g.bind_params(&net.feature);
            let tc = g.bind_params(&net.classifier);
            let f = forward_features(g, xi, &tf, &net.arch, BnMode::Eval(&net.running))?.features;
            forward_class_logits(g, f, &tc, &net.arch)
        })
    }

    /// Eval-mode class probabilities `[n, n_c]`.
    pub fn class_probs(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.eval_chunks(x, |g, xi, net| {
            let tf = g.bind_params(&net.feature);
            let tc = g.bind_params(&net.classifier);
            let f = forward_features(g, xi, &tf, &net.arch, BnMode::Eval(&net.running))?.features;
            forward_class_probs(g, f, &tc, &net.arch)
        })
    }

    /// Eval-mode domain probabilities `[n, 1]`.
    pub fn domain_probs(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.eval_chunks(x, |g, xi, net| {
            let tf = g.bind_params(&net.feature);
            let td = g.bind_params(&net.discriminator);
            let f = forward_features(g, xi, &tf, &net.arch, BnMode::Eval(&net.running))?.features;
            forward_domain_prob(g, f, &td, None)
        })
    }

    /// Allocator outputs η for loss rows `[n, allocator_inputs]`.
    pub fn allocator_eta(&self, loss_rows: &Tensor<T>) -> Result<Tensor<T>> {
        let theta_w = self
            .allocator
            .as_ref()
            .ok_or_else(|| NetworkError::MissingParam("allocator".into()))?;
        allocator_eta(theta_w, loss_rows)
    }

    pub fn num_parameters(&self) -> usize {
        self.feature.num_elements()
            + self.classifier.num_elements()
            + self.discriminator.num_elements()
            + self.allocator.as_ref().map_or(0, ParameterSet::num_elements)
    }
}

/// Allocator outputs η for loss rows `[n, k]` under the given parameters.
pub fn allocator_eta<T: Scalar>(theta_w: &ParameterSet<T>, loss_rows: &Tensor<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let tw = g.bind_params(theta_w);
    let x = g.input(loss_rows.clone());
    let eta = forward_allocator(&mut g, x, &tw)?;
    Ok(g.value(eta)?.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_arch() -> Architecture {
        Architecture {
            in_channels: 3,
            window_len: 16,
            n_classes: 3,
            conv_filters: vec![4, 6, 5],
            disc_hidden: vec![7, 7],
            ..Architecture::default()
        }
    }

    fn zero_all<T: Scalar>(p: &mut ParameterSet<T>) {
        let names: Vec<String> = p.names().map(str::to_string).collect();
        for n in names {
            let t = p.get_mut(&n).unwrap();
            t.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }

    #[test]
    fn feature_shape_contract_on_default_architecture() {
        let arch = Architecture::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = NetworkBundle::<f32>::init(&arch, true, &mut rng).unwrap();
        let x = Tensor::filled(vec![4, 3, 128], 0.1f32).unwrap();
        assert_eq!(net.features(&x).unwrap().shape(), &[4, 128]);
        assert_eq!(net.class_probs(&x).unwrap().shape(), &[4, 6]);
        assert_eq!(net.domain_probs(&x).unwrap().shape(), &[4, 1]);
    }

    #[test]
    fn zero_input_with_zero_biases_gives_zero_features() {
        let arch = small_arch();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = NetworkBundle::<f64>::init(&arch, false, &mut rng).unwrap();
        let x = Tensor::zeros(vec![2, 3, 16]).unwrap();
        assert!(net.features(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identical_windows_give_identical_rows() {
        let arch = small_arch();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = NetworkBundle::<f64>::init(&arch, false, &mut rng).unwrap();
        let row: Vec<f64> = (0..48).map(|i| (i as f64 * 0.3).sin()).collect();
        let mut data = row.clone();
        data.extend(&row);
        let f = net.features(&Tensor::new(vec![2, 3, 16], data).unwrap()).unwrap();
        assert_eq!(f.data()[..5], f.data()[5..]);
    }

    #[test]
    fn short_window_and_wrong_channels_are_rejected() {
        let arch = small_arch();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = NetworkBundle::<f64>::init(&arch, false, &mut rng).unwrap();
        assert!(matches!(
            net.features(&Tensor::zeros(vec![1, 3, 7]).unwrap()),
            Err(NetworkError::WindowTooShort { .. })
        ));
        assert!(matches!(
            net.features(&Tensor::zeros(vec![1, 2, 16]).unwrap()),
            Err(NetworkError::ChannelMismatch { .. })
        ));
        let bad = Architecture { window_len: 4, ..small_arch() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn class_rows_sum_to_one_and_zero_weights_are_uniform() {
        let arch = small_arch();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut net = NetworkBundle::<f64>::init(&arch, false, &mut rng).unwrap();
        let x = Tensor::new(vec![3, 3, 16], (0..144).map(|i| (i as f64 * 0.7).cos()).collect()).unwrap();
        let p = net.class_probs(&x).unwrap();
        for row in p.data().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        zero_all(&mut net.classifier);
        let p = net.class_probs(&x).unwrap();
        assert!(p.data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-12));
    }

    #[test]
    fn softmax_argmax_follows_largest_logit() {
        let mut g = Graph::<f64>::new();
        let z = g.input(Tensor::from_f64(vec![1, 3], &[10.0, 0.0, 0.0]).unwrap());
        let p = g.softmax(z).unwrap();
        let v = g.value(p).unwrap().data().to_vec();
        assert!(v[0] > v[1] && v[0] > v[2]);
    }

    #[test]
    fn zero_discriminator_and_allocator_output_one_half() {
        let arch = small_arch();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut net = NetworkBundle::<f64>::init(&arch, true, &mut rng).unwrap();
        zero_all(&mut net.discriminator);
        zero_all(net.allocator.as_mut().unwrap());
        let x = Tensor::new(vec![2, 3, 16], (0..96).map(|i| i as f64 / 96.0).collect()).unwrap();
        assert!(net.domain_probs(&x).unwrap().data().iter().all(|&v| v == 0.5));
        let pairs = Tensor::from_f64(vec![3, 2], &[0.1, 0.5, 2.0, 0.0, 0.0, 3.0]).unwrap();
        assert!(net.allocator_eta(&pairs).unwrap().data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn allocator_rejects_negative_losses_and_is_deterministic() {
        let arch = small_arch();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let net = NetworkBundle::<f64>::init(&arch, true, &mut rng).unwrap();
        let bad = Tensor::from_f64(vec![1, 2], &[0.1, -0.2]).unwrap();
        assert!(matches!(net.allocator_eta(&bad), Err(NetworkError::NegativeLoss(_))));
        let pairs = Tensor::from_f64(vec![2, 2], &[0.4, 0.9, 0.4, 0.9]).unwrap();
        let eta = net.allocator_eta(&pairs).unwrap();
        assert_eq!(eta.data()[0], eta.data()[1]);
        assert!(eta.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn gradient_reversal_flips_feature_gradient() {
        let arch = small_arch();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net = NetworkBundle::<f64>::init(&arch, false, &mut rng).unwrap();
        let feats: Vec<f64> = (0..10).map(|i| (i as f64 * 1.3).sin()).collect();
        let grad_with = |rev: Option<GradientReversal>| {
            let mut g = Graph::new();
            let f = g.param("f", Tensor::new(vec![2, 5], feats.clone()).unwrap());
            let td = g.bind_params(&net.discriminator);
            let p = forward_domain_prob(&mut g, f, &td, rev).unwrap();
            let l = g.binary_cross_entropy(p, &[0.0, 1.0]).unwrap();
            let l = g.sum(l).unwrap();
            (g.value(p).unwrap().clone(), g.gradient(l, &[f]).unwrap().remove(0))
        };
        let (p_plain, g_plain) = grad_with(None);
        let (p_rev, g_rev) = grad_with(Some(GradientReversal::default()));
        assert_eq!(p_plain, p_rev);
        for (a, b) in g_plain.data().iter().zip(g_rev.data()) {
            assert_eq!(*a, -*b);
        }
    }

    #[test]
    fn running_stats_follow_momentum() {
        let arch = small_arch();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut net = NetworkBundle::<f64>::init(&arch, false, &mut rng).unwrap();
        let mut g = Graph::new();
        let x = g.input(Tensor::new(vec![2, 3, 16], (0..96).map(|i| (i as f64 * 0.21).sin()).collect()).unwrap());
        let tf = g.bind_params(&net.feature);
        let out = forward_features(&mut g, x, &tf, &arch, BnMode::Train).unwrap();
        assert_eq!(out.bn_nodes.len(), 3);
        let stats = g.batch_stats(out.bn_nodes[0]).unwrap();
        net.update_running_stats(&g, &out.bn_nodes).unwrap();
        let rm = net.running.get("bn0.running_mean").unwrap();
        assert!((rm.data()[0] - 0.1 * stats.mean.data()[0]).abs() < 1e-15);
    }
}
