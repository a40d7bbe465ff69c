use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, ParamNodes};
use crate::networks::{
    allocator_eta, forward_allocator, forward_class_probs, forward_domain_prob, forward_features, Architecture,
    BnMode, FeatureOutput, GradientReversal, NetworkBundle,
};
use crate::scalar::Scalar;
use crate::tensor::{ParameterSet, Tensor};
use crate::Domain;

use super::losses::{
    assign_pseudo_labels, classification_loss, meta_classification_loss, normalize_group, normalize_weights,
    weighted_domain_alignment_loss, PseudoLabelSet, SampleWeights,
};
use super::optim::{cosine_lr, optimizer_step, sgd_step, AdamState, Direction};
use super::{Hyperparams, MetaOptimizer, Method, TrainError};

type Result<T, E = TrainError> = std::result::Result<T, E>;

/// `b` source windows with labels and `b` target windows.
#[derive(Clone, Debug, PartialEq)]
pub struct MiniBatchPair<T> {
    pub source_x: Tensor<T>,
    pub source_y: Vec<usize>,
    pub target_x: Tensor<T>,
}

impl<T: Scalar> MiniBatchPair<T> {
    fn sizes(&self) -> (usize, usize) {
        (self.source_x.shape()[0], self.target_x.shape()[0])
    }

    fn domains(&self) -> Vec<Domain> {
        let (ns, nt) = self.sizes();
        std::iter::repeat(Domain::Source)
            .take(ns)
            .chain(std::iter::repeat(Domain::Target).take(nt))
            .collect()
    }

    fn domain_labels(&self) -> Vec<T> {
        self.domains().into_iter().map(|d| T::lit(d.label())).collect()
    }

    fn stacked(&self) -> Result<Tensor<T>> {
        Ok(Tensor::concat_rows(&[&self.source_x, &self.target_x])?)
    }
}

/// Independent uniform sampling with replacement, `b` rows per domain.
pub fn sample_minibatch<T: Scalar, R: Rng>(
    rng: &mut R,
    source_x: &Tensor<T>,
    source_y: &[usize],
    target_x: &Tensor<T>,
    b: usize,
) -> Result<MiniBatchPair<T>> {
    let (ns, nt) = (source_x.shape()[0], target_x.shape()[0]);
    if ns == 0 || nt == 0 || source_y.len() != ns {
        return Err(TrainError::InvalidInput(format!(
            "{ns} source windows with {} labels and {nt} target windows",
            source_y.len()
        )));
    }
    let si: Vec<usize> = (0..b).map(|_| rng.gen_range(0..ns)).collect();
    let ti: Vec<usize> = (0..b).map(|_| rng.gen_range(0..nt)).collect();
    Ok(MiniBatchPair {
        source_x: source_x.select_rows(&si)?,
        source_y: si.iter().map(|&i| source_y[i]).collect(),
        target_x: target_x.select_rows(&ti)?,
    })
}

/// Everything a run carries between steps.
#[derive(Clone, Debug)]
pub struct TrainState<T> {
    pub step: usize,
    pub hp: Hyperparams,
    pub method: Method,
    pub bundle: NetworkBundle<T>,
    pub adam_f: AdamState<T>,
    pub adam_c: AdamState<T>,
    pub adam_d: AdamState<T>,
    pub adam_w: Option<AdamState<T>>,
    pub rng: ChaCha8Rng,
    /// Replaces the allocator with a constant output (test hook).
    pub allocator_override: Option<f64>,
    /// Whether selected pseudo-labeled target samples enter the
    /// classification loss.
    pub pseudo_label_term: bool,
}

impl<T: Scalar> TrainState<T> {
    /// Fresh parameters and optimizer state. The seed drives both the
    /// initialization and the mini-batch sampling.
    pub fn new(arch: &Architecture, hp: Hyperparams, method: Method, seed: u64) -> Result<Self> {
        hp.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arch = Architecture {
            allocator_inputs: method.allocator_inputs(),
            ..arch.clone()
        };
        let bundle = NetworkBundle::init(&arch, method.uses_allocator(), &mut rng)?;
        Ok(Self::from_bundle(bundle, hp, method, rng))
    }

    pub fn from_bundle(bundle: NetworkBundle<T>, hp: Hyperparams, method: Method, rng: ChaCha8Rng) -> Self {
        Self {
            step: 0,
            adam_f: AdamState::new(&bundle.feature),
            adam_c: AdamState::new(&bundle.classifier),
            adam_d: AdamState::new(&bundle.discriminator),
            adam_w: bundle.allocator.as_ref().map(AdamState::new),
            bundle,
            hp,
            method,
            rng,
            allocator_override: None,
            pseudo_label_term: method.uses_pseudo_labels(),
        }
    }

    /// Whether the allocator is learned in this run.
    pub fn learns_weights(&self) -> bool {
        self.allocator_override.is_none() && self.bundle.allocator.is_some()
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub lr: f64,
    pub loss_c: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_mc: Option<f64>,
    pub loss_wd: f64,
    /// Selected pseudo-labels in phase (i).
    pub selected: usize,
    /// Selected pseudo-labels at the simulated parameters.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected_meta: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_mean_source: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_mean_target: Option<f64>,
    pub weight_sum_source: f64,
    pub weight_sum_target: f64,
    /// Largest per-sample classification and domain losses fed to the
    /// alignment phase; bounds for weight-surface exports.
    pub max_sample_loss_c: f64,
    pub max_sample_loss_d: f64,
}

#[derive(Clone, Debug)]
pub struct StepOutcome<T> {
    pub log: StepLog,
    /// Weights under the pre-update allocator (absent when not learned).
    pub meta_weights: Option<SampleWeights<T>>,
    /// Weights used by the adversarial update.
    pub align_weights: SampleWeights<T>,
}

/// The train-mode forward of both domains at the post-classification
/// feature parameters, shared by the simulated step and the adversarial
/// update.
pub struct AlignmentGraph<T> {
    pub graph: Graph<T>,
    pub theta_f: ParamNodes,
    pub theta_c: ParamNodes,
    pub theta_d: ParamNodes,
    pub theta_w: Option<ParamNodes>,
    pub features: FeatureOutput,
    /// Per-sample classification loss `[n]` (labels, then pseudo-labels).
    pub class_ce: NodeId,
    /// Per-sample domain discrimination loss `[n]`.
    pub domain_bce: NodeId,
    /// Detached allocator inputs `[n, k]`.
    pub allocator_rows: NodeId,
    /// Normalized weights `[n]` as a function of `theta_w`.
    pub weights: Option<NodeId>,
    /// Weighted domain alignment loss at `theta_w`.
    pub alignment_loss: Option<NodeId>,
    pub n_source: usize,
}

/// Builds the shared forward. `labels` holds the source labels followed by
/// the target pseudo-labels.
pub fn build_alignment_graph<T: Scalar>(
    bundle: &NetworkBundle<T>,
    batch: &MiniBatchPair<T>,
    labels: &[usize],
    method: Method,
    learn_weights: bool,
    tau: f64,
) -> Result<AlignmentGraph<T>> {
    let (ns, nt) = batch.sizes();
    let mut g = Graph::new();
    let x = g.input(batch.stacked()?);
    let theta_f = g.bind_params(&bundle.feature);
    let theta_c = g.bind_params(&bundle.classifier);
    let theta_d = g.bind_params(&bundle.discriminator);
    let features = forward_features(&mut g, x, &theta_f, &bundle.arch, BnMode::Train)?;
    let probs = forward_class_probs(&mut g, features.features, &theta_c, &bundle.arch)?;
    let class_ce = g.cross_entropy(probs, labels)?;
    let pd = forward_domain_prob(&mut g, features.features, &theta_d, None)?;
    let domain_bce = g.binary_cross_entropy(pd, &batch.domain_labels())?;

    let n = ns + nt;
    let lc = g.detach(class_ce)?;
    let lc = g.reshape(lc, vec![n, 1])?;
    let ld = g.detach(domain_bce)?;
    let ld = g.reshape(ld, vec![n, 1])?;
    let allocator_rows = match method {
        Method::SwlD => ld,
        Method::SwlC => lc,
        _ => g.concat_last(&[lc, ld])?,
    };

    let mut out = AlignmentGraph {
        graph: g,
        theta_f,
        theta_c,
        theta_d,
        theta_w: None,
        features,
        class_ce,
        domain_bce,
        allocator_rows,
        weights: None,
        alignment_loss: None,
        n_source: ns,
    };
    if let (true, Some(params)) = (learn_weights, bundle.allocator.as_ref()) {
        let g = &mut out.graph;
        let theta_w = g.bind_params(params);
        let eta = forward_allocator(g, allocator_rows, &theta_w)?;
        let row = g.reshape(eta, vec![1, n])?;
        let tau = T::lit(tau);
        let src = g.slice_last(row, 0, ns)?;
        let w_src = normalize_group(g, src, tau)?;
        let w_tgt = if method == Method::SwlS {
            g.constant(Tensor::filled(vec![1, nt], T::one() / T::lit(nt as f64))?)
        } else {
            let tgt = g.slice_last(row, ns, nt)?;
            normalize_group(g, tgt, tau)?
        };
        let w = g.concat_last(&[w_src, w_tgt])?;
        let w = g.reshape(w, vec![n])?;
        out.alignment_loss = Some(weighted_domain_alignment_loss(g, domain_bce, w)?);
        out.weights = Some(w);
        out.theta_w = Some(theta_w);
    }
    Ok(out)
}

/// `θ̃ = θ − β ∇_θ L^wd` as graph nodes that stay differentiable in the
/// allocator parameters.
pub fn simulated_alignment_step<T: Scalar>(
    g: &mut Graph<T>,
    alignment_loss: NodeId,
    theta_f: &ParamNodes,
    beta: f64,
) -> Result<ParamNodes> {
    let ids: Vec<NodeId> = theta_f.values().copied().collect();
    let grads = g.gradient_nodes(alignment_loss, &ids)?;
    let mut out = ParamNodes::new();
    for ((name, &p), gr) in theta_f.iter().zip(grads) {
        let step = g.scale(gr, T::lit(beta))?;
        out.insert(name.clone(), g.sub(p, step)?);
    }
    Ok(out)
}

/// Meta-classification loss of the target batch at the simulated feature
/// parameters (train-mode batch norm over the target batch).
pub fn meta_objective<T: Scalar>(
    g: &mut Graph<T>,
    target_x: &Tensor<T>,
    theta_tilde: &ParamNodes,
    theta_c: &ParamNodes,
    arch: &Architecture,
    pseudo: &PseudoLabelSet,
) -> Result<NodeId> {
    if !pseudo.mask.iter().any(|&m| m) {
        return Ok(g.constant(Tensor::scalar(T::zero())));
    }
    let xt = g.input(target_x.clone());
    let f = forward_features(g, xt, theta_tilde, arch, BnMode::Train)?;
    let p = forward_class_probs(g, f.features, theta_c, arch)?;
    let ce = g.cross_entropy(p, &pseudo.labels)?;
    meta_classification_loss(g, ce, &pseudo.mask)
}

fn values_of<T: Scalar>(g: &Graph<T>, nodes: &ParamNodes) -> Result<ParameterSet<T>> {
    let mut out = ParameterSet::new();
    for (name, &id) in nodes {
        out.insert(name.clone(), g.value(id)?.clone())?;
    }
    Ok(out)
}

fn zeros_like<T: Scalar>(p: &ParameterSet<T>) -> Result<ParameterSet<T>> {
    let mut out = ParameterSet::new();
    for (name, t) in p.iter() {
        out.insert(name, Tensor::zeros(t.shape().to_vec())?)?;
    }
    Ok(out)
}

/// Gradients of one objective with respect to several parameter groups in a
/// single backward pass.
fn gradient_groups<T: Scalar>(g: &mut Graph<T>, output: NodeId, groups: &[&ParamNodes]) -> Result<Vec<ParameterSet<T>>> {
    let ids: Vec<NodeId> = groups.iter().flat_map(|p| p.values().copied()).collect();
    let mut grads = g.gradient(output, &ids)?.into_iter();
    let mut out = Vec::new();
    for group in groups {
        let mut set = ParameterSet::new();
        for name in group.keys() {
            set.insert(name.clone(), grads.next().expect("one gradient per id"))?;
        }
        out.push(set);
    }
    Ok(out)
}

/// Normalized weights from allocator outputs under the method's rules
/// (uniform target weights for the source-only variant).
/// Normalized weights for allocator outputs; SWL-S overrides target rows
/// with the uniform weight.
pub fn weights_from_eta<T: Scalar>(eta: &[T], domains: &[Domain], method: Method, tau: f64) -> Result<SampleWeights<T>> {
    let mut w = normalize_weights(eta, domains, T::lit(tau))?;
    if method == Method::SwlS {
        let nt = domains.iter().filter(|d| **d == Domain::Target).count();
        for (wi, d) in w.weights.iter_mut().zip(domains) {
            if *d == Domain::Target {
                *wi = T::one() / T::lit(nt as f64);
            }
        }
    }
    Ok(w)
}

/// One iteration of the three-phase update. Advances `state.step`.
pub fn training_step<T: Scalar>(state: &mut TrainState<T>, batch: &MiniBatchPair<T>) -> Result<StepOutcome<T>> {
    if state.step >= state.hp.total_steps {
        return Err(TrainError::Finished(state.hp.total_steps));
    }
    let (ns, nt) = batch.sizes();
    if ns == 0 || nt == 0 || batch.source_y.len() != ns {
        return Err(TrainError::InvalidInput("empty or mislabeled mini-batch".into()));
    }
    let hp = state.hp.clone();
    let method = state.method;
    let lr_beta = cosine_lr(state.step, hp.total_steps, hp.beta);
    let lr_alpha = cosine_lr(state.step, hp.total_steps, hp.alpha);
    let domains = batch.domains();
    let stacked = batch.stacked()?;

    // (i) classification update.
    let pseudo = assign_pseudo_labels(&state.bundle, &batch.target_x, hp.rho)?;
    let labels: Vec<usize> = batch.source_y.iter().chain(&pseudo.labels).copied().collect();
    let loss_c = {
        let bundle = &mut state.bundle;
        let mut g = Graph::new();
        let x = g.input(stacked);
        let tf = g.bind_params(&bundle.feature);
        let tc = g.bind_params(&bundle.classifier);
        let feats = forward_features(&mut g, x, &tf, &bundle.arch, BnMode::Train)?;
        let probs = forward_class_probs(&mut g, feats.features, &tc, &bundle.arch)?;
        let ce = g.cross_entropy(probs, &labels)?;
        let mask = state.pseudo_label_term.then_some(pseudo.mask.as_slice());
        let loss = classification_loss(&mut g, ce, ns, mask)?;
        let value = g.scalar_value(loss)?.to_f64_lossy();
        let grads = gradient_groups(&mut g, loss, &[&tf, &tc])?;
        bundle.update_running_stats(&g, &feats.bn_nodes)?;
        optimizer_step(&mut bundle.feature, &grads[0], &mut state.adam_f, lr_beta, Direction::Descend)?;
        optimizer_step(&mut bundle.classifier, &grads[1], &mut state.adam_c, lr_beta, Direction::Descend)?;
        value
    };

    // (ii) allocator update through the simulated alignment step.
    let learn = state.learns_weights();
    let mut ag = build_alignment_graph(&state.bundle, batch, &labels, method, learn, hp.tau)?;
    let mut meta_weights = None;
    let mut loss_mc = None;
    let mut selected_meta = None;
    if let (Some(l_wd), Some(tw), Some(w_node)) = (ag.alignment_loss, ag.theta_w.clone(), ag.weights) {
        let eta_vals: Vec<T> = {
            let rows = ag.graph.value(ag.allocator_rows)?.clone();
            allocator_eta(state.bundle.allocator.as_ref().expect("learned allocator"), &rows)?.into_data()
        };
        meta_weights = Some(SampleWeights {
            eta: eta_vals,
            weights: ag.graph.value(w_node)?.data().to_vec(),
            domains: domains.clone(),
        });
        let g = &mut ag.graph;
        let theta_tilde = simulated_alignment_step(g, l_wd, &ag.theta_f, lr_beta)?;
        let mut tilde_net = state.bundle.clone();
        tilde_net.feature = values_of(g, &theta_tilde)?;
        let pseudo_meta = assign_pseudo_labels(&tilde_net, &batch.target_x, hp.rho)?;
        drop(tilde_net);
        selected_meta = Some(pseudo_meta.selected());
        let allocator = state.bundle.allocator.as_mut().expect("learned allocator");
        let grads = if pseudo_meta.selected() > 0 {
            let l_mc = meta_objective(g, &batch.target_x, &theta_tilde, &ag.theta_c, &state.bundle.arch, &pseudo_meta)?;
            loss_mc = Some(g.scalar_value(l_mc)?.to_f64_lossy());
            gradient_groups(g, l_mc, &[&tw])?.remove(0)
        } else {
            loss_mc = Some(0.0);
            zeros_like(allocator)?
        };
        match hp.meta_optimizer {
            MetaOptimizer::Adam => optimizer_step(
                allocator,
                &grads,
                state.adam_w.as_mut().expect("allocator has optimizer state"),
                lr_alpha,
                Direction::Descend,
            )?,
            MetaOptimizer::Sgd => sgd_step(allocator, &grads, lr_alpha, Direction::Descend)?,
        }
    }

    // (iii) weighted adversarial update with the new allocator.
    let eta: Vec<T> = if learn {
        let rows = ag.graph.value(ag.allocator_rows)?.clone();
        allocator_eta(state.bundle.allocator.as_ref().expect("learned allocator"), &rows)?.into_data()
    } else {
        vec![T::lit(state.allocator_override.unwrap_or(1.0)); ns + nt]
    };
    let align_weights = weights_from_eta(&eta, &domains, method, hp.tau)?;
    let loss_wd = {
        let g = &mut ag.graph;
        let w = g.constant(Tensor::new(vec![ns + nt], align_weights.weights.clone())?);
        let reversal = GradientReversal { lambda: hp.grl_lambda };
        let pd = forward_domain_prob(g, ag.features.features, &ag.theta_d, Some(reversal))?;
        let ld = g.binary_cross_entropy(pd, &batch.domain_labels())?;
        let l_wd = weighted_domain_alignment_loss(g, ld, w)?;
        let value = g.scalar_value(l_wd)?.to_f64_lossy();
        // The reversal turns descent on the weighted BCE into descent on
        // L^wd for the feature extractor.
        let objective = g.neg(l_wd)?;
        let grads = gradient_groups(g, objective, &[&ag.theta_f, &ag.theta_d])?;
        let bundle = &mut state.bundle;
        bundle.update_running_stats(g, &ag.features.bn_nodes)?;
        optimizer_step(&mut bundle.feature, &grads[0], &mut state.adam_f, lr_beta, Direction::Descend)?;
        optimizer_step(&mut bundle.discriminator, &grads[1], &mut state.adam_d, lr_beta, Direction::Descend)?;
        value
    };

    let max_of = |node: NodeId| -> Result<f64> {
        Ok(ag.graph.value(node)?.data().iter().map(|v| v.to_f64_lossy()).fold(0.0, f64::max))
    };
    let max_sample_loss_c = max_of(ag.class_ce)?;
    let max_sample_loss_d = max_of(ag.domain_bce)?;
    let reported = meta_weights.as_ref().unwrap_or(&align_weights);
    let log = StepLog {
        step: state.step,
        lr: lr_beta,
        loss_c,
        loss_mc,
        loss_wd,
        selected: pseudo.selected(),
        selected_meta,
        eta_mean_source: learn.then(|| reported.mean_eta(Domain::Source)).flatten(),
        eta_mean_target: (learn && method != Method::SwlS)
            .then(|| reported.mean_eta(Domain::Target))
            .flatten(),
        weight_sum_source: align_weights.domain_sum(Domain::Source).to_f64_lossy(),
        weight_sum_target: align_weights.domain_sum(Domain::Target).to_f64_lossy(),
        max_sample_loss_c,
        max_sample_loss_d,
    };
    if !(log.loss_c.is_finite() && log.loss_wd.is_finite() && log.loss_mc.map_or(true, f64::is_finite)) {
        return Err(TrainError::NonFinite(format!("losses at step {}", state.step)));
    }
    state.step += 1;
    Ok(StepOutcome {
        log,
        meta_weights,
        align_weights,
    })
}

/// Runs the remaining steps, sampling each mini-batch from the state's RNG.
/// `on_step` sees the state after every update.
pub fn run_training<T: Scalar>(
    state: &mut TrainState<T>,
    source_x: &Tensor<T>,
    source_y: &[usize],
    target_x: &Tensor<T>,
    mut on_step: impl FnMut(&TrainState<T>, &StepOutcome<T>) -> Result<()>,
) -> Result<()> {
    while state.step < state.hp.total_steps {
        let batch = sample_minibatch(&mut state.rng, source_x, source_y, target_x, state.hp.batch_size)?;
        let outcome = training_step(state, &batch)?;
        on_step(state, &outcome)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(super) fn tiny_arch() -> Architecture {
        Architecture {
            in_channels: 2,
            window_len: 8,
            n_classes: 3,
            conv_filters: vec![3, 4, 4],
            conv_kernels: vec![3, 3, 2],
            conv_strides: vec![2, 1, 1],
            disc_hidden: vec![5, 5],
            allocator_hidden: 3,
            ..Architecture::default()
        }
    }

    fn batch(seed: u64, b: usize) -> MiniBatchPair<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = |shift: f64| {
            let data = (0..b * 16).map(|_| rng.gen_range(-1.0..1.0) + shift).collect();
            Tensor::new(vec![b, 2, 8], data).unwrap()
        };
        let source_x = x(0.0);
        let target_x = x(0.3);
        MiniBatchPair {
            source_x,
            source_y: (0..b).map(|i| i % 3).collect(),
            target_x,
        }
    }

    fn state(method: Method, seed: u64) -> TrainState<f64> {
        let hp = Hyperparams {
            batch_size: 4,
            total_steps: 20,
            rho: 0.34,
            ..Hyperparams::default()
        };
        TrainState::new(&tiny_arch(), hp, method, seed).unwrap()
    }

    #[test]
    fn classifier_changes_only_in_phase_one() {
        // The classifier after a full step equals a standalone phase-one update.
        let mut s = state(Method::SwlAdapt, 1);
        let b = batch(2, 4);
        let mut reference = s.clone();
        training_step(&mut s, &b).unwrap();

        let pseudo = assign_pseudo_labels(&reference.bundle, &b.target_x, reference.hp.rho).unwrap();
        let labels: Vec<usize> = b.source_y.iter().chain(&pseudo.labels).copied().collect();
        let mut g = Graph::new();
        let x = g.input(b.stacked().unwrap());
        let tf = g.bind_params(&reference.bundle.feature);
        let tc = g.bind_params(&reference.bundle.classifier);
        let f = forward_features(&mut g, x, &tf, &reference.bundle.arch, BnMode::Train).unwrap();
        let p = forward_class_probs(&mut g, f.features, &tc, &reference.bundle.arch).unwrap();
        let ce = g.cross_entropy(p, &labels).unwrap();
        let l = classification_loss(&mut g, ce, 4, Some(&pseudo.mask)).unwrap();
        let gc = g.gradient_params(l, &tc).unwrap();
        let lr = cosine_lr(0, 20, reference.hp.beta);
        optimizer_step(&mut reference.bundle.classifier, &gc, &mut reference.adam_c, lr, Direction::Descend).unwrap();
        assert_eq!(s.bundle.classifier, reference.bundle.classifier);
    }

    #[test]
    fn steps_are_bit_reproducible() {
        let run = || {
            let mut s = state(Method::SwlAdapt, 7);
            let src = batch(3, 10);
            for _ in 0..10 {
                let mb = sample_minibatch(&mut s.rng, &src.source_x, &src.source_y, &src.target_x, 4).unwrap();
                training_step(&mut s, &mb).unwrap();
            }
            s
        };
        let (a, b) = (run(), run());
        assert_eq!(a.bundle, b.bundle);
        assert_eq!(a.adam_f, b.adam_f);
        assert_eq!(a.adam_w, b.adam_w);
        assert_eq!(a.step, 10);
    }

    #[test]
    fn every_method_runs_and_keeps_weight_sums() {
        for method in Method::ALL {
            let mut s = state(method, 11);
            for i in 0..3 {
                let out = training_step(&mut s, &batch(20 + i, 4)).unwrap();
                assert!((out.log.weight_sum_source - 1.0).abs() < 1e-9);
                assert!((out.log.weight_sum_target - 1.0).abs() < 1e-9);
                assert_eq!(out.meta_weights.is_some(), method != Method::Dann);
                assert_eq!(out.log.eta_mean_source.is_some(), method != Method::Dann);
            }
            assert_eq!(s.bundle.allocator.is_some(), method != Method::Dann);
        }
    }

    #[test]
    fn zero_meta_selection_only_decays_allocator_moments() {
        let mut s = state(Method::SwlAdapt, 5);
        s.hp.rho = 0.999;
        let before = s.bundle.allocator.clone();
        let out = training_step(&mut s, &batch(9, 4)).unwrap();
        assert_eq!(out.log.selected_meta, Some(0));
        assert_eq!(out.log.loss_mc, Some(0.0));
        assert_eq!(s.bundle.allocator, before);
    }

    #[test]
    fn simulated_step_with_zero_rate_is_identity() {
        let s = state(Method::SwlAdapt, 6);
        let b = batch(4, 3);
        let labels: Vec<usize> = vec![0, 1, 2, 0, 1, 2];
        let mut ag = build_alignment_graph(&s.bundle, &b, &labels, Method::SwlAdapt, true, 1.0).unwrap();
        let l = ag.alignment_loss.unwrap();
        let tilde = simulated_alignment_step(&mut ag.graph, l, &ag.theta_f, 0.0).unwrap();
        assert_eq!(values_of(&ag.graph, &tilde).unwrap(), s.bundle.feature);
    }

    #[test]
    fn finished_runs_refuse_more_steps() {
        let mut s = state(Method::Dann, 1);
        s.step = s.hp.total_steps;
        assert!(matches!(training_step(&mut s, &batch(1, 4)), Err(TrainError::Finished(20))));
    }

    #[test]
    fn dann_log_has_no_allocator_fields() {
        let mut s = state(Method::Dann, 2);
        let out = training_step(&mut s, &batch(3, 4)).unwrap();
        let line = serde_json::to_string(&out.log).unwrap();
        assert!(!line.contains("eta") && !line.contains("loss_mc"));
    }
}
