//! Finite-difference oracles shared by the integration suites.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use swl_core::training::{
    assign_pseudo_labels, build_alignment_graph, meta_gradient_closed_form, meta_objective, sgd_step,
    simulated_alignment_step, training_step, Direction, Hyperparams, Method, MiniBatchPair, TrainState,
};
use swl_core::networks::{forward_class_probs, forward_domain_prob, forward_features, BnMode};
use swl_core::{Architecture, Graph64, NetworkBundle64, NodeId, ParameterSet, Tensor64};

pub const FD_STEP: f64 = 1e-5;
/// Step of the five-point stencil used by the meta-gradient oracle.
pub const META_FD_STEP: f64 = 3e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor64 {
    let n = shape.iter().product();
    Tensor64::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Uniform in `[-hi, -margin] ∪ [margin, hi]`.
pub fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], margin: f64, hi: f64) -> Tensor64 {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(margin..hi);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor64::new(shape.to_vec(), data).unwrap()
}

/// `sum(y ⊙ R)` for a fixed random `R`, turning any node into a scalar objective.
pub fn random_projection(rng: &mut ChaCha8Rng, g: &mut Graph64, y: NodeId) -> NodeId {
    let shape = g.shape(y).unwrap().to_vec();
    let r = g.constant(uniform(rng, &shape, -1.0, 1.0));
    let p = g.mul(y, r).unwrap();
    g.sum(p).unwrap()
}

/// Central finite differences of `output` with respect to the leaf `target`,
/// by replaying the graph. Restores the original binding afterwards.
pub fn fd_gradient(g: &mut Graph64, output: NodeId, target: NodeId, h: f64) -> Tensor64 {
    let base = g.value(target).unwrap().clone();
    let mut grad = vec![0.0; base.len()];
    for (i, slot) in grad.iter_mut().enumerate() {
        let mut plus = base.clone();
        plus.data_mut()[i] += h;
        let mut minus = base.clone();
        minus.data_mut()[i] -= h;
        let fp = g.evaluate(&[(target, plus)], output).unwrap().item().unwrap();
        let fm = g.evaluate(&[(target, minus)], output).unwrap().item().unwrap();
        *slot = (fp - fm) / (2.0 * h);
    }
    g.evaluate(&[(target, base.clone())], output).unwrap();
    Tensor64::new(base.shape().to_vec(), grad).unwrap()
}

/// Fourth-order (five-point) central differences. Used where the gradient
/// is small relative to the objective and a 1e-5 central step would be
/// dominated by rounding.
pub fn fd_gradient_5pt(g: &mut Graph64, output: NodeId, target: NodeId, h: f64) -> Tensor64 {
    let base = g.value(target).unwrap().clone();
    let mut grad = vec![0.0; base.len()];
    for (i, slot) in grad.iter_mut().enumerate() {
        let mut at = |k: f64| {
            let mut p = base.clone();
            p.data_mut()[i] += k * h;
            g.evaluate(&[(target, p)], output).unwrap().item().unwrap()
        };
        *slot = (-at(2.0) + 8.0 * at(1.0) - 8.0 * at(-1.0) + at(-2.0)) / (12.0 * h);
    }
    g.evaluate(&[(target, base.clone())], output).unwrap();
    Tensor64::new(base.shape().to_vec(), grad).unwrap()
}

/// Norm-wise relative error `|a - b| / max(|a|, |b|)`, with an absolute
/// floor so that two vanishing gradients compare equal.
pub fn rel_err(a: &Tensor64, b: &Tensor64) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let diff: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let scale = a.norm().max(b.norm());
    if scale < 1e-10 {
        diff
    } else {
        diff / scale
    }
}

pub fn rel_err_vec(a: &[f64], b: &[f64]) -> f64 {
    rel_err(
        &Tensor64::vector(a.to_vec()).unwrap(),
        &Tensor64::vector(b.to_vec()).unwrap(),
    )
}

/// A primitive under test: builds a random instance and returns the node to
/// check plus the leaves to differentiate against.
pub type PrimitiveCase = fn(&mut ChaCha8Rng, &mut Graph64) -> (NodeId, Vec<NodeId>);

/// Worst relative error between autodiff and finite differences over
/// `cases` random instances.
pub fn check_primitive(seed: u64, cases: usize, build: PrimitiveCase) -> f64 {
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let mut r = rng(seed * 10_000 + case as u64);
        let mut g = Graph64::new();
        let (y, leaves) = build(&mut r, &mut g);
        let obj = random_projection(&mut r, &mut g, y);
        let grads = g.gradient(obj, &leaves).unwrap();
        for (leaf, grad) in leaves.iter().zip(&grads) {
            let fd = fd_gradient(&mut g, obj, *leaf, FD_STEP);
            worst = worst.max(rel_err(grad, &fd));
        }
    }
    worst
}

/// The per-primitive instance builders used by the gradient oracle suites.
pub fn primitive_cases() -> Vec<(&'static str, PrimitiveCase)> {
    vec![
        ("add", |r, g| {
            let a = g.param("a", uniform(r, &[3, 4], -1.0, 1.0));
            let b = g.param("b", uniform(r, &[4], -1.0, 1.0));
            (g.add(a, b).unwrap(), vec![a, b])
        }),
        ("sub", |r, g| {
            let a = g.param("a", uniform(r, &[2, 3, 4], -1.0, 1.0));
            let b = g.param("b", uniform(r, &[1, 3, 1], -1.0, 1.0));
            (g.sub(a, b).unwrap(), vec![a, b])
        }),
        ("mul", |r, g| {
            let a = g.param("a", uniform(r, &[2, 3, 4], -1.0, 1.0));
            let b = g.param("b", uniform(r, &[3, 1], -1.0, 1.0));
            (g.mul(a, b).unwrap(), vec![a, b])
        }),
        ("div", |r, g| {
            let a = g.param("a", uniform(r, &[3, 4], -1.0, 1.0));
            let b = g.param("b", away_from_zero(r, &[4], 0.5, 2.0));
            (g.div(a, b).unwrap(), vec![a, b])
        }),
        ("neg_scale_shift", |r, g| {
            let a = g.param("a", uniform(r, &[5], -1.0, 1.0));
            let n = g.neg(a).unwrap();
            let s = g.scale(n, 2.5).unwrap();
            (g.add_scalar(s, -0.3).unwrap(), vec![a])
        }),
        ("relu", |r, g| {
            let a = g.param("a", away_from_zero(r, &[4, 6], 1e-3, 2.0));
            (g.relu(a).unwrap(), vec![a])
        }),
        ("sigmoid", |r, g| {
            let a = g.param("a", uniform(r, &[4, 3], -4.0, 4.0));
            (g.sigmoid(a).unwrap(), vec![a])
        }),
        ("softmax", |r, g| {
            let a = g.param("a", uniform(r, &[3, 5], -3.0, 3.0));
            (g.softmax(a).unwrap(), vec![a])
        }),
        ("log", |r, g| {
            let a = g.param("a", uniform(r, &[6], 0.5, 2.0));
            (g.log(a).unwrap(), vec![a])
        }),
        ("clamp", |r, g| {
            let a = g.param("a", uniform(r, &[8], 0.1, 0.9));
            (g.clamp(a, 1e-7, 1.0 - 1e-7).unwrap(), vec![a])
        }),
        ("matmul", |r, g| {
            let ta = r.gen_bool(0.5);
            let tb = r.gen_bool(0.5);
            let (m, k, n) = (3, 4, 2);
            let a_shape = if ta { [k, m] } else { [m, k] };
            let b_shape = if tb { [n, k] } else { [k, n] };
            let a = g.param("a", uniform(r, &a_shape, -1.0, 1.0));
            let b = g.param("b", uniform(r, &b_shape, -1.0, 1.0));
            (g.matmul_t(a, b, ta, tb).unwrap(), vec![a, b])
        }),
        ("linear", |r, g| {
            let x = g.param("x", uniform(r, &[4, 3], -1.0, 1.0));
            let w = g.param("w", uniform(r, &[5, 3], -1.0, 1.0));
            let b = g.param("b", uniform(r, &[5], -1.0, 1.0));
            (g.linear(x, w, b).unwrap(), vec![x, w, b])
        }),
        ("conv1d", |r, g| {
            let stride = r.gen_range(1..=2);
            let k = r.gen_range(1..=5);
            let len = r.gen_range(k.max(3)..=9);
            let x = g.param("x", uniform(r, &[2, 3, len], -1.0, 1.0));
            let w = g.param("w", uniform(r, &[4, 3, k], -1.0, 1.0));
            (g.conv1d(x, w, stride).unwrap(), vec![x, w])
        }),
        ("batch_norm_train", |r, g| {
            let x = g.param("x", uniform(r, &[3, 2, 5], -1.0, 1.0));
            let gamma = g.param("gamma", uniform(r, &[2], 0.5, 1.5));
            let beta = g.param("beta", uniform(r, &[2], -0.5, 0.5));
            (g.batch_norm_train(x, gamma, beta, 1e-5).unwrap(), vec![x, gamma, beta])
        }),
        ("batch_norm_eval", |r, g| {
            let x = g.param("x", uniform(r, &[3, 2, 5], -1.0, 1.0));
            let gamma = g.param("gamma", uniform(r, &[2], 0.5, 1.5));
            let beta = g.param("beta", uniform(r, &[2], -0.5, 0.5));
            let rm = uniform(r, &[2], -0.2, 0.2);
            let rv = uniform(r, &[2], 0.5, 1.5);
            (g.batch_norm_eval(x, gamma, beta, &rm, &rv, 1e-5).unwrap(), vec![x, gamma, beta])
        }),
        ("concat", |r, g| {
            let a = g.param("a", uniform(r, &[3, 2], -1.0, 1.0));
            let b = g.param("b", uniform(r, &[3, 1], -1.0, 1.0));
            (g.concat_last(&[a, b]).unwrap(), vec![a, b])
        }),
        ("slice_reshape", |r, g| {
            let a = g.param("a", uniform(r, &[2, 6], -1.0, 1.0));
            let s = g.slice_last(a, 1, 4).unwrap();
            (g.reshape(s, vec![8]).unwrap(), vec![a])
        }),
        ("sum_mean", |r, g| {
            let a = g.param("a", uniform(r, &[3, 4], -1.0, 1.0));
            let s = g.sum(a).unwrap();
            let m = g.mean(a).unwrap();
            (g.mul(s, m).unwrap(), vec![a])
        }),
        ("sum_to_broadcast", |r, g| {
            let a = g.param("a", uniform(r, &[2, 3, 4], -1.0, 1.0));
            let s = g.sum_to(a, vec![1, 3, 1]).unwrap();
            let sq = g.mul(s, s).unwrap();
            (g.broadcast_to(sq, vec![2, 3, 4]).unwrap(), vec![a])
        }),
        ("global_avg_pool", |r, g| {
            let a = g.param("a", uniform(r, &[2, 3, 7], -1.0, 1.0));
            (g.global_avg_pool(a).unwrap(), vec![a])
        }),
        ("cross_entropy", |r, g| {
            let z = g.param("z", uniform(r, &[4, 3], -2.0, 2.0));
            let p = g.softmax(z).unwrap();
            let targets: Vec<usize> = (0..4).map(|_| r.gen_range(0..3)).collect();
            (g.cross_entropy(p, &targets).unwrap(), vec![z])
        }),
        ("binary_cross_entropy", |r, g| {
            let z = g.param("z", uniform(r, &[5, 1], -3.0, 3.0));
            let p = g.sigmoid(z).unwrap();
            let d: Vec<f64> = (0..5).map(|_| if r.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
            (g.binary_cross_entropy(p, &d).unwrap(), vec![z])
        }),
    ]
}

/// Errors of one random meta-gradient instance.
pub struct MetaCase {
    /// Autodiff allocator gradient against central differences.
    pub fd_err: f64,
    /// Plain-descent allocator increment against the negated closed form.
    pub closed_form_err: f64,
    pub selected: usize,
}

pub fn tiny_architecture(r: &mut ChaCha8Rng) -> Architecture {
    Architecture {
        in_channels: 2,
        window_len: r.gen_range(6..=9),
        n_classes: 3,
        conv_filters: vec![3, 4, r.gen_range(2..=4)],
        conv_kernels: vec![3, 3, 2],
        conv_strides: vec![2, 1, 1],
        disc_hidden: vec![5, 5],
        allocator_hidden: 3,
        ..Architecture::default()
    }
}

pub fn random_batch(r: &mut ChaCha8Rng, arch: &Architecture, b: usize, n_classes: usize) -> MiniBatchPair<f64> {
    let shape = [b, arch.in_channels, arch.window_len];
    MiniBatchPair {
        source_x: uniform(r, &shape, -1.0, 1.0),
        source_y: (0..b).map(|_| r.gen_range(0..n_classes)).collect(),
        target_x: uniform(r, &shape, -0.7, 1.3),
    }
}

fn flat(ts: &[Tensor64]) -> Vec<f64> {
    ts.iter().flat_map(|t| t.data().iter().copied()).collect()
}

/// `sum(slice(v, j))` for a `[n]` node: the scalar `v[j]` as a node.
fn element(g: &mut Graph64, v: NodeId, j: usize) -> NodeId {
    let n = g.shape(v).unwrap().iter().product();
    let row = g.reshape(v, vec![1, n]).unwrap();
    let e = g.slice_last(row, j, 1).unwrap();
    g.sum(e).unwrap()
}

/// Builds a tiny instance (feature dim <= 4, b <= 3) and compares the
/// engine's allocator gradient against finite differences in the allocator
/// parameters and against the closed-form expansion. Returns `None` when no
/// target sample is selected at the simulated parameters.
pub fn meta_case(seed: u64) -> Option<MetaCase> {
    meta_case_with_step(seed, META_FD_STEP)
}

pub fn meta_case_with_step(seed: u64, h: f64) -> Option<MetaCase> {
    let mut r = rng(seed);
    let arch = tiny_architecture(&mut r);
    let b = r.gen_range(1..=3);
    let beta = r.gen_range(0.1..1.0);
    let alpha = r.gen_range(0.1..1.0);
    let rho = r.gen_range(0.3..0.36);
    let bundle = NetworkBundle64::init(&arch, true, &mut r).unwrap();
    let batch = random_batch(&mut r, &arch, b, 3);
    let pseudo: Vec<usize> = (0..b).map(|_| r.gen_range(0..3)).collect();
    let labels: Vec<usize> = batch.source_y.iter().chain(&pseudo).copied().collect();

    let mut ag = build_alignment_graph(&bundle, &batch, &labels, Method::SwlAdapt, true, 1.0).unwrap();
    let theta_w = ag.theta_w.clone().unwrap();
    let w_node = ag.weights.unwrap();
    let l_wd = ag.alignment_loss.unwrap();
    let g = &mut ag.graph;
    let tilde = simulated_alignment_step(g, l_wd, &ag.theta_f, beta).unwrap();

    let mut tilde_net = bundle.clone();
    for (name, id) in &tilde {
        tilde_net.feature.set(name, g.value(*id).unwrap().clone()).unwrap();
    }
    let pseudo_meta = assign_pseudo_labels(&tilde_net, &batch.target_x, rho).unwrap();
    if pseudo_meta.selected() == 0 {
        return None;
    }
    let l_mc = meta_objective(g, &batch.target_x, &tilde, &ag.theta_c, &arch, &pseudo_meta).unwrap();

    let w_ids: Vec<NodeId> = theta_w.values().copied().collect();
    let f_ids: Vec<NodeId> = ag.theta_f.values().copied().collect();
    let tilde_ids: Vec<NodeId> = tilde.values().copied().collect();
    let autodiff = g.gradient(l_mc, &w_ids).unwrap();

    let fd: Vec<Tensor64> = w_ids.iter().map(|id| fd_gradient_5pt(g, l_mc, *id, h)).collect();
    let fd_err = rel_err_vec(&flat(&autodiff), &flat(&fd));

    let s = flat(&g.gradient(l_mc, &tilde_ids).unwrap());
    let n = 2 * b;
    let mut gs = Vec::with_capacity(n);
    let mut as_ = Vec::with_capacity(n);
    for j in 0..n {
        let ld_j = element(g, ag.domain_bce, j);
        gs.push(flat(&g.gradient(ld_j, &f_ids).unwrap()));
        let w_j = element(g, w_node, j);
        as_.push(flat(&g.gradient(w_j, &w_ids).unwrap()));
    }
    let closed = meta_gradient_closed_form(&s, &gs, &as_, alpha, beta, b).unwrap();

    let mut stepped = bundle.allocator.clone().unwrap();
    let mut grads = ParameterSet::new();
    for ((name, _), gr) in theta_w.iter().zip(&autodiff) {
        grads.insert(name.clone(), gr.clone()).unwrap();
    }
    sgd_step(&mut stepped, &grads, alpha, Direction::Descend).unwrap();
    let increment: Vec<f64> = stepped
        .flatten()
        .iter()
        .zip(bundle.allocator.as_ref().unwrap().flatten())
        .map(|(new, old)| new - old)
        .collect();
    let negated: Vec<f64> = closed.iter().map(|v| -v).collect();
    Some(MetaCase {
        fd_err,
        closed_form_err: rel_err_vec(&increment, &negated),
        selected: pseudo_meta.selected(),
    })
}

/// Independent Adam used by the reference DANN (β1 = 0.9, β2 = 0.999, ε = 1e-8).
pub struct RefAdam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl RefAdam {
    pub fn new(p: &ParameterSet<f64>) -> Self {
        let z: Vec<Vec<f64>> = p.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Self { m: z.clone(), v: z, t: 0 }
    }

    /// Moves `p` along `-lr · m̂ / (sqrt(v̂) + ε)` for gradient `sign · grads`.
    pub fn step(&mut self, p: &mut ParameterSet<f64>, grads: &[Tensor64], lr: f64, sign: f64) {
        self.t += 1;
        let names: Vec<String> = p.names().map(str::to_string).collect();
        for (k, name) in names.iter().enumerate() {
            let data = p.get_mut(name).unwrap().data_mut();
            for i in 0..data.len() {
                let g = sign * grads[k].data()[i];
                self.m[k][i] = 0.9 * self.m[k][i] + 0.1 * g;
                self.v[k][i] = 0.999 * self.v[k][i] + 0.001 * g * g;
                let mh = self.m[k][i] / (1.0 - 0.9f64.powi(self.t));
                let vh = self.v[k][i] / (1.0 - 0.999f64.powi(self.t));
                data[i] -= lr * mh / (vh.sqrt() + 1e-8);
            }
        }
    }
}

/// Textbook DANN on the same architecture: mean source cross-entropy, then
/// the mean domain BCE over both domains scaled by `domain_scale`, with the
/// feature extractor ascending and the discriminator descending it.
pub struct ReferenceDann {
    pub net: NetworkBundle64,
    adam_f: RefAdam,
    adam_c: RefAdam,
    adam_d: RefAdam,
    pub domain_scale: f64,
    pub total_steps: usize,
    pub lr: f64,
    pub step: usize,
}

impl ReferenceDann {
    pub fn new(net: NetworkBundle64, domain_scale: f64, total_steps: usize, lr: f64) -> Self {
        Self {
            adam_f: RefAdam::new(&net.feature),
            adam_c: RefAdam::new(&net.classifier),
            adam_d: RefAdam::new(&net.discriminator),
            net,
            domain_scale,
            total_steps,
            lr,
            step: 0,
        }
    }

    fn fold_running_stats(&mut self, g: &Graph64, bn_nodes: &[NodeId]) {
        for (i, node) in bn_nodes.iter().enumerate() {
            let stats = g.batch_stats(*node).unwrap();
            let n = stats.count as f64;
            let rm = self.net.running.get_mut(&format!("bn{i}.running_mean")).unwrap();
            for (r, m) in rm.data_mut().iter_mut().zip(stats.mean.data()) {
                *r = 0.9 * *r + 0.1 * m;
            }
            let rv = self.net.running.get_mut(&format!("bn{i}.running_var")).unwrap();
            for (r, v) in rv.data_mut().iter_mut().zip(stats.var.data()) {
                *r = 0.9 * *r + 0.1 * v * n / (n - 1.0);
            }
        }
    }

    pub fn step(&mut self, batch: &MiniBatchPair<f64>) {
        let lr = self.lr * 0.5 * (1.0 + (std::f64::consts::PI * self.step as f64 / self.total_steps as f64).cos());
        let b = batch.source_y.len();
        let x_all = Tensor64::concat_rows(&[&batch.source_x, &batch.target_x]).unwrap();
        let arch = self.net.arch.clone();

        let mut g = Graph64::new();
        let x = g.input(x_all.clone());
        let tf = g.bind_params(&self.net.feature);
        let tc = g.bind_params(&self.net.classifier);
        let f = forward_features(&mut g, x, &tf, &arch, BnMode::Train).unwrap();
        let p = forward_class_probs(&mut g, f.features, &tc, &arch).unwrap();
        let src = g.reshape(p, vec![1, 2 * b * arch.n_classes]).unwrap();
        let src = g.slice_last(src, 0, b * arch.n_classes).unwrap();
        let src = g.reshape(src, vec![b, arch.n_classes]).unwrap();
        let ce = g.cross_entropy(src, &batch.source_y).unwrap();
        let loss = g.mean(ce).unwrap();
        let ids: Vec<NodeId> = tf.values().chain(tc.values()).copied().collect();
        let mut grads = g.gradient(loss, &ids).unwrap();
        let gc = grads.split_off(tf.len());
        self.fold_running_stats(&g, &f.bn_nodes);
        self.adam_f.step(&mut self.net.feature, &grads, lr, 1.0);
        self.adam_c.step(&mut self.net.classifier, &gc, lr, 1.0);

        let mut g = Graph64::new();
        let x = g.input(x_all);
        let tf = g.bind_params(&self.net.feature);
        let td = g.bind_params(&self.net.discriminator);
        let f = forward_features(&mut g, x, &tf, &arch, BnMode::Train).unwrap();
        let pd = forward_domain_prob(&mut g, f.features, &td, None).unwrap();
        let d: Vec<f64> = (0..2 * b).map(|i| if i < b { 0.0 } else { 1.0 }).collect();
        let bce = g.binary_cross_entropy(pd, &d).unwrap();
        let mean = g.mean(bce).unwrap();
        let loss = g.scale(mean, self.domain_scale).unwrap();
        let ids: Vec<NodeId> = tf.values().chain(td.values()).copied().collect();
        let mut grads = g.gradient(loss, &ids).unwrap();
        let gd = grads.split_off(tf.len());
        self.fold_running_stats(&g, &f.bn_nodes);
        self.adam_f.step(&mut self.net.feature, &grads, lr, -1.0);
        self.adam_d.step(&mut self.net.discriminator, &gd, lr, 1.0);
        self.step += 1;
    }
}

/// Max absolute deviation between the training loop (constant allocator
/// output `eta`, no pseudo-label term) and the reference DANN over `steps`
/// steps, checked after every step across θ_f, θ_c, θ_d and BN statistics.
pub fn dann_reduction_deviation(method: Method, eta: Option<f64>, steps: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let arch = Architecture {
        in_channels: 3,
        window_len: 16,
        n_classes: 3,
        conv_filters: vec![6, 8, 5],
        disc_hidden: vec![7, 7],
        ..Architecture::default()
    };
    let b = 4;
    let hp = Hyperparams {
        batch_size: b,
        total_steps: steps,
        ..Hyperparams::default()
    };
    let mut state = TrainState::<f64>::new(&arch, hp, method, seed).unwrap();
    state.allocator_override = eta;
    state.pseudo_label_term = false;
    let mut reference = ReferenceDann::new(state.bundle.clone(), 1.0 / b as f64, steps, state.hp.beta);
    let mut worst: f64 = 0.0;
    for _ in 0..steps {
        let batch = random_batch(&mut r, &arch, b, 3);
        training_step(&mut state, &batch).unwrap();
        reference.step(&batch);
        for (a, b) in [
            (&state.bundle.feature, &reference.net.feature),
            (&state.bundle.classifier, &reference.net.classifier),
            (&state.bundle.discriminator, &reference.net.discriminator),
            (&state.bundle.running, &reference.net.running),
        ] {
            worst = worst.max(a.max_abs_diff(b).unwrap());
        }
    }
    worst
}
