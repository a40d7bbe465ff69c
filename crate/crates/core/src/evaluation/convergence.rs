use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{EvalError, Result};
use crate::networks::NetworkBundle;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::training::{weights_from_eta, Method, TrainState};
use crate::Domain;

/// Probes per domain used for weight-change tracking.
pub const PROBES_PER_DOMAIN: usize = 10;

/// Mean and population standard deviation of `|w_now - w_prev|`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightChange {
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// Number of completed training steps.
    pub step: usize,
    pub test_loss: f64,
    /// Absent on the first record.
    pub source_change: Option<WeightChange>,
    pub target_change: Option<WeightChange>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTrace {
    pub interval: usize,
    pub source_probes: usize,
    pub target_probes: usize,
    pub records: Vec<TraceRecord>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl ConvergenceTrace {
    /// Mean test loss over records whose step lies in `[from, to)`.
    pub fn mean_test_loss(&self, from: usize, to: usize) -> Option<f64> {
        mean(self.records.iter().filter(|r| (from..to).contains(&r.step)).map(|r| r.test_loss))
    }

    /// Mean weight change of one domain over a record index range.
    pub fn mean_change(&self, domain: Domain, records: std::ops::Range<usize>) -> Option<f64> {
        let slice = self.records.get(records)?;
        mean(slice.iter().filter_map(|r| match domain {
            Domain::Source => r.source_change.map(|c| c.mean),
            Domain::Target => r.target_change.map(|c| c.mean),
        }))
    }

    /// CSV with header `step,test_loss,source_mean,source_std,target_mean,target_std`;
    /// change columns are empty on the first record.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "test_loss", "source_mean", "source_std", "target_mean", "target_std"])?;
        let cell = |c: Option<WeightChange>, f: fn(WeightChange) -> f64| c.map(|c| f(c).to_string()).unwrap_or_default();
        for r in &self.records {
            w.write_record([
                r.step.to_string(),
                r.test_loss.to_string(),
                cell(r.source_change, |c| c.mean),
                cell(r.source_change, |c| c.std),
                cell(r.target_change, |c| c.mean),
                cell(r.target_change, |c| c.std),
            ])?;
        }
        w.flush().map_err(|e| EvalError::Io(e.to_string()))?;
        Ok(())
    }
}

/// Fixed windows whose sample weights are recomputed at every interval.
#[derive(Clone, Debug)]
pub struct ProbeSet<T> {
    pub source_x: Tensor<T>,
    pub source_y: Vec<usize>,
    pub target_x: Tensor<T>,
}

/// Eval-mode sample weights of the probes. Allocator inputs mirror training:
/// source rows use their labels, target rows their argmax pseudo-labels.
/// Methods without an allocator get uniform weights.
pub fn probe_weights<T: Scalar>(
    bundle: &NetworkBundle<T>,
    method: Method,
    tau: f64,
    probes: &ProbeSet<T>,
) -> Result<Vec<T>> {
    let ns = probes.source_y.len();
    let nt = probes.target_x.shape()[0];
    let domains: Vec<Domain> = std::iter::repeat(Domain::Source)
        .take(ns)
        .chain(std::iter::repeat(Domain::Target).take(nt))
        .collect();
    let eta: Vec<T> = match &bundle.allocator {
        Some(theta_w) if method.uses_allocator() => {
            let x = Tensor::concat_rows(&[&probes.source_x, &probes.target_x])?;
            let probs = bundle.class_probs(&x)?;
            let dom = bundle.domain_probs(&x)?;
            let n_c = probs.shape()[1];
            let guard = |p: f64| p.clamp(1e-7, 1.0 - 1e-7);
            let mut rows = Vec::with_capacity(2 * (ns + nt));
            for i in 0..ns + nt {
                let row = &probs.data()[i * n_c..(i + 1) * n_c];
                let label = if i < ns {
                    probes.source_y[i]
                } else {
                    (0..n_c).max_by(|&a, &b| row[a].to_f64_lossy().total_cmp(&row[b].to_f64_lossy()).then(b.cmp(&a))).unwrap_or(0)
                };
                let l_c = -guard(row[label].to_f64_lossy()).ln();
                let p_d = guard(dom.data()[i].to_f64_lossy());
                let l_d = if i < ns { -(1.0 - p_d).ln() } else { -p_d.ln() };
                rows.extend(super::allocator_row(method, l_c, l_d).into_iter().map(T::lit));
            }
            let width = method.allocator_inputs();
            crate::networks::allocator_eta(theta_w, &Tensor::new(vec![ns + nt, width], rows)?)?.into_data()
        }
        _ => vec![T::one(); ns + nt],
    };
    Ok(weights_from_eta(&eta, &domains, method, tau)?.weights)
}

/// Mean cross-entropy of eval-mode predictions against true labels.
pub fn mean_cross_entropy<T: Scalar>(bundle: &NetworkBundle<T>, x: &Tensor<T>, y: &[usize]) -> Result<f64> {
    let probs = bundle.class_probs(x)?;
    let n_c = probs.shape()[1];
    if y.is_empty() || y.len() != probs.shape()[0] {
        return Err(EvalError::LengthMismatch(y.len(), probs.shape()[0]));
    }
    let total: f64 = y
        .iter()
        .enumerate()
        .map(|(i, &k)| -probs.data()[i * n_c + k].to_f64_lossy().clamp(1e-7, 1.0 - 1e-7).ln())
        .sum();
    Ok(total / y.len() as f64)
}

fn change(now: &[f64], prev: &[f64]) -> Option<WeightChange> {
    if now.is_empty() {
        return None;
    }
    let d: Vec<f64> = now.iter().zip(prev).map(|(a, b)| (a - b).abs()).collect();
    let n = d.len() as f64;
    let m = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    Some(WeightChange { mean: m, std: var.sqrt() })
}

/// Records test loss and probe weight changes every `interval` steps.
#[derive(Clone, Debug)]
pub struct ConvergenceTracker<T> {
    probes: ProbeSet<T>,
    test_x: Tensor<T>,
    test_y: Vec<usize>,
    previous: Option<Vec<f64>>,
    trace: ConvergenceTrace,
}

impl<T: Scalar> ConvergenceTracker<T> {
    pub fn new(interval: usize, probes: ProbeSet<T>, test_x: Tensor<T>, test_y: Vec<usize>) -> Result<Self> {
        if interval == 0 {
            return Err(EvalError::InvalidResolution(0));
        }
        let trace = ConvergenceTrace {
            interval,
            source_probes: probes.source_y.len(),
            target_probes: probes.target_x.shape()[0],
            records: Vec::new(),
        };
        Ok(Self {
            probes,
            test_x,
            test_y,
            previous: None,
            trace,
        })
    }

    /// Records a sample when the state has completed a multiple of
    /// `interval` steps. Returns whether a record was added.
    pub fn observe(&mut self, state: &TrainState<T>) -> Result<bool> {
        if state.step == 0 || state.step % self.trace.interval != 0 {
            return Ok(false);
        }
        let test_loss = mean_cross_entropy(&state.bundle, &self.test_x, &self.test_y)?;
        let w: Vec<f64> = probe_weights(&state.bundle, state.method, state.hp.tau, &self.probes)?
            .into_iter()
            .map(Scalar::to_f64_lossy)
            .collect();
        let ns = self.trace.source_probes;
        let (source_change, target_change) = match &self.previous {
            Some(prev) => (change(&w[..ns], &prev[..ns]), change(&w[ns..], &prev[ns..])),
            None => (None, None),
        };
        self.trace.records.push(TraceRecord {
            step: state.step,
            test_loss,
            source_change,
            target_change,
        });
        self.previous = Some(w);
        Ok(true)
    }

    pub fn trace(&self) -> &ConvergenceTrace {
        &self.trace
    }

    pub fn into_trace(self) -> ConvergenceTrace {
        self.trace
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::Architecture;
    use crate::training::Hyperparams;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn arch() -> Architecture {
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

    fn tensor(n: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(vec![n, 2, 8], (0..n * 16).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn tracker() -> ConvergenceTracker<f64> {
        let probes = ProbeSet {
            source_x: tensor(10, 1),
            source_y: (0..10).map(|i| i % 3).collect(),
            target_x: tensor(10, 2),
        };
        ConvergenceTracker::new(10, probes, tensor(12, 3), (0..12).map(|i| i % 3).collect()).unwrap()
    }

    fn state(steps: usize) -> TrainState<f64> {
        let hp = Hyperparams {
            batch_size: 4,
            total_steps: steps,
            ..Hyperparams::default()
        };
        TrainState::new(&arch(), hp, Method::SwlAdapt, 3).unwrap()
    }

    #[test]
    fn hundred_steps_give_ten_records_and_first_has_no_change() {
        let mut s = state(100);
        let (sx, tx) = (tensor(20, 5), tensor(20, 6));
        let sy: Vec<usize> = (0..20).map(|i| i % 3).collect();
        let mut tr = tracker();
        crate::training::run_training(&mut s, &sx, &sy, &tx, |st, _| {
            tr.observe(st).map(|_| ()).map_err(|e| crate::training::TrainError::InvalidInput(e.to_string()))
        })
        .unwrap();
        let trace = tr.into_trace();
        assert_eq!(trace.records.len(), 10);
        assert!(trace.records[0].source_change.is_none() && trace.records[0].target_change.is_none());
        for r in &trace.records[1..] {
            let (s, t) = (r.source_change.unwrap(), r.target_change.unwrap());
            assert!(s.mean >= 0.0 && t.mean >= 0.0 && s.std >= 0.0);
        }
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 11);
    }

    #[test]
    fn frozen_parameters_give_zero_change() {
        let mut s = state(100);
        let mut tr = tracker();
        s.step = 10;
        assert!(tr.observe(&s).unwrap());
        s.step = 15;
        assert!(!tr.observe(&s).unwrap());
        s.step = 20;
        assert!(tr.observe(&s).unwrap());
        let r = &tr.trace().records[1];
        assert_eq!(r.source_change, Some(WeightChange { mean: 0.0, std: 0.0 }));
        assert_eq!(r.target_change, Some(WeightChange { mean: 0.0, std: 0.0 }));
        assert_eq!(r.test_loss, tr.trace().records[0].test_loss);
    }

    #[test]
    fn probe_weights_sum_to_one_per_domain() {
        let s = state(10);
        let probes = tracker().probes;
        for method in [Method::SwlAdapt, Method::Dann, Method::SwlS] {
            let w = probe_weights(&s.bundle, method, 1.0, &probes).unwrap();
            let (a, b) = w.split_at(10);
            assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
