//! Graph-building API: one method per primitive, plus a few composites
//! (dense layers, pooling, losses) expressed in terms of them.

use super::conv::ConvGeom;
use super::kernels::conv_geom_for;
use super::{AutodiffError, BnPart, Graph, NodeId, Op, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Lower/upper guard applied to probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-7;

/// Batch statistics observed by a training-mode batch-norm node.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Tensor<T>,
    /// Biased (population) variance.
    pub var: Tensor<T>,
    /// Number of elements averaged per channel.
    pub count: usize,
}

impl<T: Scalar> Graph<T> {
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Add, vec![a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Sub, vec![a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Mul, vec![a, b])
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Div, vec![a, b])
    }

    pub fn neg(&mut self, x: NodeId) -> Result<NodeId> {
        self.push(Op::Neg, vec![x])
    }

    pub fn scale(&mut self, x: NodeId, c: T) -> Result<NodeId> {
        self.push(Op::Scale(c), vec![x])
    }

    pub fn add_scalar(&mut self, x: NodeId, c: T) -> Result<NodeId> {
        self.push(Op::AddScalar(c), vec![x])
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.push(Op::Relu, vec![x])
    }

    /// 1 where `x > 0`, else 0. Carries no gradient.
    pub fn positive_mask(&mut self, x: NodeId) -> Result<NodeId> {
        self.push(Op::PositiveMask, vec![x])
    }

    /// 1 where `lo <= x <= hi`, else 0. Carries no gradient.
    pub fn range_mask(&mut self, x: NodeId, lo: T, hi: T) -> Result<NodeId> {
        self.push(Op::RangeMask(lo, hi), vec![x])
    }

    pub fn clamp(&mut self, x: NodeId, lo: T, hi: T) -> Result<NodeId> {
        self.push(Op::Clamp(lo, hi), vec![x])
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.push(Op::Sigmoid, vec![x])
    }

    /// Softmax over the last axis (max-shifted).
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        self.push(Op::Softmax, vec![x])
    }

    pub fn log(&mut self, x: NodeId) -> Result<NodeId> {
        self.push(Op::Log, vec![x])
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.matmul_t(a, b, false, false)
    }

    /// `op(a) · op(b)` where `op` optionally transposes a rank-2 operand.
    pub fn matmul_t(&mut self, a: NodeId, b: NodeId, ta: bool, tb: bool) -> Result<NodeId> {
        self.push(Op::MatMul { ta, tb }, vec![a, b])
    }

    /// Dense layer `x · wᵀ + bias` with `w` stored as `[out, in]`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, bias: NodeId) -> Result<NodeId> {
        let xw = self.matmul_t(x, w, false, true)?;
        self.add(xw, bias)
    }

    /// 1-D convolution with "same" zero padding before striding.
    pub fn conv1d(&mut self, x: NodeId, w: NodeId, stride: usize) -> Result<NodeId> {
        let g = conv_geom_for(self.shape(x)?, self.shape(w)?, stride)?;
        self.push(Op::Conv(g), vec![x, w])
    }

    pub(crate) fn conv1d_input_grad(&mut self, g: ConvGeom, dy: NodeId, w: NodeId) -> Result<NodeId> {
        self.push(Op::ConvInputGrad(g), vec![dy, w])
    }

    pub(crate) fn conv1d_weight_grad(&mut self, g: ConvGeom, x: NodeId, dy: NodeId) -> Result<NodeId> {
        self.push(Op::ConvWeightGrad(g), vec![x, dy])
    }

    /// Training-mode batch norm over `[B, C, L]`, normalizing each channel
    /// with statistics over batch and time. Differentiable to first order only.
    pub fn batch_norm_train(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: T) -> Result<NodeId> {
        self.push(Op::BatchNorm { eps }, vec![x, gamma, beta])
    }

    pub(crate) fn bn_saved(&mut self, bn: NodeId, part: BnPart) -> Result<NodeId> {
        self.push(Op::BnSaved(part), vec![bn])
    }

    /// Inference-mode batch norm with fixed running statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running_mean: &Tensor<T>,
        running_var: &Tensor<T>,
        eps: T,
    ) -> Result<NodeId> {
        let c = running_mean.len();
        let mean = self.constant(running_mean.reshaped(vec![1, c, 1])?);
        let inv_std = self.constant(Tensor::new(
            vec![1, c, 1],
            running_var
                .data()
                .iter()
                .map(|&v| T::one() / (v + eps).sqrt())
                .collect(),
        )?);
        let g = self.reshape(gamma, vec![1, c, 1])?;
        let b = self.reshape(beta, vec![1, c, 1])?;
        let centered = self.sub(x, mean)?;
        let normalized = self.mul(centered, inv_std)?;
        let scaled = self.mul(normalized, g)?;
        self.add(scaled, b)
    }

    pub fn concat_last(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(AutodiffError::Shape {
                op: "concat",
                detail: "no operands".into(),
            });
        }
        self.push(Op::ConcatLast, parts.to_vec())
    }

    pub fn slice_last(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        self.push(Op::SliceLast { start, len }, vec![x])
    }

    pub(crate) fn pad_last(&mut self, x: NodeId, start: usize, total: usize) -> Result<NodeId> {
        self.push(Op::PadLast { start, total }, vec![x])
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        self.push(Op::Reshape(shape), vec![x])
    }

    /// Sums broadcast axes away so the result has `shape`.
    pub fn sum_to(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        self.push(Op::SumTo(shape), vec![x])
    }

    pub fn broadcast_to(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        self.push(Op::BroadcastTo(shape), vec![x])
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        self.push(Op::SumAll, vec![x])
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        let n = self.value(x)?.len();
        let s = self.sum(x)?;
        self.scale(s, T::one() / T::lit(n as f64))
    }

    /// Sum over the last axis, keeping it with size 1.
    pub fn sum_last_keep(&mut self, x: NodeId) -> Result<NodeId> {
        let mut shape = self.shape(x)?.to_vec();
        *shape.last_mut().unwrap() = 1;
        self.sum_to(x, shape)
    }

    /// `[B, C, L] -> [B, C]` mean over time.
    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.shape(x)?.to_vec();
        if s.len() != 3 {
            return Err(AutodiffError::Shape {
                op: "global_avg_pool",
                detail: format!("expected [B, C, L], got {s:?}"),
            });
        }
        let summed = self.sum_to(x, vec![s[0], s[1], 1])?;
        let flat = self.reshape(summed, vec![s[0], s[1]])?;
        self.scale(flat, T::one() / T::lit(s[2] as f64))
    }

    /// Stop-gradient: identity forward, zero gradient.
    pub fn detach(&mut self, x: NodeId) -> Result<NodeId> {
        self.push(Op::Detach, vec![x])
    }

    /// Identity forward; multiplies incoming gradients by `-lambda`.
    pub fn grad_reverse(&mut self, x: NodeId, lambda: T) -> Result<NodeId> {
        self.push(Op::GradReverse(lambda), vec![x])
    }

    fn guarded_log(&mut self, p: NodeId) -> Result<NodeId> {
        let lo = T::lit(PROB_FLOOR);
        let clamped = self.clamp(p, lo, T::one() - lo)?;
        self.log(clamped)
    }

    /// Per-sample cross-entropy of probability rows `[B, C]` against integer
    /// targets; returns `[B]`.
    pub fn cross_entropy(&mut self, probs: NodeId, targets: &[usize]) -> Result<NodeId> {
        let shape = self.shape(probs)?.to_vec();
        if shape.len() != 2 || shape[0] != targets.len() {
            return Err(AutodiffError::Shape {
                op: "cross_entropy",
                detail: format!("{} targets for probabilities {:?}", targets.len(), shape),
            });
        }
        let (b, c) = (shape[0], shape[1]);
        let mut onehot = vec![T::zero(); b * c];
        for (i, &t) in targets.iter().enumerate() {
            if t >= c {
                return Err(AutodiffError::Shape {
                    op: "cross_entropy",
                    detail: format!("target {t} out of range for {c} classes"),
                });
            }
            onehot[i * c + t] = T::one();
        }
        let onehot = self.constant(Tensor::new(vec![b, c], onehot)?);
        let logp = self.guarded_log(probs)?;
        let picked = self.mul(onehot, logp)?;
        let rows = self.sum_to(picked, vec![b, 1])?;
        let rows = self.reshape(rows, vec![b])?;
        self.neg(rows)
    }

    /// Per-sample binary cross-entropy of probabilities `[B]` or `[B, 1]`
    /// against 0/1 targets; returns `[B]`.
    pub fn binary_cross_entropy(&mut self, probs: NodeId, targets: &[T]) -> Result<NodeId> {
        let n = self.value(probs)?.len();
        if n != targets.len() {
            return Err(AutodiffError::Shape {
                op: "binary_cross_entropy",
                detail: format!("{} targets for {} probabilities", targets.len(), n),
            });
        }
        let p = self.reshape(probs, vec![n])?;
        let d = self.constant(Tensor::new(vec![n], targets.to_vec())?);
        let one_minus_d = self.constant(Tensor::new(
            vec![n],
            targets.iter().map(|&t| T::one() - t).collect(),
        )?);
        let log_p = self.guarded_log(p)?;
        let neg_p = self.neg(p)?;
        let q = self.add_scalar(neg_p, T::one())?;
        let log_q = self.guarded_log(q)?;
        let a = self.mul(d, log_p)?;
        let b = self.mul(one_minus_d, log_q)?;
        let s = self.add(a, b)?;
        self.neg(s)
    }
}
