//! Vector-Jacobian products. Every rule is written with graph primitives,
//! so adjoints are themselves differentiable (except through batch-norm
//! statistics).

use super::{AutodiffError, BnPart, Graph, NodeId, Op, Result};
use crate::scalar::Scalar;

impl<T: Scalar> Graph<T> {
    /// Reduces `g` to `shape` if broadcasting widened it.
    fn unbroadcast(&mut self, g: NodeId, shape: &[usize]) -> Result<NodeId> {
        if self.shape(g)? == shape {
            Ok(g)
        } else {
            self.sum_to(g, shape.to_vec())
        }
    }

    pub(super) fn vjp(&mut self, id: NodeId, dy: NodeId, need: &[bool]) -> Result<Vec<Option<NodeId>>> {
        let node = &self.nodes[id.0];
        let op = node.op.clone();
        let p = node.parents.clone();
        let shape_of = |g: &Self, i: usize| -> Result<Vec<usize>> { Ok(g.shape(p[i])?.to_vec()) };
        let one = |g: Option<NodeId>| vec![g];

        Ok(match op {
            Op::Leaf(_) | Op::Detach | Op::PositiveMask | Op::RangeMask(..) => vec![None; p.len()],
            Op::Add => {
                let (sa, sb) = (shape_of(self, 0)?, shape_of(self, 1)?);
                let ga = if need[0] { Some(self.unbroadcast(dy, &sa)?) } else { None };
                let gb = if need[1] { Some(self.unbroadcast(dy, &sb)?) } else { None };
                vec![ga, gb]
            }
            Op::Sub => {
                let (sa, sb) = (shape_of(self, 0)?, shape_of(self, 1)?);
                let ga = if need[0] { Some(self.unbroadcast(dy, &sa)?) } else { None };
                let gb = if need[1] {
                    let n = self.neg(dy)?;
                    Some(self.unbroadcast(n, &sb)?)
                } else {
                    None
                };
                vec![ga, gb]
            }
            Op::Mul => {
                let (sa, sb) = (shape_of(self, 0)?, shape_of(self, 1)?);
                let ga = if need[0] {
                    let t = self.mul(dy, p[1])?;
                    Some(self.unbroadcast(t, &sa)?)
                } else {
                    None
                };
                let gb = if need[1] {
                    let t = self.mul(dy, p[0])?;
                    Some(self.unbroadcast(t, &sb)?)
                } else {
                    None
                };
                vec![ga, gb]
            }
            Op::Div => {
                let (sa, sb) = (shape_of(self, 0)?, shape_of(self, 1)?);
                let ga = if need[0] {
                    let t = self.div(dy, p[1])?;
                    Some(self.unbroadcast(t, &sa)?)
                } else {
                    None
                };
                let gb = if need[1] {
                    // d(a/b)/db = -(a/b)/b
                    let q = self.div(id, p[1])?;
                    let t = self.mul(dy, q)?;
                    let t = self.neg(t)?;
                    Some(self.unbroadcast(t, &sb)?)
                } else {
                    None
                };
                vec![ga, gb]
            }
            Op::Neg => one(Some(self.neg(dy)?)),
            Op::Scale(c) => one(Some(self.scale(dy, c)?)),
            Op::AddScalar(_) => one(Some(dy)),
            Op::Relu => {
                let m = self.positive_mask(p[0])?;
                one(Some(self.mul(dy, m)?))
            }
            Op::Clamp(lo, hi) => {
                let m = self.range_mask(p[0], lo, hi)?;
                one(Some(self.mul(dy, m)?))
            }
            Op::Sigmoid => {
                let neg = self.neg(id)?;
                let q = self.add_scalar(neg, T::one())?;
                let d = self.mul(id, q)?;
                one(Some(self.mul(dy, d)?))
            }
            Op::Softmax => {
                let t = self.mul(dy, id)?;
                let s = self.sum_last_keep(t)?;
                let c = self.sub(dy, s)?;
                one(Some(self.mul(id, c)?))
            }
            Op::Log => one(Some(self.div(dy, p[0])?)),
            Op::MatMul { ta, tb } => {
                let (a, b) = (p[0], p[1]);
                let ga = if need[0] {
                    Some(match (ta, tb) {
                        (false, false) => self.matmul_t(dy, b, false, true)?,
                        (false, true) => self.matmul_t(dy, b, false, false)?,
                        (true, false) => self.matmul_t(b, dy, false, true)?,
                        (true, true) => self.matmul_t(b, dy, true, true)?,
                    })
                } else {
                    None
                };
                let gb = if need[1] {
                    Some(match (ta, tb) {
                        (false, false) => self.matmul_t(a, dy, true, false)?,
                        (false, true) => self.matmul_t(dy, a, true, false)?,
                        (true, false) => self.matmul_t(a, dy, false, false)?,
                        (true, true) => self.matmul_t(dy, a, true, true)?,
                    })
                } else {
                    None
                };
                vec![ga, gb]
            }
            Op::Conv(g) => {
                let gx = if need[0] { Some(self.conv1d_input_grad(g, dy, p[1])?) } else { None };
                let gw = if need[1] { Some(self.conv1d_weight_grad(g, p[0], dy)?) } else { None };
                vec![gx, gw]
            }
            Op::ConvInputGrad(g) => {
                // out = input_grad(d, w), linear in both.
                let gd = if need[0] { Some(self.push(Op::Conv(g), vec![dy, p[1]])?) } else { None };
                let gw = if need[1] { Some(self.conv1d_weight_grad(g, dy, p[0])?) } else { None };
                vec![gd, gw]
            }
            Op::ConvWeightGrad(g) => {
                // out = weight_grad(x, d), linear in both.
                let gx = if need[0] { Some(self.conv1d_input_grad(g, p[1], dy)?) } else { None };
                let gd = if need[1] { Some(self.push(Op::Conv(g), vec![p[0], dy])?) } else { None };
                vec![gx, gd]
            }
            Op::BatchNorm { .. } => self.batch_norm_vjp(id, dy, &p, need)?,
            Op::BnSaved(_) => return Err(AutodiffError::NoSecondDerivative("batch_norm")),
            Op::ConcatLast => {
                let mut out = Vec::with_capacity(p.len());
                let mut start = 0;
                for (i, parent) in p.iter().enumerate() {
                    let w = *self.shape(*parent)?.last().unwrap();
                    out.push(if need[i] { Some(self.slice_last(dy, start, w)?) } else { None });
                    start += w;
                }
                out
            }
            Op::SliceLast { start, .. } => {
                let total = *shape_of(self, 0)?.last().unwrap();
                one(Some(self.pad_last(dy, start, total)?))
            }
            Op::PadLast { start, .. } => {
                let w = *shape_of(self, 0)?.last().unwrap();
                one(Some(self.slice_last(dy, start, w)?))
            }
            Op::Reshape(_) => {
                let s = shape_of(self, 0)?;
                one(Some(self.reshape(dy, s)?))
            }
            Op::SumTo(_) | Op::SumAll => {
                let s = shape_of(self, 0)?;
                one(Some(self.broadcast_to(dy, s)?))
            }
            Op::BroadcastTo(_) => {
                let s = shape_of(self, 0)?;
                one(Some(self.sum_to(dy, s)?))
            }
            Op::GradReverse(lambda) => one(Some(self.scale(dy, -lambda)?)),
        })
    }

    fn batch_norm_vjp(&mut self, id: NodeId, dy: NodeId, p: &[NodeId], need: &[bool]) -> Result<Vec<Option<NodeId>>> {
        let s = self.shape(p[0])?.to_vec();
        let (b, c, l) = (s[0], s[1], s[2]);
        let inv_n = T::one() / T::lit((b * l) as f64);
        let xhat = self.bn_saved(id, BnPart::Normalized)?;
        let dbeta3 = self.sum_to(dy, vec![1, c, 1])?;
        let dyx = self.mul(dy, xhat)?;
        let dgamma3 = self.sum_to(dyx, vec![1, c, 1])?;

        let gx = if need[0] {
            let inv_std = self.bn_saved(id, BnPart::InvStd)?;
            let g3 = self.reshape(p[1], vec![1, c, 1])?;
            let mean_dy = self.scale(dbeta3, inv_n)?;
            let mean_dyx = self.scale(dgamma3, inv_n)?;
            let centered = self.sub(dy, mean_dy)?;
            let proj = self.mul(xhat, mean_dyx)?;
            let inner = self.sub(centered, proj)?;
            let factor = self.mul(g3, inv_std)?;
            Some(self.mul(inner, factor)?)
        } else {
            None
        };
        let gg = if need[1] { Some(self.reshape(dgamma3, vec![c])?) } else { None };
        let gb = if need[2] { Some(self.reshape(dbeta3, vec![c])?) } else { None };
        Ok(vec![gx, gg, gb])
    }
}
