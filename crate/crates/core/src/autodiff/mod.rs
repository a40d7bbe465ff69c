//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] records primitives as they are built and evaluates them
//! eagerly whenever all inputs are bound. Gradients are themselves emitted
//! as graph nodes ([`Graph::gradient_nodes`]), so an expression built from
//! a gradient can be differentiated again. [`Graph::gradient`] is the
//! value-only convenience that discards the adjoint nodes afterwards.
//!
//! Differentiation only visits nodes that are both ancestors of the
//! objective and descendants of a target. Batch-norm saves its
//! normalized activations as first-order-only nodes: reaching one of them
//! during differentiation is an error rather than a silently missing term.

mod conv;
mod kernels;
mod ops;
mod vjp;

pub use conv::ConvGeom;
pub use ops::BatchStats;

use crate::scalar::Scalar;
use crate::tensor::{ParameterSet, Tensor, TensorError};
use indexmap::IndexMap;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("non-finite value produced by {op} (node {node})")]
    NonFinite { op: &'static str, node: usize },
    #[error("input node {0} is unbound")]
    Unbound(usize),
    #[error("objective must have shape [1], got {0:?}")]
    NonScalarObjective(Vec<usize>),
    #[error("{0} has no registered second derivative")]
    NoSecondDerivative(&'static str),
    #[error("node {0} is not a leaf")]
    NotALeaf(usize),
    #[error("node {0} does not belong to this graph")]
    InvalidNode(usize),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T, E = AutodiffError> = std::result::Result<T, E>;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LeafKind {
    Input,
    Param,
    Constant,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum BnPart {
    Normalized,
    InvStd,
}

#[derive(Clone, Debug)]
pub(crate) enum Op<T> {
    Leaf(LeafKind),
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Scale(T),
    AddScalar(T),
    Relu,
    PositiveMask,
    RangeMask(T, T),
    Clamp(T, T),
    Sigmoid,
    Softmax,
    Log,
    MatMul { ta: bool, tb: bool },
    Conv(ConvGeom),
    ConvInputGrad(ConvGeom),
    ConvWeightGrad(ConvGeom),
    BatchNorm { eps: T },
    BnSaved(BnPart),
    ConcatLast,
    SliceLast { start: usize, len: usize },
    PadLast { start: usize, total: usize },
    Reshape(Vec<usize>),
    SumTo(Vec<usize>),
    BroadcastTo(Vec<usize>),
    SumAll,
    Detach,
    GradReverse(T),
}

impl<T> Op<T> {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf(_) => "leaf",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Neg => "neg",
            Op::Scale(_) => "scale",
            Op::AddScalar(_) => "add_scalar",
            Op::Relu => "relu",
            Op::PositiveMask => "positive_mask",
            Op::RangeMask(..) => "range_mask",
            Op::Clamp(..) => "clamp",
            Op::Sigmoid => "sigmoid",
            Op::Softmax => "softmax",
            Op::Log => "log",
            Op::MatMul { .. } => "matmul",
            Op::Conv(_) => "conv1d",
            Op::ConvInputGrad(_) => "conv1d_input_grad",
            Op::ConvWeightGrad(_) => "conv1d_weight_grad",
            Op::BatchNorm { .. } => "batch_norm",
            Op::BnSaved(_) => "batch_norm_statistics",
            Op::ConcatLast => "concat",
            Op::SliceLast { .. } => "slice",
            Op::PadLast { .. } => "pad",
            Op::Reshape(_) => "reshape",
            Op::SumTo(_) => "sum_to",
            Op::BroadcastTo(_) => "broadcast_to",
            Op::SumAll => "sum",
            Op::Detach => "detach",
            Op::GradReverse(_) => "grad_reverse",
        }
    }

    /// Ops whose output carries no gradient back to their inputs.
    fn blocks_gradient(&self) -> bool {
        matches!(
            self,
            Op::Detach | Op::PositiveMask | Op::RangeMask(..) | Op::Leaf(_)
        )
    }
}

/// Saved batch-norm intermediates.
#[derive(Clone, Debug)]
pub(crate) struct BnAux<T> {
    pub normalized: Tensor<T>,
    pub inv_std: Tensor<T>,
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

#[derive(Clone, Debug)]
pub(crate) struct Node<T> {
    pub op: Op<T>,
    pub parents: Vec<NodeId>,
    pub value: Option<Tensor<T>>,
    pub aux: Option<BnAux<T>>,
    pub name: Option<String>,
}

/// An expression graph. Parents always precede children.
#[derive(Clone, Debug, Default)]
pub struct Graph<T> {
    pub(crate) nodes: Vec<Node<T>>,
}

/// Graph nodes bound to a named parameter set.
pub type ParamNodes = IndexMap<String, NodeId>;

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn node(&self, id: NodeId) -> Result<&Node<T>> {
        self.nodes.get(id.0).ok_or(AutodiffError::InvalidNode(id.0))
    }

    /// Current value of a node.
    pub fn value(&self, id: NodeId) -> Result<&Tensor<T>> {
        self.node(id)?
            .value
            .as_ref()
            .ok_or(AutodiffError::Unbound(id.0))
    }

    /// Leaf kind of a node, or `None` for computed nodes.
    pub fn leaf_kind(&self, id: NodeId) -> Option<LeafKind> {
        match self.nodes.get(id.0)?.op {
            Op::Leaf(kind) => Some(kind),
            _ => None,
        }
    }

    pub fn node_name(&self, id: NodeId) -> Option<&str> {
        self.nodes.get(id.0)?.name.as_deref()
    }

    /// Primitive name of a node (`"conv1d"`, `"leaf"`, ...).
    pub fn op_name(&self, id: NodeId) -> Option<&'static str> {
        Some(self.nodes.get(id.0)?.op.name())
    }

    pub fn shape(&self, id: NodeId) -> Result<&[usize]> {
        Ok(self.value(id)?.shape())
    }

    pub fn scalar_value(&self, id: NodeId) -> Result<T> {
        let v = self.value(id)?;
        v.item()
            .ok_or_else(|| AutodiffError::NonScalarObjective(v.shape().to_vec()))
    }

    /// Batch statistics (mean, biased variance) saved by a batch-norm node.
    pub fn batch_stats(&self, id: NodeId) -> Option<BatchStats<T>> {
        let aux = self.nodes.get(id.0)?.aux.as_ref()?;
        Some(BatchStats {
            mean: aux.mean.clone(),
            var: aux.var.clone(),
            count: {
                let s = aux.normalized.shape();
                s[0] * s[2]
            },
        })
    }

    fn leaf(&mut self, kind: LeafKind, value: Option<Tensor<T>>, name: Option<String>) -> NodeId {
        self.nodes.push(Node {
            op: Op::Leaf(kind),
            parents: Vec::new(),
            value,
            aux: None,
            name,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Tensor<T>) -> NodeId {
        self.leaf(LeafKind::Input, Some(value), None)
    }

    /// A named input without a value; bind it later through [`Graph::evaluate`].
    pub fn placeholder(&mut self, name: &str) -> NodeId {
        self.leaf(LeafKind::Input, None, Some(name.to_string()))
    }

    pub fn param(&mut self, name: &str, value: Tensor<T>) -> NodeId {
        self.leaf(LeafKind::Param, Some(value), Some(name.to_string()))
    }

    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.leaf(LeafKind::Constant, Some(value), None)
    }

    /// Adds one parameter leaf per entry, preserving order.
    pub fn bind_params(&mut self, params: &ParameterSet<T>) -> ParamNodes {
        params
            .iter()
            .map(|(name, t)| (name.to_string(), self.param(name, t.clone())))
            .collect()
    }

    pub(crate) fn push(&mut self, op: Op<T>, parents: Vec<NodeId>) -> Result<NodeId> {
        for p in &parents {
            if p.0 >= self.nodes.len() {
                return Err(AutodiffError::InvalidNode(p.0));
            }
        }
        let id = self.nodes.len();
        let ready = parents.iter().all(|p| self.nodes[p.0].value.is_some());
        let (value, aux) = if ready {
            let (v, aux) = self.compute(&op, &parents, id)?;
            (Some(v), aux)
        } else {
            (None, None)
        };
        self.nodes.push(Node {
            op,
            parents,
            value,
            aux,
            name: None,
        });
        Ok(NodeId(id))
    }

    fn compute(
        &self,
        op: &Op<T>,
        parents: &[NodeId],
        id: usize,
    ) -> Result<(Tensor<T>, Option<BnAux<T>>)> {
        let vals: Vec<&Tensor<T>> = parents
            .iter()
            .map(|p| self.value(*p))
            .collect::<Result<_>>()?;
        let parent_aux = parents.first().and_then(|p| self.nodes[p.0].aux.as_ref());
        let (value, aux) = kernels::compute(op, &vals, parent_aux)?;
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite {
                op: op.name(),
                node: id,
            });
        }
        Ok((value, aux))
    }

    /// Rebinds leaves and re-evaluates every node in topological order,
    /// returning the value of `output`.
    pub fn evaluate(&mut self, bindings: &[(NodeId, Tensor<T>)], output: NodeId) -> Result<Tensor<T>> {
        for (id, value) in bindings {
            let node = self
                .nodes
                .get_mut(id.0)
                .ok_or(AutodiffError::InvalidNode(id.0))?;
            if !matches!(node.op, Op::Leaf(_)) {
                return Err(AutodiffError::NotALeaf(id.0));
            }
            if let Some(old) = &node.value {
                if old.shape() != value.shape() {
                    return Err(AutodiffError::Shape {
                        op: "bind",
                        detail: format!("expected {:?}, got {:?}", old.shape(), value.shape()),
                    });
                }
            }
            node.value = Some(value.clone());
        }
        self.node(output)?;
        for i in 0..self.nodes.len() {
            if let Op::Leaf(_) = self.nodes[i].op {
                continue;
            }
            let op = self.nodes[i].op.clone();
            let parents = self.nodes[i].parents.clone();
            let (v, aux) = self.compute(&op, &parents, i)?;
            self.nodes[i].value = Some(v);
            self.nodes[i].aux = aux;
        }
        Ok(self.value(output)?.clone())
    }

    /// Emits `d output / d target` for each target as graph nodes.
    ///
    /// Targets not reachable from `output` receive constant zero nodes.
    pub fn gradient_nodes(&mut self, output: NodeId, targets: &[NodeId]) -> Result<Vec<NodeId>> {
        let out_shape = self.shape(output)?.to_vec();
        if out_shape != [1] {
            return Err(AutodiffError::NonScalarObjective(out_shape));
        }
        for t in targets {
            self.node(*t)?;
        }
        let n = output.0 + 1;
        let mut relevant = vec![false; n];
        for t in targets {
            if t.0 < n {
                relevant[t.0] = true;
            }
        }
        for i in 0..n {
            if relevant[i] || self.nodes[i].op.blocks_gradient() {
                continue;
            }
            relevant[i] = self.nodes[i].parents.iter().any(|p| relevant[p.0]);
        }

        let mut adjoint: Vec<Option<NodeId>> = vec![None; n];
        if relevant[output.0] {
            adjoint[output.0] = Some(self.constant(Tensor::scalar(T::one())));
        }
        for i in (0..n).rev() {
            let Some(dy) = adjoint[i] else { continue };
            if !relevant[i] || matches!(self.nodes[i].op, Op::Leaf(_)) {
                continue;
            }
            let parents = self.nodes[i].parents.clone();
            let need: Vec<bool> = parents.iter().map(|p| relevant[p.0]).collect();
            if !need.iter().any(|&b| b) {
                continue;
            }
            let grads = self.vjp(NodeId(i), dy, &need)?;
            for ((p, g), needed) in parents.iter().zip(grads).zip(need) {
                let (true, Some(g)) = (needed, g) else { continue };
                adjoint[p.0] = Some(match adjoint[p.0] {
                    None => g,
                    Some(acc) => self.add(acc, g)?,
                });
            }
        }

        targets
            .iter()
            .map(|t| match adjoint.get(t.0).copied().flatten() {
                Some(g) => Ok(g),
                None => {
                    let shape = self.shape(*t)?.to_vec();
                    Ok(self.constant(Tensor::zeros(shape)?))
                }
            })
            .collect()
    }

    /// Gradient values of `output` with respect to `targets`. Adjoint nodes
    /// created along the way are dropped before returning.
    pub fn gradient(&mut self, output: NodeId, targets: &[NodeId]) -> Result<Vec<Tensor<T>>> {
        let mark = self.nodes.len();
        let result = self.gradient_nodes(output, targets).and_then(|ids| {
            ids.iter()
                .map(|id| self.value(*id).cloned())
                .collect::<Result<Vec<_>>>()
        });
        self.nodes.truncate(mark);
        let grads = result?;
        for (g, t) in grads.iter().zip(targets) {
            if !g.is_finite() {
                return Err(AutodiffError::NonFinite {
                    op: "gradient",
                    node: t.0,
                });
            }
        }
        Ok(grads)
    }

    /// Gradient values keyed by parameter name.
    pub fn gradient_params(&mut self, output: NodeId, params: &ParamNodes) -> Result<ParameterSet<T>> {
        let ids: Vec<NodeId> = params.values().copied().collect();
        let grads = self.gradient(output, &ids)?;
        let mut out = ParameterSet::new();
        for (name, g) in params.keys().zip(grads) {
            out.insert(name.clone(), g)?;
        }
        Ok(out)
    }
}
