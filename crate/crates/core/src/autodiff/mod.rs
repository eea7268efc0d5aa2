//! Reverse-mode automatic differentiation over a per-step tape.
//!
//! A [`Graph`] records every operation as it executes. Values live in the graph and are addressed
//! by [`Var`] handles. [`Graph::backward`] walks the record in exact reverse order and accumulates
//! gradients into every node that requires them. A graph is built for one training step and then
//! dropped or [`cleared`](Graph::clear).

mod broadcast;
mod ops;

use std::fmt;

use crate::error::{Error, Result};
use crate::kernels::conv::{self, ConvSpec};
use crate::kernels::norm::{self, NormCache, NormKind};
use crate::kernels::pool::{self, PoolSpec};
use crate::kernels::resize;
use crate::tensor::{Scalar, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum BinaryKind {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum UnaryKind {
    Abs,
    Relu,
    Sigmoid,
}

pub(crate) enum Op<T> {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: ConvSpec,
    },
    Resize {
        x: Var,
    },
    Pool {
        x: Var,
        spec: PoolSpec,
        argmax: Option<Vec<usize>>,
    },
    Norm {
        x: Var,
        scale: Var,
        shift: Var,
        kind: NormKind,
        cache: NormCache<T>,
    },
    Binary {
        a: Var,
        b: Var,
        kind: BinaryKind,
    },
    Unary {
        x: Var,
        kind: UnaryKind,
    },
    Affine {
        x: Var,
        mul: T,
    },
    Concat {
        parts: Vec<Var>,
    },
    ChannelMean {
        x: Var,
    },
    Sum {
        x: Var,
    },
    Mean {
        x: Var,
    },
    /// `w_i * x_i`, the per-item terms of a linear combination of scalars.
    Combine {
        terms: Vec<(Var, T)>,
    },
    WeightedBce {
        logits: Var,
        target: Tensor<T>,
        weight: Option<Tensor<T>>,
    },
    WeightedIou {
        logits: Var,
        target: Tensor<T>,
        weight: Option<Tensor<T>>,
    },
    Dice {
        logits: Var,
        target: Tensor<T>,
        eps: T,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv { .. } => "conv2d",
            Op::Resize { .. } => "resize_bilinear",
            Op::Pool { .. } => "pool2d",
            Op::Norm { .. } => "normalize",
            Op::Binary { kind, .. } => match kind {
                BinaryKind::Add => "add",
                BinaryKind::Sub => "sub",
                BinaryKind::Mul => "mul",
            },
            Op::Unary { kind, .. } => match kind {
                UnaryKind::Abs => "abs",
                UnaryKind::Relu => "relu",
                UnaryKind::Sigmoid => "sigmoid",
            },
            Op::Affine { .. } => "affine",
            Op::Concat { .. } => "channel_concat",
            Op::ChannelMean { .. } => "channel_mean",
            Op::Sum { .. } => "sum",
            Op::Mean { .. } => "mean",
            Op::Combine { .. } => "combine",
            Op::WeightedBce { .. } => "bce_with_logits",
            Op::WeightedIou { .. } => "weighted_iou",
            Op::Dice { .. } => "dice",
        }
    }
}

pub(crate) struct Node<T> {
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
    requires_grad: bool,
    op: Op<T>,
}

/// Ordered record of executed operations.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T> fmt::Debug for Graph<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Graph").field("nodes", &self.nodes.len()).finish()
    }
}

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

    /// Drops every recorded node. Handles from before the call become invalid.
    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    /// Records an input value. Gradients are accumulated for it when `requires_grad` is set.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated by the last [`backward`](Self::backward), if the node received one.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Name of the operation that produced `v`.
    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(Error::Usage(format!(
                "variable {} is not part of this graph ({} nodes)",
                v.0,
                self.nodes.len()
            )))
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if let Some(i) = value.first_non_finite() {
            return Err(Error::numeric(
                format!("{}#{}", op.name(), self.nodes.len()),
                format!("forward produced a non-finite value at flat index {i}"),
            ));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        self.check(x)?;
        self.check(w)?;
        if let Some(b) = b {
            self.check(b)?;
        }
        let out = conv::conv2d(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            &spec,
        )?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push(out, Op::Conv { x, w, b, spec }, &inputs)
    }

    pub fn resize_bilinear(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        self.check(x)?;
        let out = resize::resize_bilinear(self.value(x), out_h, out_w)?;
        self.push(out, Op::Resize { x }, &[x])
    }

    pub fn pool2d(&mut self, x: Var, spec: PoolSpec) -> Result<Var> {
        self.check(x)?;
        let (out, argmax) = pool::pool2d(self.value(x), &spec)?;
        self.push(out, Op::Pool { x, spec, argmax }, &[x])
    }

    /// Normalization layer. Returns the output and the statistics used, so callers can maintain
    /// running estimates for batch norm.
    pub fn normalize(
        &mut self,
        x: Var,
        scale: Var,
        shift: Var,
        kind: NormKind,
        eps: f64,
        running: Option<(&[T], &[T])>,
    ) -> Result<(Var, NormStats<T>)> {
        self.check(x)?;
        self.check(scale)?;
        self.check(shift)?;
        let (out, cache) = norm::normalize(
            self.value(x),
            self.value(scale),
            self.value(shift),
            kind,
            eps,
            running,
        )?;
        let stats = NormStats {
            mean: cache.mean.clone(),
            var: cache.var.clone(),
        };
        let v = self.push(
            out,
            Op::Norm {
                x,
                scale,
                shift,
                kind,
                cache,
            },
            &[x, scale, shift],
        )?;
        Ok((v, stats))
    }

    /// Hash of every piecewise decision on the tape: the sign class (negative, zero, positive)
    /// of each ReLU and abs input and each max-pool winner. Two evaluations with equal
    /// signatures lie on the same smooth piece.
    pub fn activation_signature(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for (i, n) in self.nodes.iter().enumerate() {
            match &n.op {
                Op::Unary {
                    x,
                    kind: UnaryKind::Relu | UnaryKind::Abs,
                } => {
                    i.hash(&mut h);
                    for v in self.nodes[x.0].value.data() {
                        let class: i8 = if *v > T::zero() {
                            1
                        } else if *v < T::zero() {
                            -1
                        } else {
                            0
                        };
                        class.hash(&mut h);
                    }
                }
                Op::Pool { argmax: Some(a), .. } => {
                    i.hash(&mut h);
                    a.hash(&mut h);
                }
                _ => {}
            }
        }
        h.finish()
    }

    /// Propagates gradients from the scalar `loss` back through the record.
    ///
    /// Gradients from previous calls are discarded first.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.check(loss)?;
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        if !self.nodes[loss.0].requires_grad {
            return Err(Error::Usage(
                "loss does not depend on any tensor that requires a gradient".into(),
            ));
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        let seed_shape = self.nodes[loss.0].value.shape().to_vec();
        self.nodes[loss.0].grad = Some(Tensor::ones(seed_shape));

        for i in (0..=loss.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            let Some(g) = node.grad.as_ref() else {
                continue;
            };
            if matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let grads = ops::backward_rule(&node.op, &node.value, g, before)
                .map_err(|e| annotate(e, node.op.name(), i))?;
            for (input, contribution) in grads {
                if let Some(j) = contribution.first_non_finite() {
                    return Err(Error::numeric(
                        format!("{}#{i}", node.op.name()),
                        format!("backward produced a non-finite gradient at flat index {j}"),
                    ));
                }
                let target = &mut before[input.0];
                if !target.requires_grad {
                    continue;
                }
                match target.grad.as_mut() {
                    Some(acc) => {
                        for (a, c) in acc.data_mut().iter_mut().zip(contribution.data()) {
                            *a += *c;
                        }
                    }
                    None => target.grad = Some(contribution),
                }
            }
        }
        Ok(())
    }
}

fn annotate(e: Error, op: &str, i: usize) -> Error {
    match e {
        Error::Config(msg) => Error::Config(format!("{op}#{i} backward: {msg}")),
        other => other,
    }
}

/// Mean and biased variance per normalization group computed by a forward pass.
#[derive(Clone, Debug)]
pub struct NormStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_has_unit_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::from_fn(vec![2, 3, 4], |i| i as f64), true);
        let l = g.sum(x).unwrap();
        g.backward(l).unwrap();
        assert!(g.grad(x).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn sigmoid_gradient_at_zero_is_quarter() {
        let mut g = Graph::<f32>::new();
        let x = g.leaf(Tensor::zeros(vec![1, 2, 3, 3]), true);
        let y = g.sigmoid(x).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.5));
        let l = g.sum(y).unwrap();
        g.backward(l).unwrap();
        assert!(g.grad(x).unwrap().data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn backward_rejects_foreign_and_non_scalar_nodes() {
        let mut g = Graph::<f32>::new();
        let x = g.leaf(Tensor::ones(vec![3]), true);
        assert!(matches!(g.backward(x), Err(Error::Usage(_))));
        assert!(matches!(g.backward(Var(42)), Err(Error::Usage(_))));
        let c = g.constant(Tensor::ones(vec![1]));
        let l = g.sum(c).unwrap();
        assert!(matches!(g.backward(l), Err(Error::Usage(_))));
    }

    #[test]
    fn non_finite_forward_is_an_error() {
        let mut g = Graph::<f32>::new();
        let x = g.leaf(Tensor::full(vec![2], f32::MAX), true);
        let r = g.affine(x, 10.0, 0.0);
        assert!(matches!(r, Err(Error::Numeric { .. })));
    }

    #[test]
    fn reused_node_accumulates() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::full(vec![1, 1, 2, 2], 3.0), true);
        let y = g.mul(x, x).unwrap();
        let l = g.sum(y).unwrap();
        g.backward(l).unwrap();
        assert!(g.grad(x).unwrap().data().iter().all(|&v| v == 6.0));
    }

    #[test]
    fn clear_resets_the_record() {
        let mut g = Graph::<f32>::new();
        g.leaf(Tensor::ones(vec![1]), true);
        g.clear();
        assert!(g.is_empty());
    }
}
