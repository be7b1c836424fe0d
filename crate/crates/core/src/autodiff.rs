//! Reverse-mode differentiation over a linear tape.
//!
//! Every op appends one node holding its output value and an [`Op`] record (kind tag,
//! input handles, saved intermediates). Nodes are appended after their inputs, so
//! walking the tape backwards from the loss is a reverse topological order and visits
//! each op exactly once.

use crate::error::{Error, Result};
use crate::kernels::broadcast::{binary_backward, binary_forward, BinaryKind};
use crate::kernels::conv::{conv2d_backward, conv2d_forward, ConvSpec};
use crate::kernels::matmul::{matmul_backward, matmul_forward};
use crate::kernels::norm::{layer_norm_backward, layer_norm_forward, NormStats};
use crate::kernels::pool::{global_avg_backward, global_avg_forward, local_avg_backward, local_avg_forward};
use crate::kernels::shuffle::{
    inverse_permutation, permute, pixel_shuffle, pixel_unshuffle, slice_channels, unslice_channels,
};
use crate::kernels::softmax::{softmax_backward, softmax_forward};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
pub enum UnaryKind<T> {
    Scale(T),
    /// `log10(x + eps)`
    Log10 { eps: T },
    /// `ln(1 + e^x)`
    Softplus,
    Recip,
}

/// Record of one differentiable operation.
#[derive(Debug)]
pub enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        weight: Var,
        bias: Option<Var>,
        spec: ConvSpec,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        offset: Var,
        stats: NormStats<T>,
    },
    Binary {
        kind: BinaryKind,
        a: Var,
        b: Var,
    },
    Unary {
        kind: UnaryKind<T>,
        x: Var,
    },
    Softmax {
        x: Var,
    },
    Matmul {
        a: Var,
        b: Var,
    },
    GlobalAvgPool {
        x: Var,
    },
    LocalAvgPool {
        x: Var,
        window: usize,
    },
    PixelShuffle {
        x: Var,
        factor: usize,
    },
    SliceChannels {
        x: Var,
        start: usize,
    },
    Reshape {
        x: Var,
    },
    Permute {
        x: Var,
        perm: Vec<usize>,
    },
    Sum {
        x: Var,
    },
    Mean {
        x: Var,
    },
}

impl<T> Op<T> {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::LayerNorm { .. } => "layer_norm_channel",
            Op::Binary { kind: BinaryKind::Add, .. } => "add",
            Op::Binary { kind: BinaryKind::Sub, .. } => "sub",
            Op::Binary { kind: BinaryKind::Mul, .. } => "mul",
            Op::Unary { .. } => "unary",
            Op::Softmax { .. } => "softmax_lastdim",
            Op::Matmul { .. } => "matmul_batched",
            Op::GlobalAvgPool { .. } => "adaptive_avg_pool_to_1",
            Op::LocalAvgPool { .. } => "local_avg_pool",
            Op::PixelShuffle { .. } => "pixel_shuffle",
            Op::SliceChannels { .. } => "slice_channels",
            Op::Reshape { .. } => "reshape",
            Op::Permute { .. } => "permute",
            Op::Sum { .. } => "sum",
            Op::Mean { .. } => "mean",
        }
    }

    pub fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d { x, weight, bias, .. } => {
                let mut v = vec![*x, *weight];
                v.extend(*bias);
                v
            }
            Op::LayerNorm { x, gain, offset, .. } => vec![*x, *gain, *offset],
            Op::Binary { a, b, .. } | Op::Matmul { a, b } => vec![*a, *b],
            Op::Unary { x, .. }
            | Op::Softmax { x }
            | Op::GlobalAvgPool { x }
            | Op::LocalAvgPool { x, .. }
            | Op::PixelShuffle { x, .. }
            | Op::SliceChannels { x, .. }
            | Op::Reshape { x }
            | Op::Permute { x, .. }
            | Op::Sum { x }
            | Op::Mean { x } => vec![*x],
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recording context for one forward pass.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A value whose gradient is reported by [`Tape::backward`].
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Every node on the tape, in recording order.
    pub fn vars(&self) -> impl Iterator<Item = Var> {
        (0..self.len()).map(Var)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn op(&self, v: Var) -> &Op<T> {
        &self.nodes[v.0].op
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let rg = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(value, op, rg)
    }

    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let out = conv2d_forward(self.value(x), self.value(weight), bias.map(|b| self.value(b)), spec)?;
        Ok(self.record(out, Op::Conv2d { x, weight, bias, spec }))
    }

    pub fn layer_norm_channel(&mut self, x: Var, gain: Var, offset: Var, eps: T) -> Result<Var> {
        let (out, stats) = layer_norm_forward(self.value(x), self.value(gain), self.value(offset), eps)?;
        Ok(self.record(out, Op::LayerNorm { x, gain, offset, stats }))
    }

    pub fn elementwise(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let out = binary_forward(kind, self.value(a), self.value(b))?;
        Ok(self.record(out, Op::Binary { kind, a, b }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(BinaryKind::Mul, a, b)
    }

    pub fn unary(&mut self, kind: UnaryKind<T>, x: Var) -> Var {
        let out = self.value(x).map(|v| match kind {
            UnaryKind::Scale(c) => c * v,
            UnaryKind::Log10 { eps } => (v + eps).log10(),
            UnaryKind::Softplus => softplus(v),
            UnaryKind::Recip => T::one() / v,
        });
        self.record(out, Op::Unary { kind, x })
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        self.unary(UnaryKind::Scale(c), x)
    }

    pub fn softmax_lastdim(&mut self, x: Var) -> Result<Var> {
        let out = softmax_forward(self.value(x))?;
        Ok(self.record(out, Op::Softmax { x }))
    }

    pub fn matmul_batched(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = matmul_forward(self.value(a), self.value(b))?;
        Ok(self.record(out, Op::Matmul { a, b }))
    }

    pub fn adaptive_avg_pool_to_1(&mut self, x: Var) -> Result<Var> {
        let out = global_avg_forward(self.value(x))?;
        Ok(self.record(out, Op::GlobalAvgPool { x }))
    }

    pub fn local_avg_pool(&mut self, x: Var, window: usize) -> Result<Var> {
        let out = local_avg_forward(self.value(x), window)?;
        Ok(self.record(out, Op::LocalAvgPool { x, window }))
    }

    pub fn pixel_shuffle(&mut self, x: Var, factor: usize) -> Result<Var> {
        let out = pixel_shuffle(self.value(x), factor)?;
        Ok(self.record(out, Op::PixelShuffle { x, factor }))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let out = slice_channels(self.value(x), start, len)?;
        Ok(self.record(out, Op::SliceChannels { x, start }))
    }

    /// Splits a BCHW value into its first and second channel halves.
    pub fn split_channels_half(&mut self, x: Var) -> Result<(Var, Var)> {
        let c = self.value(x).dims4()?.1;
        if c % 2 != 0 {
            return Err(Error::dim("split_channels_half", "channels", "even", c));
        }
        Ok((self.slice_channels(x, 0, c / 2)?, self.slice_channels(x, c / 2, c / 2)?))
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        Ok(self.record(out, Op::Reshape { x }))
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let out = permute(self.value(x), perm)?;
        Ok(self.record(out, Op::Permute { x, perm: perm.to_vec() }))
    }

    /// Swaps the last two axes.
    pub fn transpose_last(&mut self, x: Var) -> Result<Var> {
        let r = self.shape(x).len();
        if r < 2 {
            return Err(Error::dim("transpose", "rank", ">= 2", r));
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 2, r - 1);
        self.permute(x, &perm)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.record(out, Op::Sum { x })
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let out = Tensor::scalar(v.sum() / T::lit(v.len() as f64));
        self.record(out, Op::Mean { x })
    }

    /// Gradients of the scalar `loss` with respect to every leaf created with [`Tape::leaf`].
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Usage(format!("backward needs a scalar loss, got shape {:?}", lv.shape())));
        }
        if !self.nodes[loss.0].requires_grad {
            return Err(Error::Usage("backward on a value detached from every differentiable leaf".into()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(lv.shape().to_vec()));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            for (input, grad) in self.input_grads(node, &g)? {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                let slot = &mut grads[input.0];
                *slot = Some(match slot.take() {
                    Some(prev) => binary_forward(BinaryKind::Add, &prev, &grad)?,
                    None => grad,
                });
            }
        }
        Ok(Gradients { grads })
    }

    fn input_grads(&self, node: &Node<T>, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let val = |v: Var| &self.nodes[v.0].value;
        Ok(match &node.op {
            Op::Leaf => vec![],
            Op::Conv2d { x, weight, bias, spec } => {
                let cg = conv2d_backward(val(*x), val(*weight), bias.is_some(), *spec, g)?;
                let mut out = vec![(*x, cg.input), (*weight, cg.weight)];
                if let (Some(b), Some(gb)) = (bias, cg.bias) {
                    out.push((*b, gb));
                }
                out
            }
            Op::LayerNorm { x, gain, offset, stats } => {
                let (gx, gg, go) = layer_norm_backward(val(*x), val(*gain), stats, g)?;
                vec![(*x, gx), (*gain, gg), (*offset, go)]
            }
            Op::Binary { kind, a, b } => {
                let (ga, gb) = binary_backward(*kind, val(*a), val(*b), g);
                vec![(*a, ga), (*b, gb)]
            }
            Op::Unary { kind, x } => {
                let xv = val(*x);
                let data = xv
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&v, &gv)| {
                        gv * match *kind {
                            UnaryKind::Scale(c) => c,
                            UnaryKind::Log10 { eps } => T::one() / ((v + eps) * T::lit(std::f64::consts::LN_10)),
                            UnaryKind::Softplus => sigmoid(v),
                            UnaryKind::Recip => -T::one() / (v * v),
                        }
                    })
                    .collect();
                vec![(*x, Tensor::from_parts(xv.shape().to_vec(), data))]
            }
            Op::Softmax { x } => vec![(*x, softmax_backward(&node.value, g))],
            Op::Matmul { a, b } => {
                let (ga, gb) = matmul_backward(val(*a), val(*b), g);
                vec![(*a, ga), (*b, gb)]
            }
            Op::GlobalAvgPool { x } => vec![(*x, global_avg_backward(val(*x).shape(), g))],
            Op::LocalAvgPool { x, window } => vec![(*x, local_avg_backward(g, *window)?)],
            Op::PixelShuffle { x, factor } => vec![(*x, pixel_unshuffle(g, *factor)?)],
            Op::SliceChannels { x, start } => {
                let c = val(*x).dims4()?.1;
                vec![(*x, unslice_channels(g, *start, c)?)]
            }
            Op::Reshape { x } => vec![(*x, g.reshape(val(*x).shape().to_vec())?)],
            Op::Permute { x, perm } => vec![(*x, permute(g, &inverse_permutation(perm))?)],
            Op::Sum { x } => {
                let gv = g.item()?;
                vec![(*x, Tensor::full(val(*x).shape().to_vec(), gv))]
            }
            Op::Mean { x } => {
                let xv = val(*x);
                let gv = g.item()? / T::lit(xv.len() as f64);
                vec![(*x, Tensor::full(xv.shape().to_vec(), gv))]
            }
        })
    }
}

fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// `ln(1 + e^v)`, evaluated without overflow.
pub fn softplus<T: Scalar>(v: T) -> T {
    v.max(T::zero()) + (-v.abs()).exp().ln_1p()
}

/// Inverse of softplus for positive `y`.
pub fn softplus_inverse(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a leaf, `None` when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of a leaf, zero-filled when the loss does not depend on it.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape.to_vec()))
    }
}
