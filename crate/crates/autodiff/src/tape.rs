//! Define-by-run tape for reverse-mode differentiation.
//!
//! Every op appends one node whose inputs are earlier nodes, so the tape is
//! always in topological order and a single reverse sweep computes all
//! gradients. A tape is rebuilt for each forward pass.

use std::cell::{Cell, RefCell};
use std::rc::Rc;

use crate::error::{Result, TensorError};
use crate::ops::{conv, elementwise, linalg, norm, reduce, shape};
use crate::tensor::Tensor;

pub use crate::ops::conv::Conv2dParams;
pub use crate::ops::elementwise::{BinaryKind, UnaryKind};
pub use crate::ops::reduce::ReduceKind;

/// Backward rule of an op implemented outside this crate.
///
/// The caller computes the forward value itself and hands it to
/// [`Tape::custom`]; the rule maps the upstream gradient to one gradient per
/// input, each shaped like that input.
pub trait CustomOp {
    fn name(&self) -> &'static str;

    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_out: &Tensor) -> Vec<Tensor>;
}

pub(crate) enum Op {
    Leaf,
    Unary {
        kind: UnaryKind,
        x: usize,
    },
    Binary {
        kind: BinaryKind,
        a: usize,
        b: usize,
    },
    MatMul {
        a: usize,
        b: usize,
    },
    Conv2d {
        x: usize,
        w: usize,
        bias: Option<usize>,
        params: Conv2dParams,
    },
    Norm {
        x: usize,
        gamma: Option<usize>,
        beta: Option<usize>,
        saved: norm::NormSaved,
    },
    Softmax {
        x: usize,
    },
    Reduce {
        x: usize,
        saved: reduce::ReduceSaved,
    },
    Reshape {
        x: usize,
    },
    Permute {
        x: usize,
        perm: Vec<usize>,
    },
    Concat {
        parts: Vec<usize>,
        axis: usize,
    },
    Narrow {
        x: usize,
        axis: usize,
        start: usize,
    },
    Custom {
        inputs: Vec<usize>,
        rule: Box<dyn CustomOp>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Unary { kind, .. } => kind.name(),
            Op::Binary { kind, .. } => kind.name(),
            Op::MatMul { .. } => "matmul",
            Op::Conv2d { .. } => "conv2d",
            Op::Norm { saved, .. } => saved.name(),
            Op::Softmax { .. } => "softmax",
            Op::Reduce { saved, .. } => saved.kind.name(),
            Op::Reshape { .. } => "reshape",
            Op::Permute { .. } => "permute",
            Op::Concat { .. } => "concat",
            Op::Narrow { .. } => "narrow",
            Op::Custom { rule, .. } => rule.name(),
        }
    }

    fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::Unary { x, .. }
            | Op::Softmax { x }
            | Op::Reduce { x, .. }
            | Op::Reshape { x }
            | Op::Permute { x, .. }
            | Op::Narrow { x, .. } => vec![*x],
            Op::Binary { a, b, .. } | Op::MatMul { a, b } => vec![*a, *b],
            Op::Conv2d { x, w, bias, .. } => {
                let mut v = vec![*x, *w];
                v.extend(bias);
                v
            }
            Op::Norm { x, gamma, beta, .. } => {
                let mut v = vec![*x];
                v.extend(gamma);
                v.extend(beta);
                v
            }
            Op::Concat { parts, .. } => parts.clone(),
            Op::Custom { inputs, .. } => inputs.clone(),
        }
    }
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Records executed ops for one forward pass.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    check_finite: bool,
    nonfinite: Cell<Option<(usize, &'static str)>>,
    branches: Cell<u64>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    /// A fresh tape. Non-finite detection is on in debug builds.
    pub fn new() -> Self {
        Self::with_finite_checks(cfg!(debug_assertions))
    }

    pub fn with_finite_checks(check_finite: bool) -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            check_finite,
            nonfinite: Cell::new(None),
            branches: Cell::new(FNV_OFFSET),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A leaf that gradients flow into.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf treated as a constant.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    /// Record an externally computed op with its own backward rule.
    pub fn custom<'t>(
        &'t self,
        inputs: &[Var<'t>],
        output: Tensor,
        rule: Box<dyn CustomOp>,
    ) -> Var<'t> {
        let ids = inputs.iter().map(|v| v.id).collect();
        self.record(
            output,
            Op::Custom {
                inputs: ids,
                rule,
            },
        )
    }

    /// Concatenate along `axis`.
    pub fn concat<'t>(&'t self, parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        let values: Vec<Rc<Tensor>> = parts.iter().map(|v| v.value()).collect();
        let refs: Vec<&Tensor> = values.iter().map(|v| v.as_ref()).collect();
        let out = Tensor::concat(&refs, axis)?;
        Ok(self.record(
            out,
            Op::Concat {
                parts: parts.iter().map(|v| v.id).collect(),
                axis,
            },
        ))
    }

    /// Fingerprint of every branch taken by a non-smooth op so far.
    ///
    /// Two evaluations with equal fingerprints ran through the same smooth
    /// piece of the function; a finite difference straddling a kink shows up
    /// as differing fingerprints.
    pub fn branch_fingerprint(&self) -> u64 {
        self.branches.get()
    }

    /// First non-finite value recorded by the detector, if any.
    pub fn finite_status(&self) -> Result<()> {
        match self.nonfinite.get() {
            Some((node, op)) => Err(TensorError::NonFinite { op, node }),
            None => Ok(()),
        }
    }

    pub(crate) fn value(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    pub(crate) fn mix_branches(&self, words: impl IntoIterator<Item = u64>) {
        let mut h = self.branches.get();
        for w in words {
            h ^= w;
            h = h.wrapping_mul(FNV_PRIME);
        }
        self.branches.set(h);
    }

    pub(crate) fn record(&self, value: Tensor, op: Op) -> Var<'_> {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            op.inputs().iter().any(|&i| nodes[i].requires_grad)
        };
        self.push(value, op, requires_grad)
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        if self.check_finite && self.nonfinite.get().is_none() && !value.is_finite() {
            self.nonfinite.set(Some((id, op.name())));
        }
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var { tape: self, id }
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.numel() != 1 {
            return Err(TensorError::NonScalarLoss(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(Tensor::full(root.value.shape(), 1.0));

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let inputs = node.op.inputs();
            let values: Vec<&Tensor> = inputs.iter().map(|&i| nodes[i].value.as_ref()).collect();
            let input_grads = backward_op(&node.op, &values, &node.value, &g)?;
            // keep the upstream gradient on this node so callers can inspect it
            grads[id] = Some(g);
            for (&i, gi) in inputs.iter().zip(input_grads) {
                let Some(gi) = gi else { continue };
                if !nodes[i].requires_grad {
                    continue;
                }
                match &mut grads[i] {
                    Some(acc) => {
                        for (a, v) in acc.data_mut().iter_mut().zip(gi.data()) {
                            *a += v;
                        }
                    }
                    slot @ None => *slot = Some(gi),
                }
            }
        }
        Ok(Gradients { grads })
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn backward_op(
    op: &Op,
    inputs: &[&Tensor],
    out: &Tensor,
    g: &Tensor,
) -> Result<Vec<Option<Tensor>>> {
    Ok(match op {
        Op::Leaf => vec![],
        Op::Unary { kind, .. } => vec![Some(elementwise::unary_backward(*kind, inputs[0], out, g))],
        Op::Binary { kind, .. } => {
            let (ga, gb) = elementwise::binary_backward(*kind, inputs[0], inputs[1], out, g);
            vec![Some(ga), Some(gb)]
        }
        Op::MatMul { .. } => {
            let (ga, gb) = linalg::matmul_backward(inputs[0], inputs[1], g)?;
            vec![Some(ga), Some(gb)]
        }
        Op::Conv2d { bias, params, .. } => {
            let grads = conv::conv2d_backward(inputs[0], inputs[1], bias.is_some(), params, g);
            let mut v = vec![Some(grads.x), Some(grads.w)];
            if bias.is_some() {
                v.push(grads.bias);
            }
            v
        }
        Op::Norm {
            gamma, beta, saved, ..
        } => {
            let gamma_val = gamma.map(|_| inputs[1]);
            let grads = norm::norm_backward(saved, gamma_val, g);
            let mut v = vec![Some(grads.x)];
            if gamma.is_some() {
                v.push(Some(grads.gamma));
            }
            if beta.is_some() {
                v.push(Some(grads.beta));
            }
            v
        }
        Op::Softmax { .. } => vec![Some(elementwise::softmax_backward(out, g))],
        Op::Reduce { saved, .. } => vec![Some(reduce::reduce_backward(saved, inputs[0], g))],
        Op::Reshape { .. } => vec![Some(g.clone().reshape(inputs[0].shape())?)],
        Op::Permute { perm, .. } => vec![Some(shape::permute(g, &shape::inverse_perm(perm))?)],
        Op::Concat { axis, .. } => {
            let mut start = 0;
            let mut v = Vec::with_capacity(inputs.len());
            for t in inputs {
                let len = t.shape()[*axis];
                v.push(Some(g.narrow(*axis, start, len)?));
                start += len;
            }
            v
        }
        Op::Narrow { axis, start, .. } => {
            vec![Some(shape::narrow_backward(inputs[0].shape(), *axis, *start, g))]
        }
        Op::Custom { rule, .. } => rule
            .backward(inputs, out, g)
            .into_iter()
            .map(Some)
            .collect(),
    })
}

/// Gradients produced by [`Tape::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `var`; `None` when the loss does not
    /// depend on it or it does not require grad.
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    /// Gradient of `var`, or zeros of its shape when it got none.
    pub fn get_or_zeros(&self, var: Var<'_>) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.value().shape()))
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    pub(crate) tape: &'t Tape,
    pub(crate) id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    fn unary(self, kind: UnaryKind) -> Var<'t> {
        let x = self.value();
        if let Some(words) = elementwise::unary_branches(kind, &x) {
            self.tape.mix_branches(words);
        }
        let out = elementwise::unary_forward(kind, &x);
        self.tape.record(out, Op::Unary { kind, x: self.id })
    }

    fn binary(self, kind: BinaryKind, rhs: Var<'t>) -> Result<Var<'t>> {
        let out = elementwise::binary_forward(kind, &self.value(), &rhs.value())?;
        Ok(self.tape.record(
            out,
            Op::Binary {
                kind,
                a: self.id,
                b: rhs.id,
            },
        ))
    }

    pub fn add(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary(BinaryKind::Add, rhs)
    }

    pub fn sub(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary(BinaryKind::Sub, rhs)
    }

    pub fn mul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary(BinaryKind::Mul, rhs)
    }

    pub fn div(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary(BinaryKind::Div, rhs)
    }

    /// `self ^ rhs` elementwise; the exponent gradient uses `ln(self)` and
    /// is only meaningful for positive bases.
    pub fn pow(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary(BinaryKind::Pow, rhs)
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        self.unary(UnaryKind::AddScalar(c))
    }

    pub fn mul_scalar(self, c: f64) -> Var<'t> {
        self.unary(UnaryKind::MulScalar(c))
    }

    pub fn pow_scalar(self, p: f64) -> Var<'t> {
        self.unary(UnaryKind::PowScalar(p))
    }

    pub fn neg(self) -> Var<'t> {
        self.mul_scalar(-1.0)
    }

    /// `|x|`, with gradient 0 at 0.
    pub fn abs(self) -> Var<'t> {
        self.unary(UnaryKind::Abs)
    }

    /// `sign(x)` in {-1, 0, 1}; zero gradient everywhere.
    pub fn sign(self) -> Var<'t> {
        self.unary(UnaryKind::Sign)
    }

    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        self.unary(UnaryKind::Clamp(lo, hi))
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(UnaryKind::Exp)
    }

    pub fn ln(self) -> Var<'t> {
        self.unary(UnaryKind::Ln)
    }

    pub fn selu(self) -> Var<'t> {
        self.unary(UnaryKind::Selu)
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(UnaryKind::Sigmoid)
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(UnaryKind::Tanh)
    }

    /// Batched matrix product over the last two axes with broadcast
    /// leading axes.
    pub fn matmul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        let out = linalg::matmul(&self.value(), &rhs.value())?;
        Ok(self.tape.record(
            out,
            Op::MatMul {
                a: self.id,
                b: rhs.id,
            },
        ))
    }

    /// Softmax over the last axis.
    pub fn softmax(self) -> Var<'t> {
        let out = elementwise::softmax(&self.value());
        self.tape.record(out, Op::Softmax { x: self.id })
    }

    pub fn reduce(self, kind: ReduceKind, axes: &[usize], keepdim: bool) -> Result<Var<'t>> {
        let x = self.value();
        let (out, saved) = reduce::reduce(kind, &x, axes)?;
        if let Some(argmax) = &saved.argmax {
            self.tape.mix_branches(argmax.iter().map(|&i| i as u64));
        }
        let kept = self.tape.record(out, Op::Reduce { x: self.id, saved });
        if keepdim {
            Ok(kept)
        } else {
            let shape: Vec<usize> = x
                .shape()
                .iter()
                .enumerate()
                .filter(|(i, _)| !axes.contains(i))
                .map(|(_, &d)| d)
                .collect();
            kept.reshape(&shape)
        }
    }

    pub fn sum(self, axes: &[usize], keepdim: bool) -> Result<Var<'t>> {
        self.reduce(ReduceKind::Sum, axes, keepdim)
    }

    pub fn mean(self, axes: &[usize], keepdim: bool) -> Result<Var<'t>> {
        self.reduce(ReduceKind::Mean, axes, keepdim)
    }

    pub fn max(self, axes: &[usize], keepdim: bool) -> Result<Var<'t>> {
        self.reduce(ReduceKind::Max, axes, keepdim)
    }

    /// Sum of every element, as a rank-0 tensor.
    pub fn sum_all(self) -> Result<Var<'t>> {
        let axes: Vec<usize> = (0..self.value().rank()).collect();
        if axes.is_empty() {
            return Ok(self);
        }
        self.sum(&axes, false)
    }

    pub fn mean_all(self) -> Result<Var<'t>> {
        let axes: Vec<usize> = (0..self.value().rank()).collect();
        if axes.is_empty() {
            return Ok(self);
        }
        self.mean(&axes, false)
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let out = (*self.value()).clone().reshape(shape)?;
        Ok(self.tape.record(out, Op::Reshape { x: self.id }))
    }

    pub fn permute(self, perm: &[usize]) -> Result<Var<'t>> {
        let out = shape::permute(&self.value(), perm)?;
        Ok(self.tape.record(
            out,
            Op::Permute {
                x: self.id,
                perm: perm.to_vec(),
            },
        ))
    }

    /// Swap the last two axes.
    pub fn transpose(self) -> Result<Var<'t>> {
        let rank = self.value().rank();
        if rank < 2 {
            return Err(TensorError::invalid("transpose", "rank < 2"));
        }
        let mut perm: Vec<usize> = (0..rank).collect();
        perm.swap(rank - 2, rank - 1);
        self.permute(&perm)
    }

    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Var<'t>> {
        let out = self.value().narrow(axis, start, len)?;
        Ok(self.tape.record(
            out,
            Op::Narrow {
                x: self.id,
                axis,
                start,
            },
        ))
    }
}

/// 2-D cross-correlation over `[B, Cin, H, W]` with weights
/// `[Cout, Cin / groups, kh, kw]` and zero padding.
pub fn conv2d<'t>(
    x: Var<'t>,
    w: Var<'t>,
    bias: Option<Var<'t>>,
    params: Conv2dParams,
) -> Result<Var<'t>> {
    let out = conv::conv2d(&x.value(), &w.value(), bias.map(|b| b.value()).as_deref(), &params)?;
    Ok(x.tape.record(
        out,
        Op::Conv2d {
            x: x.id,
            w: w.id,
            bias: bias.map(|b| b.id),
            params,
        },
    ))
}

/// Per-(sample, channel) normalization of `[B, C, H, W]` with optional
/// per-channel affine `gamma`, `beta` of shape `[C]`.
pub fn instance_norm<'t>(
    x: Var<'t>,
    gamma: Option<Var<'t>>,
    beta: Option<Var<'t>>,
    eps: f64,
) -> Result<Var<'t>> {
    let (out, saved) = norm::instance_norm(
        &x.value(),
        gamma.map(|g| g.value()).as_deref(),
        beta.map(|b| b.value()).as_deref(),
        eps,
    )?;
    Ok(x.tape.record(
        out,
        Op::Norm {
            x: x.id,
            gamma: gamma.map(|g| g.id),
            beta: beta.map(|b| b.id),
            saved,
        },
    ))
}

/// Normalization over the last axis with optional affine of shape `[d]`.
pub fn layer_norm<'t>(
    x: Var<'t>,
    gamma: Option<Var<'t>>,
    beta: Option<Var<'t>>,
    eps: f64,
) -> Result<Var<'t>> {
    let (out, saved) = norm::layer_norm(
        &x.value(),
        gamma.map(|g| g.value()).as_deref(),
        beta.map(|b| b.value()).as_deref(),
        eps,
    )?;
    Ok(x.tape.record(
        out,
        Op::Norm {
            x: x.id,
            gamma: gamma.map(|g| g.id),
            beta: beta.map(|b| b.id),
            saved,
        },
    ))
}
