//! Reverse-mode differentiation over a Wengert tape.
//!
//! A [`Tape`] records every operation executed through a [`Var`] handle.
//! Node ids are assigned in execution order, so the tape is topologically
//! sorted by construction and [`Tape::backward`] is a single reverse sweep.
//!
//! ```
//! use mcst::autodiff::Tape;
//! use mcst::tensor::Tensor;
//!
//! let tape = Tape::new();
//! let x = tape.param(Tensor::new([2], vec![1.0, 2.0]).unwrap());
//! let loss = x.mul(x).unwrap().sum().unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap(), &[2.0, 4.0]);
//! ```

mod gemm;
pub mod fault;
pub mod gradcheck;
mod ops;

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use ops::{DropoutMask, Unary};

use ops::Op;

struct Node {
    value: Rc<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Append-only record of executed operations.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Leaf that receives a gradient.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, false)
    }

    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op: Op::Leaf,
            needs_grad: requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn push(&self, op_name: &'static str, value: Tensor, op: Op) -> Result<Var<'_>> {
        if let Some(index) = value.first_non_finite() {
            return Err(Error::NonFinite { op: op_name, index });
        }
        let mut nodes = self.nodes.borrow_mut();
        let needs_grad = op.inputs().iter().any(|&i| nodes[i].needs_grad);
        nodes.push(Node {
            value: Rc::new(value),
            op,
            needs_grad,
        });
        Ok(Var {
            tape: self,
            id: nodes.len() - 1,
        })
    }

    fn value_of(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// Populates gradients for every node that depends on a gradient-carrying
    /// leaf. Each node is visited once, in reverse recording order.
    pub fn backward(&self, loss: Var<'_>) -> Result<Grads> {
        assert!(std::ptr::eq(loss.tape, self), "loss recorded on another tape");
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        if !root.needs_grad {
            return Err(Error::Contract(
                "loss does not depend on any gradient-carrying leaf".into(),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(vec![1.0]);
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
                continue;
            }
            let mut sink = GradSink {
                nodes: &nodes,
                grads: &mut grads,
            };
            ops::backward(&node.op, &node.value, &g, &mut sink);
        }
        Ok(Grads { grads })
    }
}

/// Accumulates input gradients during the reverse sweep.
pub(crate) struct GradSink<'a> {
    nodes: &'a [Node],
    grads: &'a mut Vec<Option<Vec<f64>>>,
}

impl GradSink<'_> {
    fn value(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes[id].value)
    }

    fn wants(&self, id: usize) -> bool {
        self.nodes[id].needs_grad
    }

    /// Mutable gradient buffer for `id`, zero-initialised on first touch.
    fn buf(&mut self, id: usize) -> &mut Vec<f64> {
        let n = self.nodes[id].value.numel();
        self.grads[id].get_or_insert_with(|| vec![0.0; n])
    }

    fn add(&mut self, id: usize, g: &[f64]) {
        if !self.wants(id) {
            return;
        }
        match &mut self.grads[id] {
            Some(buf) => buf.iter_mut().zip(g).for_each(|(b, x)| *b += x),
            slot @ None => *slot = Some(g.to_vec()),
        }
    }

    fn add_owned(&mut self, id: usize, g: Vec<f64>) {
        if !self.wants(id) {
            return;
        }
        match &mut self.grads[id] {
            Some(buf) => buf.iter_mut().zip(&g).for_each(|(b, x)| *b += x),
            slot @ None => *slot = Some(g),
        }
    }
}

/// Gradients produced by [`Tape::backward`], indexed by leaf.
pub struct Grads {
    grads: Vec<Option<Vec<f64>>>,
}

impl Grads {
    /// Gradient of the loss w.r.t. a leaf, `None` when the leaf is unreachable.
    pub fn get(&self, v: Var<'_>) -> Option<&[f64]> {
        self.grads.get(v.id).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var<'_>) -> Option<Vec<f64>> {
        self.grads.get_mut(v.id).and_then(Option::take)
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].needs_grad
    }

    fn same_tape(&self, other: &Var<'_>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "operands recorded on different tapes"
        );
    }

    /// Batched matrix product `[..., p, q] · [..., q, r]`. Leading batch
    /// extents must match, or one operand must be a plain matrix.
    pub fn matmul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&rhs);
        let (a, b) = (self.value(), rhs.value());
        let out = ops::matmul_forward(&a, &b)?;
        self.tape.push("matmul", out, Op::MatMul { a: self.id, b: rhs.id })
    }

    /// `x · w + bias` over the last axis with `w: [d_in, d_out]`.
    pub fn linear(self, w: Var<'t>, bias: Option<Var<'t>>) -> Result<Var<'t>> {
        let y = self.matmul(w)?;
        match bias {
            Some(b) => y.add(b),
            None => Ok(y),
        }
    }

    pub fn add(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary(rhs, ops::Binary::Add)
    }

    pub fn sub(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary(rhs, ops::Binary::Sub)
    }

    pub fn mul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary(rhs, ops::Binary::Mul)
    }

    fn binary(self, rhs: Var<'t>, kind: ops::Binary) -> Result<Var<'t>> {
        self.same_tape(&rhs);
        let (a, b) = (self.value(), rhs.value());
        let out = ops::binary_forward(kind, &a, &b)?;
        self.tape.push(
            kind.name(),
            out,
            Op::Binary {
                kind,
                a: self.id,
                b: rhs.id,
            },
        )
    }

    pub fn unary(self, kind: Unary) -> Result<Var<'t>> {
        let x = self.value();
        let out = ops::unary_forward(kind, &x);
        self.tape.push(kind.name(), out, Op::Unary { kind, x: self.id })
    }

    pub fn exp(self) -> Result<Var<'t>> {
        self.unary(Unary::Exp)
    }

    pub fn neg(self) -> Result<Var<'t>> {
        self.unary(Unary::Neg)
    }

    pub fn sigmoid(self) -> Result<Var<'t>> {
        self.unary(Unary::Sigmoid)
    }

    pub fn relu(self) -> Result<Var<'t>> {
        self.unary(Unary::Relu)
    }

    pub fn silu(self) -> Result<Var<'t>> {
        self.unary(Unary::Silu)
    }

    pub fn softplus(self) -> Result<Var<'t>> {
        self.unary(Unary::Softplus)
    }

    pub fn square(self) -> Result<Var<'t>> {
        self.unary(Unary::Square)
    }

    pub fn scale(self, c: f64) -> Result<Var<'t>> {
        self.unary(Unary::Scale(c))
    }

    pub fn sum(self) -> Result<Var<'t>> {
        let s: f64 = self.value().data().iter().sum();
        self.tape
            .push("sum", Tensor::scalar(s), Op::Sum { x: self.id, mean: false })
    }

    pub fn mean(self) -> Result<Var<'t>> {
        let v = self.value();
        if v.numel() == 0 {
            return Err(Error::dim("mean", "mean of an empty tensor"));
        }
        let s: f64 = v.data().iter().sum::<f64>() / v.numel() as f64;
        self.tape
            .push("mean", Tensor::scalar(s), Op::Sum { x: self.id, mean: true })
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Var<'t>> {
        let out = self.value().reshape(shape)?;
        self.tape.push("reshape", out, Op::Reshape { x: self.id })
    }

    pub fn permute(self, axes: &[usize]) -> Result<Var<'t>> {
        let out = self.value().permute(axes)?;
        self.tape.push(
            "permute",
            out,
            Op::Permute {
                x: self.id,
                axes: axes.to_vec(),
            },
        )
    }

    /// Columns `[start, start + len)` of the last axis.
    pub fn slice_last(self, start: usize, len: usize) -> Result<Var<'t>> {
        let x = self.value();
        let out = ops::slice_last_forward(&x, start, len)?;
        self.tape.push(
            "slice_last",
            out,
            Op::SliceLast {
                x: self.id,
                start,
                len,
            },
        )
    }

    /// Layer normalisation over the last axis followed by `gamma`, `beta`.
    pub fn layer_norm(self, gamma: Var<'t>, beta: Var<'t>, eps: f64) -> Result<Var<'t>> {
        self.same_tape(&gamma);
        let (x, g, b) = (self.value(), gamma.value(), beta.value());
        let (out, xhat, inv_std) = ops::layer_norm_forward(&x, &g, &b, eps)?;
        self.tape.push(
            "layer_norm",
            out,
            Op::LayerNorm {
                x: self.id,
                gamma: gamma.id,
                beta: beta.id,
                xhat,
                inv_std,
            },
        )
    }

    /// Multiplies by a precomputed dropout mask. With `None` this is the identity
    /// and nothing is recorded.
    pub fn dropout(self, mask: Option<&DropoutMask>) -> Result<Var<'t>> {
        let Some(mask) = mask else { return Ok(self) };
        let x = self.value();
        if mask.scale.len() != x.numel() {
            return Err(Error::dim(
                "dropout",
                format!("mask of {} for tensor {:?}", mask.scale.len(), x.shape()),
            ));
        }
        let data = x.data().iter().zip(&mask.scale).map(|(a, m)| a * m).collect();
        let out = Tensor::new(x.shape(), data)?;
        self.tape.push(
            "dropout",
            out,
            Op::Mask {
                x: self.id,
                mask: Rc::new(mask.scale.clone()),
            },
        )
    }

    /// Depthwise causal convolution. `self: [b, l, c]`, `w: [c, k]`, `bias: [c]`;
    /// output step `t` sees inputs `t-k+1 ..= t` only (left zero padding).
    pub fn causal_conv1d(self, w: Var<'t>, bias: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&w);
        let out = ops::causal_conv_forward(&self.value(), &w.value(), &bias.value())?;
        self.tape.push(
            "causal_conv1d",
            out,
            Op::CausalConv {
                x: self.id,
                w: w.id,
                b: bias.id,
            },
        )
    }
}

/// Concatenates along the last axis; all leading extents must agree.
pub fn concat_last<'t>(xs: &[Var<'t>]) -> Result<Var<'t>> {
    let Some(first) = xs.first() else {
        return Err(Error::dim("concat_last", "no inputs"));
    };
    let values: Vec<Rc<Tensor>> = xs.iter().map(|v| v.value()).collect();
    let refs: Vec<&Tensor> = values.iter().map(|v| v.as_ref()).collect();
    let out = ops::concat_last_forward(&refs)?;
    first.tape.push(
        "concat_last",
        out,
        Op::ConcatLast {
            xs: xs.iter().map(|v| v.id).collect(),
        },
    )
}

/// Row gather from `table: [v, d]`; the output has shape `index_shape ++ [d]`.
pub fn embedding_lookup<'t>(
    table: Var<'t>,
    indices: &[usize],
    index_shape: &[usize],
) -> Result<Var<'t>> {
    let t = table.value();
    let out = ops::gather_forward(&t, indices, index_shape)?;
    table.tape.push(
        "embedding_lookup",
        out,
        Op::Gather {
            table: table.id,
            indices: Rc::new(indices.to_vec()),
        },
    )
}

/// Selective scan with input-dependent step sizes, recorded as one node.
///
/// Shapes: `u, delta: [s, l, d]`, `a: [d, n]` (negative), `b, c: [s, l, n]`,
/// `d_skip: [d]`. Returns `y: [s, l, d]`.
pub fn selective_scan<'t>(
    u: Var<'t>,
    delta: Var<'t>,
    a: Var<'t>,
    b: Var<'t>,
    c: Var<'t>,
    d_skip: Var<'t>,
    mode: crate::ssm::ScanMode,
) -> Result<Var<'t>> {
    let (uv, dv, av, bv, cv, sv) = (
        u.value(),
        delta.value(),
        a.value(),
        b.value(),
        c.value(),
        d_skip.value(),
    );
    let inputs = crate::ssm::fused::ScanInputs {
        u: &uv,
        delta: &dv,
        a: &av,
        b: &bv,
        c: &cv,
        d_skip: &sv,
    };
    let out = crate::ssm::fused::forward(&inputs, mode)?;
    u.tape.push(
        "selective_scan",
        out,
        Op::Scan {
            ids: [u.id, delta.id, a.id, b.id, c.id, d_skip.id],
        },
    )
}

#[cfg(test)]
mod tests;
