//! Forward kernels and backward rules for every recorded operation.

use std::rc::Rc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::gemm::{gemm, MatRef};
use super::{fault, GradSink};
use crate::error::{Error, Result};
use crate::tensor::{inverse_permutation, numel, permute_data, Tensor};

pub(super) enum Op {
    Leaf,
    MatMul {
        a: usize,
        b: usize,
    },
    Binary {
        kind: Binary,
        a: usize,
        b: usize,
    },
    Unary {
        kind: Unary,
        x: usize,
    },
    Sum {
        x: usize,
        mean: bool,
    },
    Reshape {
        x: usize,
    },
    Permute {
        x: usize,
        axes: Vec<usize>,
    },
    ConcatLast {
        xs: Vec<usize>,
    },
    SliceLast {
        x: usize,
        start: usize,
        len: usize,
    },
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Gather {
        table: usize,
        indices: Rc<Vec<usize>>,
    },
    Mask {
        x: usize,
        mask: Rc<Vec<f64>>,
    },
    CausalConv {
        x: usize,
        w: usize,
        b: usize,
    },
    Scan {
        ids: [usize; 6],
    },
}

impl Op {
    pub(super) fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul { a, b } | Op::Binary { a, b, .. } => vec![*a, *b],
            Op::Unary { x, .. }
            | Op::Sum { x, .. }
            | Op::Reshape { x }
            | Op::Permute { x, .. }
            | Op::SliceLast { x, .. }
            | Op::Mask { x, .. } => vec![*x],
            Op::ConcatLast { xs } => xs.clone(),
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Gather { table, .. } => vec![*table],
            Op::CausalConv { x, w, b } => vec![*x, *w, *b],
            Op::Scan { ids } => ids.to_vec(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(super) enum Binary {
    Add,
    Sub,
    Mul,
}

impl Binary {
    pub(super) fn name(self) -> &'static str {
        match self {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
        }
    }
}

/// Elementwise single-input operations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary {
    Exp,
    Neg,
    Sigmoid,
    Relu,
    Silu,
    Softplus,
    Square,
    Scale(f64),
}

impl Unary {
    pub fn name(self) -> &'static str {
        match self {
            Unary::Exp => "exp",
            Unary::Neg => "neg",
            Unary::Sigmoid => "sigmoid",
            Unary::Relu => "relu",
            Unary::Silu => "silu",
            Unary::Softplus => "softplus",
            Unary::Square => "square",
            Unary::Scale(_) => "scale",
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

fn unary_apply(kind: Unary, x: f64) -> f64 {
    match kind {
        Unary::Exp => x.exp(),
        Unary::Neg => -x,
        Unary::Sigmoid => sigmoid(x),
        Unary::Relu => x.max(0.0),
        Unary::Silu => silu(x),
        Unary::Softplus => softplus(x),
        Unary::Square => x * x,
        Unary::Scale(c) => c * x,
    }
}

/// d(out)/d(x) given input `x` and output `y`.
fn unary_deriv(kind: Unary, x: f64, y: f64) -> f64 {
    match kind {
        Unary::Exp => y,
        Unary::Neg => -1.0,
        Unary::Sigmoid => y * (1.0 - y),
        Unary::Relu => {
            if x > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Unary::Silu => {
            let s = sigmoid(x);
            let d = s + x * s * (1.0 - s);
            if fault::is_corrupted("silu") {
                d * 1.1
            } else {
                d
            }
        }
        Unary::Softplus => sigmoid(x),
        Unary::Square => 2.0 * x,
        Unary::Scale(c) => c,
    }
}

pub(super) fn unary_forward(kind: Unary, x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| unary_apply(kind, v)).collect();
    Tensor::new(x.shape(), data).expect("shape preserved")
}

/// Output shape for the supported broadcasts: equal shapes, a single-element
/// operand, or one shape being a trailing suffix of the other.
fn broadcast_shape(a: &[usize], b: &[usize], op: &'static str) -> Result<Vec<usize>> {
    if a == b {
        return Ok(a.to_vec());
    }
    let (na, nb) = (numel(a), numel(b));
    if nb == 1 {
        return Ok(a.to_vec());
    }
    if na == 1 {
        return Ok(b.to_vec());
    }
    if a.len() >= b.len() && a.ends_with(b) {
        return Ok(a.to_vec());
    }
    if b.len() >= a.len() && b.ends_with(a) {
        return Ok(b.to_vec());
    }
    Err(Error::dim(op, format!("shapes {a:?} and {b:?} are not broadcastable")))
}

pub(super) fn binary_forward(kind: Binary, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let shape = broadcast_shape(a.shape(), b.shape(), kind.name())?;
    let n = numel(&shape);
    let (ad, bd) = (a.data(), b.data());
    let (na, nb) = (ad.len(), bd.len());
    let f = |x: f64, y: f64| match kind {
        Binary::Add => x + y,
        Binary::Sub => x - y,
        Binary::Mul => x * y,
    };
    let data = if na == n && nb == n {
        ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect()
    } else {
        (0..n).map(|i| f(ad[i % na], bd[i % nb])).collect()
    };
    Tensor::new(shape, data)
}

/// Sums a full-size gradient down to an operand broadcast by index modulo.
fn reduce_to(g: &[f64], n: usize) -> Vec<f64> {
    if g.len() == n {
        return g.to_vec();
    }
    let mut out = vec![0.0; n];
    for chunk in g.chunks(n) {
        out.iter_mut().zip(chunk).for_each(|(o, x)| *o += x);
    }
    out
}

enum MatmulLayout {
    /// rhs is a plain matrix shared by every batch row of lhs
    SharedRhs { rows: usize },
    /// both batched with identical batch extents
    Batched { batch: usize },
    /// lhs is a plain matrix shared by every batch of rhs
    SharedLhs { batch: usize },
}

struct MatmulDims {
    p: usize,
    q: usize,
    r: usize,
    layout: MatmulLayout,
    out_shape: Vec<usize>,
}

fn matmul_dims(a: &[usize], b: &[usize]) -> Result<MatmulDims> {
    let err = || Error::dim("matmul", format!("cannot multiply {a:?} by {b:?}"));
    if a.len() < 2 || b.len() < 2 {
        return Err(err());
    }
    let (p, q) = (a[a.len() - 2], a[a.len() - 1]);
    let (q2, r) = (b[b.len() - 2], b[b.len() - 1]);
    if q != q2 {
        return Err(err());
    }
    let (ab, bb) = (&a[..a.len() - 2], &b[..b.len() - 2]);
    let layout = if bb.is_empty() {
        MatmulLayout::SharedRhs {
            rows: numel(ab) * p,
        }
    } else if ab == bb {
        MatmulLayout::Batched { batch: numel(ab) }
    } else if ab.is_empty() {
        MatmulLayout::SharedLhs { batch: numel(bb) }
    } else {
        return Err(err());
    };
    let lead = if ab.len() >= bb.len() { ab } else { bb };
    let mut out_shape = lead.to_vec();
    out_shape.extend([p, r]);
    Ok(MatmulDims {
        p,
        q,
        r,
        layout,
        out_shape,
    })
}

pub(super) fn matmul_forward(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let d = matmul_dims(a.shape(), b.shape())?;
    let mut out = vec![0.0; numel(&d.out_shape)];
    let (p, q, r) = (d.p, d.q, d.r);
    match d.layout {
        MatmulLayout::SharedRhs { rows } => gemm(
            MatRef::row_major(a.data(), rows, q),
            MatRef::row_major(b.data(), q, r),
            &mut out,
            false,
        ),
        MatmulLayout::Batched { batch } => {
            for i in 0..batch {
                gemm(
                    MatRef::row_major(&a.data()[i * p * q..], p, q),
                    MatRef::row_major(&b.data()[i * q * r..], q, r),
                    &mut out[i * p * r..],
                    false,
                );
            }
        }
        MatmulLayout::SharedLhs { batch } => {
            for i in 0..batch {
                gemm(
                    MatRef::row_major(a.data(), p, q),
                    MatRef::row_major(&b.data()[i * q * r..], q, r),
                    &mut out[i * p * r..],
                    false,
                );
            }
        }
    }
    Tensor::new(d.out_shape, out)
}

fn matmul_backward(a_id: usize, b_id: usize, g: &[f64], sink: &mut GradSink<'_>) {
    let a = sink.value(a_id).clone();
    let b = sink.value(b_id).clone();
    let d = matmul_dims(a.shape(), b.shape()).expect("validated in forward");
    let (p, q, r) = (d.p, d.q, d.r);
    let (wa, wb) = (sink.wants(a_id), sink.wants(b_id));
    match d.layout {
        MatmulLayout::SharedRhs { rows } => {
            let gm = MatRef::row_major(g, rows, r);
            if wa {
                let buf = sink.buf(a_id);
                gemm(gm, MatRef::row_major(b.data(), q, r).t(), buf, true);
            }
            if wb {
                let buf = sink.buf(b_id);
                gemm(MatRef::row_major(a.data(), rows, q).t(), gm, buf, true);
            }
        }
        MatmulLayout::Batched { batch } => {
            for i in 0..batch {
                let gm = MatRef::row_major(&g[i * p * r..], p, r);
                if wa {
                    let buf = &mut sink.buf(a_id)[i * p * q..];
                    gemm(gm, MatRef::row_major(&b.data()[i * q * r..], q, r).t(), buf, true);
                }
                if wb {
                    let buf = &mut sink.buf(b_id)[i * q * r..];
                    gemm(MatRef::row_major(&a.data()[i * p * q..], p, q).t(), gm, buf, true);
                }
            }
        }
        MatmulLayout::SharedLhs { batch } => {
            for i in 0..batch {
                let gm = MatRef::row_major(&g[i * p * r..], p, r);
                if wa {
                    let buf = sink.buf(a_id);
                    gemm(gm, MatRef::row_major(&b.data()[i * q * r..], q, r).t(), buf, true);
                }
                if wb {
                    let buf = &mut sink.buf(b_id)[i * q * r..];
                    gemm(MatRef::row_major(a.data(), p, q).t(), gm, buf, true);
                }
            }
        }
    }
}

pub(super) fn slice_last_forward(x: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    let Some(&w) = x.shape().last() else {
        return Err(Error::dim("slice_last", "rank-0 input"));
    };
    if start + len > w {
        return Err(Error::dim(
            "slice_last",
            format!("columns {start}..{} of last extent {w}", start + len),
        ));
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = len;
    let mut data = Vec::with_capacity(numel(&shape));
    for row in x.data().chunks(w.max(1)) {
        data.extend_from_slice(&row[start..start + len]);
    }
    Tensor::new(shape, data)
}

pub(super) fn concat_last_forward(xs: &[&Tensor]) -> Result<Tensor> {
    let lead = |t: &Tensor| t.shape()[..t.rank().saturating_sub(1)].to_vec();
    let first = xs[0];
    if first.rank() == 0 {
        return Err(Error::dim("concat_last", "rank-0 input"));
    }
    let lead0 = lead(first);
    for t in xs {
        if t.rank() == 0 || lead(t) != lead0 {
            return Err(Error::dim(
                "concat_last",
                format!("leading extents {:?} vs {:?}", lead0, t.shape()),
            ));
        }
    }
    let widths: Vec<usize> = xs.iter().map(|t| *t.shape().last().unwrap()).collect();
    let total: usize = widths.iter().sum();
    let rows = numel(&lead0);
    let mut data = Vec::with_capacity(rows * total);
    for r in 0..rows {
        for (t, &w) in xs.iter().zip(&widths) {
            data.extend_from_slice(&t.data()[r * w..(r + 1) * w]);
        }
    }
    let mut shape = lead0;
    shape.push(total);
    Tensor::new(shape, data)
}

pub(super) fn gather_forward(table: &Tensor, indices: &[usize], index_shape: &[usize]) -> Result<Tensor> {
    if table.rank() != 2 {
        return Err(Error::dim(
            "embedding_lookup",
            format!("table must be [rows, width], got {:?}", table.shape()),
        ));
    }
    if numel(index_shape) != indices.len() {
        return Err(Error::dim(
            "embedding_lookup",
            format!("{} indices for index shape {:?}", indices.len(), index_shape),
        ));
    }
    let (v, d) = (table.shape()[0], table.shape()[1]);
    let mut data = Vec::with_capacity(indices.len() * d);
    for &i in indices {
        if i >= v {
            return Err(Error::Index { index: i, len: v });
        }
        data.extend_from_slice(&table.data()[i * d..(i + 1) * d]);
    }
    let mut shape = index_shape.to_vec();
    shape.push(d);
    Tensor::new(shape, data)
}

type LayerNormOut = (Tensor, Vec<f64>, Vec<f64>);

pub(super) fn layer_norm_forward(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<LayerNormOut> {
    let d = x.shape().last().copied().unwrap_or(0);
    if d == 0 {
        return Err(Error::dim("layer_norm", format!("empty last axis in {:?}", x.shape())));
    }
    if gamma.shape() != [d] || beta.shape() != [d] {
        return Err(Error::dim(
            "layer_norm",
            format!("affine {:?}/{:?} for width {d}", gamma.shape(), beta.shape()),
        ));
    }
    if eps <= 0.0 {
        return Err(Error::Config(format!("layer_norm eps must be positive, got {eps}")));
    }
    let rows = x.numel() / d;
    let mut out = Vec::with_capacity(x.numel());
    let mut xhat = Vec::with_capacity(x.numel());
    let mut inv_std = Vec::with_capacity(rows);
    for row in x.data().chunks(d) {
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + eps).sqrt();
        inv_std.push(is);
        for (j, v) in row.iter().enumerate() {
            let h = (v - mean) * is;
            xhat.push(h);
            out.push(h * gamma.data()[j] + beta.data()[j]);
        }
    }
    Ok((Tensor::new(x.shape(), out)?, xhat, inv_std))
}

pub(super) fn causal_conv_forward(x: &Tensor, w: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let [s, l, c] = *x.shape() else {
        return Err(Error::dim("causal_conv1d", format!("input must be [b, l, c], got {:?}", x.shape())));
    };
    if w.rank() != 2 || w.shape()[0] != c || bias.shape() != [c] {
        return Err(Error::dim(
            "causal_conv1d",
            format!("kernel {:?} / bias {:?} for {c} channels", w.shape(), bias.shape()),
        ));
    }
    let k = w.shape()[1];
    let (xd, wd) = (x.data(), w.data());
    let mut out = vec![0.0; x.numel()];
    for b in 0..s {
        for t in 0..l {
            let o = &mut out[(b * l + t) * c..(b * l + t + 1) * c];
            o.copy_from_slice(bias.data());
            for j in 0..k {
                // tap j reads input step t + j - (k - 1)
                let Some(src) = (t + j).checked_sub(k - 1) else { continue };
                let xi = &xd[(b * l + src) * c..(b * l + src + 1) * c];
                for ch in 0..c {
                    o[ch] += wd[ch * k + j] * xi[ch];
                }
            }
        }
    }
    Tensor::new(x.shape(), out)
}

fn causal_conv_backward(ids: [usize; 3], g: &[f64], sink: &mut GradSink<'_>) {
    let [x_id, w_id, b_id] = ids;
    let x = sink.value(x_id).clone();
    let w = sink.value(w_id).clone();
    let (s, l, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let k = w.shape()[1];
    if sink.wants(b_id) {
        let mut gb = vec![0.0; c];
        for row in g.chunks(c) {
            gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
        }
        sink.add_owned(b_id, gb);
    }
    let (wx, ww) = (sink.wants(x_id), sink.wants(w_id));
    let mut gx = if wx { vec![0.0; x.numel()] } else { vec![] };
    let mut gw = if ww { vec![0.0; w.numel()] } else { vec![] };
    for b in 0..s {
        for t in 0..l {
            let go = &g[(b * l + t) * c..(b * l + t + 1) * c];
            for j in 0..k {
                let Some(src) = (t + j).checked_sub(k - 1) else { continue };
                let base = (b * l + src) * c;
                for ch in 0..c {
                    if wx {
                        gx[base + ch] += w.data()[ch * k + j] * go[ch];
                    }
                    if ww {
                        gw[ch * k + j] += x.data()[base + ch] * go[ch];
                    }
                }
            }
        }
    }
    if wx {
        sink.add_owned(x_id, gx);
    }
    if ww {
        sink.add_owned(w_id, gw);
    }
}

/// Inverted-dropout scale factors: `0` with probability `rate`, otherwise `1/(1-rate)`.
#[derive(Clone, Debug)]
pub struct DropoutMask {
    pub scale: Vec<f64>,
}

impl DropoutMask {
    /// Draws a mask from a stream keyed by `(seed, layer, step)`, so the same
    /// key always yields the same mask.
    pub fn sample(n: usize, rate: f64, seed: u64, layer: u64, step: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate must lie in [0, 1), got {rate}")));
        }
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        key[8..16].copy_from_slice(&step.to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(layer);
        let keep = 1.0 / (1.0 - rate);
        let scale = (0..n)
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        Ok(DropoutMask { scale })
    }
}

pub(super) fn backward(op: &Op, out: &Tensor, g: &[f64], sink: &mut GradSink<'_>) {
    match op {
        Op::Leaf => {}
        Op::MatMul { a, b } => matmul_backward(*a, *b, g, sink),
        Op::Binary { kind, a, b } => {
            let (na, nb) = (sink.value(*a).numel(), sink.value(*b).numel());
            match kind {
                Binary::Add => {
                    sink.add_owned(*a, reduce_to(g, na));
                    sink.add_owned(*b, reduce_to(g, nb));
                }
                Binary::Sub => {
                    sink.add_owned(*a, reduce_to(g, na));
                    if sink.wants(*b) {
                        let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                        sink.add_owned(*b, reduce_to(&neg, nb));
                    }
                }
                Binary::Mul => {
                    let av = sink.value(*a).clone();
                    let bv = sink.value(*b).clone();
                    let n = g.len();
                    if sink.wants(*a) {
                        let ga: Vec<f64> = (0..n).map(|i| g[i] * bv.data()[i % nb]).collect();
                        sink.add_owned(*a, reduce_to(&ga, na));
                    }
                    if sink.wants(*b) {
                        let gb: Vec<f64> = (0..n).map(|i| g[i] * av.data()[i % na]).collect();
                        sink.add_owned(*b, reduce_to(&gb, nb));
                    }
                }
            }
        }
        Op::Unary { kind, x } => {
            let xv = sink.value(*x);
            let gx: Vec<f64> = g
                .iter()
                .zip(xv.data())
                .zip(out.data())
                .map(|((gi, &xi), &yi)| gi * unary_deriv(*kind, xi, yi))
                .collect();
            sink.add_owned(*x, gx);
        }
        Op::Sum { x, mean } => {
            let n = sink.value(*x).numel();
            let v = if *mean { g[0] / n as f64 } else { g[0] };
            sink.add_owned(*x, vec![v; n]);
        }
        Op::Reshape { x } => sink.add(*x, g),
        Op::Permute { x, axes } => {
            let gx = permute_data(g, out.shape(), &inverse_permutation(axes));
            sink.add_owned(*x, gx);
        }
        Op::ConcatLast { xs } => {
            let widths: Vec<usize> = xs
                .iter()
                .map(|&i| *sink.value(i).shape().last().unwrap())
                .collect();
            let total: usize = widths.iter().sum();
            let rows = g.len() / total.max(1);
            let mut offset = 0;
            for (&id, &w) in xs.iter().zip(&widths) {
                if sink.wants(id) {
                    let mut gi = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        gi.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                    }
                    sink.add_owned(id, gi);
                }
                offset += w;
            }
        }
        Op::SliceLast { x, start, len } => {
            if !sink.wants(*x) {
                return;
            }
            let w = *sink.value(*x).shape().last().unwrap();
            let buf = sink.buf(*x);
            for (r, row) in g.chunks(*len).enumerate() {
                buf[r * w + start..r * w + start + len]
                    .iter_mut()
                    .zip(row)
                    .for_each(|(a, b)| *a += b);
            }
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
        } => {
            let gam = sink.value(*gamma).clone();
            let d = gam.numel();
            if sink.wants(*gamma) || sink.wants(*beta) {
                let mut gg = vec![0.0; d];
                let mut gbeta = vec![0.0; d];
                for (grow, hrow) in g.chunks(d).zip(xhat.chunks(d)) {
                    for j in 0..d {
                        gg[j] += grow[j] * hrow[j];
                        gbeta[j] += grow[j];
                    }
                }
                sink.add_owned(*gamma, gg);
                sink.add_owned(*beta, gbeta);
            }
            if sink.wants(*x) {
                let mut gx = Vec::with_capacity(g.len());
                let mut dh = vec![0.0; d];
                for ((grow, hrow), is) in g.chunks(d).zip(xhat.chunks(d)).zip(inv_std) {
                    let mut s1 = 0.0;
                    let mut s2 = 0.0;
                    for j in 0..d {
                        dh[j] = grow[j] * gam.data()[j];
                        s1 += dh[j];
                        s2 += dh[j] * hrow[j];
                    }
                    let dn = d as f64;
                    for j in 0..d {
                        gx.push(is / dn * (dn * dh[j] - s1 - hrow[j] * s2));
                    }
                }
                sink.add_owned(*x, gx);
            }
        }
        Op::Gather { table, indices } => {
            if !sink.wants(*table) {
                return;
            }
            let d = sink.value(*table).shape()[1];
            let buf = sink.buf(*table);
            for (k, &i) in indices.iter().enumerate() {
                buf[i * d..(i + 1) * d]
                    .iter_mut()
                    .zip(&g[k * d..(k + 1) * d])
                    .for_each(|(a, b)| *a += b);
            }
        }
        Op::Mask { x, mask } => {
            let gx = g.iter().zip(mask.iter()).map(|(a, m)| a * m).collect();
            sink.add_owned(*x, gx);
        }
        Op::CausalConv { x, w, b } => causal_conv_backward([*x, *w, *b], g, sink),
        Op::Scan { ids } => {
            let vals: Vec<Rc<Tensor>> = ids.iter().map(|&i| sink.value(i)).collect();
            let inputs = crate::ssm::fused::ScanInputs {
                u: &vals[0],
                delta: &vals[1],
                a: &vals[2],
                b: &vals[3],
                c: &vals[4],
                d_skip: &vals[5],
            };
            let grads = crate::ssm::fused::backward(&inputs, g);
            for (id, gi) in ids.iter().zip(grads) {
                sink.add_owned(*id, gi);
            }
        }
    }
}
