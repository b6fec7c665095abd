//! Batched selective scan as a single differentiable operation.
//!
//! Forward discretises each step on the fly and runs the shared step kernel.
//! Backward recomputes the states of one sequence at a time instead of
//! keeping `[s, l, d, n]` states alive between passes.

use rayon::prelude::*;

use super::scan::{parallel_kernel, step, ScanDims};
use super::ScanMode;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Sequences per backward work item. Fixed so the reduction order of the
/// shared `A` and `D` gradients does not depend on the thread count.
const BACKWARD_GROUP: usize = 16;

pub struct ScanInputs<'a> {
    /// `[s, l, d]`
    pub u: &'a Tensor,
    /// `[s, l, d]`, positive
    pub delta: &'a Tensor,
    /// `[d, n]`, negative
    pub a: &'a Tensor,
    /// `[s, l, n]`
    pub b: &'a Tensor,
    /// `[s, l, n]`
    pub c: &'a Tensor,
    /// `[d]`
    pub d_skip: &'a Tensor,
}

struct Dims {
    s: usize,
    l: usize,
    d: usize,
    n: usize,
}

fn dims(x: &ScanInputs<'_>) -> Result<Dims> {
    let bad = || {
        Error::dim(
            "selective_scan",
            format!(
                "u {:?}, delta {:?}, A {:?}, B {:?}, C {:?}, D {:?}",
                x.u.shape(),
                x.delta.shape(),
                x.a.shape(),
                x.b.shape(),
                x.c.shape(),
                x.d_skip.shape()
            ),
        )
    };
    let [s, l, d] = *x.u.shape() else { return Err(bad()) };
    let [d2, n] = *x.a.shape() else { return Err(bad()) };
    if d2 != d
        || x.delta.shape() != [s, l, d]
        || x.b.shape() != [s, l, n]
        || x.c.shape() != [s, l, n]
        || x.d_skip.shape() != [d]
    {
        return Err(bad());
    }
    Ok(Dims { s, l, d, n })
}

/// Ā and B̄ rows for step `k` of one sequence.
#[inline]
fn discretize_step(delta: &[f64], a: &[f64], b: &[f64], n: usize, a_bar: &mut [f64], b_bar: &mut [f64]) {
    for (ch, &dt) in delta.iter().enumerate() {
        let ar = &a[ch * n..(ch + 1) * n];
        for j in 0..n {
            a_bar[ch * n + j] = (dt * ar[j]).exp();
            b_bar[ch * n + j] = dt * b[j];
        }
    }
}

pub fn forward(x: &ScanInputs<'_>, mode: ScanMode) -> Result<Tensor> {
    let Dims { s, l, d, n } = dims(x)?;
    let mut y = vec![0.0; s * l * d];
    if s * l * d == 0 {
        return Tensor::new([s, l, d], y);
    }
    let (u, delta, a, b, c, dsk) = (
        x.u.data(),
        x.delta.data(),
        x.a.data(),
        x.b.data(),
        x.c.data(),
        x.d_skip.data(),
    );
    y.par_chunks_mut(l * d).enumerate().for_each(|(seq, ys)| {
        let us = &u[seq * l * d..(seq + 1) * l * d];
        let ds = &delta[seq * l * d..(seq + 1) * l * d];
        let bs = &b[seq * l * n..(seq + 1) * l * n];
        let cs = &c[seq * l * n..(seq + 1) * l * n];
        match mode {
            ScanMode::Sequential => {
                let mut state = vec![0.0; d * n];
                let mut a_bar = vec![0.0; d * n];
                let mut b_bar = vec![0.0; d * n];
                for k in 0..l {
                    discretize_step(&ds[k * d..(k + 1) * d], a, &bs[k * n..(k + 1) * n], n, &mut a_bar, &mut b_bar);
                    step(
                        &mut state,
                        &a_bar,
                        &b_bar,
                        &us[k * d..(k + 1) * d],
                        &cs[k * n..(k + 1) * n],
                        dsk,
                        &mut ys[k * d..(k + 1) * d],
                        n,
                    );
                }
            }
            ScanMode::Parallel { chunk } => {
                let mut a_bar = vec![0.0; l * d * n];
                let mut b_bar = vec![0.0; l * d * n];
                for k in 0..l {
                    let r = k * d * n..(k + 1) * d * n;
                    discretize_step(
                        &ds[k * d..(k + 1) * d],
                        a,
                        &bs[k * n..(k + 1) * n],
                        n,
                        &mut a_bar[r.clone()],
                        &mut b_bar[r],
                    );
                }
                parallel_kernel(ScanDims { l, d, n }, &a_bar, &b_bar, us, cs, dsk, ys, chunk.max(1), false);
            }
        }
    });
    Tensor::new([s, l, d], y)
}

struct GroupGrads {
    gu: Vec<f64>,
    gdelta: Vec<f64>,
    gb: Vec<f64>,
    gc: Vec<f64>,
    ga: Vec<f64>,
    gd: Vec<f64>,
}

/// Gradients w.r.t. `[u, delta, a, b, c, d_skip]` given `dL/dy`.
pub fn backward(x: &ScanInputs<'_>, gy: &[f64]) -> [Vec<f64>; 6] {
    let Dims { s, l, d, n } = dims(x).expect("validated in forward");
    let (u, delta, a, b, c, dsk) = (
        x.u.data(),
        x.delta.data(),
        x.a.data(),
        x.b.data(),
        x.c.data(),
        x.d_skip.data(),
    );
    let dn = d * n;
    let groups: Vec<GroupGrads> = (0..s.div_ceil(BACKWARD_GROUP))
        .into_par_iter()
        .map(|gi| {
            let seqs = gi * BACKWARD_GROUP..((gi + 1) * BACKWARD_GROUP).min(s);
            let count = seqs.len();
            let mut out = GroupGrads {
                gu: vec![0.0; count * l * d],
                gdelta: vec![0.0; count * l * d],
                gb: vec![0.0; count * l * n],
                gc: vec![0.0; count * l * n],
                ga: vec![0.0; dn],
                gd: vec![0.0; d],
            };
            // states[k] = x_k, a_bars[k] = Ā_k for one sequence
            let mut states = vec![0.0; l * dn];
            let mut a_bars = vec![0.0; l * dn];
            let mut b_bar = vec![0.0; dn];
            let mut gx = vec![0.0; dn];
            for (local, seq) in seqs.enumerate() {
                let us = &u[seq * l * d..(seq + 1) * l * d];
                let ds = &delta[seq * l * d..(seq + 1) * l * d];
                let bs = &b[seq * l * n..(seq + 1) * l * n];
                let cs = &c[seq * l * n..(seq + 1) * l * n];
                let gys = &gy[seq * l * d..(seq + 1) * l * d];

                for k in 0..l {
                    let (prev, cur) = states.split_at_mut(k * dn);
                    let cur = &mut cur[..dn];
                    discretize_step(
                        &ds[k * d..(k + 1) * d],
                        a,
                        &bs[k * n..(k + 1) * n],
                        n,
                        &mut a_bars[k * dn..(k + 1) * dn],
                        &mut b_bar,
                    );
                    let ab = &a_bars[k * dn..(k + 1) * dn];
                    for ch in 0..d {
                        let uk = us[k * d + ch];
                        for j in 0..n {
                            let i = ch * n + j;
                            let xp = if k == 0 { 0.0 } else { prev[(k - 1) * dn + i] };
                            cur[i] = ab[i] * xp + b_bar[i] * uk;
                        }
                    }
                }

                let gu = &mut out.gu[local * l * d..(local + 1) * l * d];
                let gdelta = &mut out.gdelta[local * l * d..(local + 1) * l * d];
                let gb = &mut out.gb[local * l * n..(local + 1) * l * n];
                let gc = &mut out.gc[local * l * n..(local + 1) * l * n];
                gx.fill(0.0);
                for k in (0..l).rev() {
                    let bk = &bs[k * n..(k + 1) * n];
                    let ck = &cs[k * n..(k + 1) * n];
                    let xk = &states[k * dn..(k + 1) * dn];
                    let ab = &a_bars[k * dn..(k + 1) * dn];
                    for ch in 0..d {
                        let g = gys[k * d + ch];
                        let dt = ds[k * d + ch];
                        let uk = us[k * d + ch];
                        out.gd[ch] += g * uk;
                        let mut gdt = 0.0;
                        let mut gu_acc = g * dsk[ch];
                        for j in 0..n {
                            let i = ch * n + j;
                            let av = a[i];
                            let abar = ab[i];
                            let xp = if k == 0 { 0.0 } else { states[(k - 1) * dn + i] };
                            // total derivative w.r.t. x_k
                            let gxk = gx[i] + g * ck[j];
                            gc[k * n + j] += g * xk[i];
                            let gab = gxk * xp;
                            gdt += gab * abar * av + gxk * bk[j] * uk;
                            out.ga[i] += gab * abar * dt;
                            gb[k * n + j] += gxk * dt * uk;
                            gu_acc += gxk * dt * bk[j];
                            gx[i] = gxk * abar;
                        }
                        gdelta[k * d + ch] += gdt;
                        gu[k * d + ch] += gu_acc;
                    }
                }
            }
            out
        })
        .collect();

    let mut gu = Vec::with_capacity(s * l * d);
    let mut gdelta = Vec::with_capacity(s * l * d);
    let mut gb = Vec::with_capacity(s * l * n);
    let mut gc = Vec::with_capacity(s * l * n);
    let mut ga = vec![0.0; dn];
    let mut gd = vec![0.0; d];
    for g in groups {
        gu.extend(g.gu);
        gdelta.extend(g.gdelta);
        gb.extend(g.gb);
        gc.extend(g.gc);
        ga.iter_mut().zip(&g.ga).for_each(|(x, y)| *x += y);
        gd.iter_mut().zip(&g.gd).for_each(|(x, y)| *x += y);
    }
    [gu, gdelta, ga, gb, gc, gd]
}
