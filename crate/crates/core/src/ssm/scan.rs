//! Discretisation and the diagonal linear recurrence
//! `x_k = Ā_k ⊙ x_{k-1} + B̄_k ⊙ u_k`, `y_k = Σ_n C_k ⊙ x_k + D ⊙ u_k`.
//!
//! Two evaluation orders share one step kernel: a plain left-to-right loop,
//! and a chunked scan over [`ScanElement`]s whose chunks run on the rayon pool.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Work counters collected while scanning.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ScanStats {
    /// Floating-point multiplies and adds performed.
    pub flops: u64,
}

/// One affine map `x ↦ a ⊙ x + b` over a `[d, n]` state.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanElement {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl ScanElement {
    pub fn identity(len: usize) -> Self {
        ScanElement {
            a: vec![1.0; len],
            b: vec![0.0; len],
        }
    }

    /// Composition "apply `earlier`, then `self`":
    /// `(a2, b2) ∘ (a1, b1) = (a2 ⊙ a1, a2 ⊙ b1 + b2)`.
    pub fn combine(&self, earlier: &ScanElement) -> ScanElement {
        let a = self.a.iter().zip(&earlier.a).map(|(a2, a1)| a2 * a1).collect();
        let b = self
            .a
            .iter()
            .zip(&earlier.b)
            .zip(&self.b)
            .map(|((a2, b1), b2)| a2 * b1 + b2)
            .collect();
        ScanElement { a, b }
    }

    /// Applies the map to a state in place.
    pub fn apply(&self, x: &mut [f64]) {
        for ((xi, a), b) in x.iter_mut().zip(&self.a).zip(&self.b) {
            *xi = a * *xi + b;
        }
    }
}

/// Zero-order hold on the diagonal transition and an Euler rule on the input
/// matrix: `Ā[k] = exp(Δ_k ⊗ A)`, `B̄[k] = Δ_k ⊗ B_k`.
///
/// `a: [d, n]` strictly negative, `b: [l, n]`, `delta: [l, d]` strictly positive.
/// Returns `(Ā, B̄)`, both `[l, d, n]`.
pub fn discretize(a: &Tensor, b: &Tensor, delta: &Tensor) -> Result<(Tensor, Tensor)> {
    let [d, n] = *a.shape() else {
        return Err(Error::dim("discretize", format!("A must be [d, n], got {:?}", a.shape())));
    };
    let [l, d2] = *delta.shape() else {
        return Err(Error::dim("discretize", format!("delta must be [l, d], got {:?}", delta.shape())));
    };
    if d2 != d || b.shape() != [l, n] {
        return Err(Error::dim(
            "discretize",
            format!("A {:?}, B {:?}, delta {:?}", a.shape(), b.shape(), delta.shape()),
        ));
    }
    if let Some(i) = delta.data().iter().position(|&v| v.is_nan() || v <= 0.0) {
        return Err(Error::Contract(format!("step size must be positive, delta[{i}] = {}", delta.data()[i])));
    }
    if let Some(i) = a.data().iter().position(|&v| v.is_nan() || v >= 0.0) {
        return Err(Error::Contract(format!("A must be strictly negative, A[{i}] = {}", a.data()[i])));
    }
    let mut a_bar = Vec::with_capacity(l * d * n);
    let mut b_bar = Vec::with_capacity(l * d * n);
    for k in 0..l {
        let bk = &b.data()[k * n..(k + 1) * n];
        for ch in 0..d {
            let dt = delta.data()[k * d + ch];
            let arow = &a.data()[ch * n..(ch + 1) * n];
            a_bar.extend(arow.iter().map(|&av| (dt * av).exp()));
            b_bar.extend(bk.iter().map(|&bv| dt * bv));
        }
    }
    Ok((Tensor::new([l, d, n], a_bar)?, Tensor::new([l, d, n], b_bar)?))
}

/// Shapes of one scan problem.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ScanDims {
    pub l: usize,
    pub d: usize,
    pub n: usize,
}

fn check_dims(a_bar: &Tensor, b_bar: &Tensor, u: &Tensor, c: &Tensor, d_skip: &Tensor) -> Result<ScanDims> {
    let bad = || {
        Error::dim(
            "selective_scan",
            format!(
                "Ā {:?}, B̄ {:?}, u {:?}, C {:?}, D {:?}",
                a_bar.shape(),
                b_bar.shape(),
                u.shape(),
                c.shape(),
                d_skip.shape()
            ),
        )
    };
    let [l, d, n] = *a_bar.shape() else { return Err(bad()) };
    if b_bar.shape() != [l, d, n] || u.shape() != [l, d] || c.shape() != [l, n] || d_skip.shape() != [d] {
        return Err(bad());
    }
    Ok(ScanDims { l, d, n })
}

/// Advances the state by one step and writes `y_k`. Shared by both scan
/// orders so a single-chunk parallel scan reproduces the sequential one bit
/// for bit.
#[inline]
pub(crate) fn step(
    x: &mut [f64],
    a_bar: &[f64],
    b_bar: &[f64],
    u: &[f64],
    c: &[f64],
    d_skip: &[f64],
    y: &mut [f64],
    n: usize,
) {
    for ch in 0..u.len() {
        let uk = u[ch];
        let xs = &mut x[ch * n..(ch + 1) * n];
        let ar = &a_bar[ch * n..(ch + 1) * n];
        let br = &b_bar[ch * n..(ch + 1) * n];
        let mut acc = 0.0;
        for j in 0..n {
            xs[j] = ar[j] * xs[j] + br[j] * uk;
            acc += c[j] * xs[j];
        }
        y[ch] = acc + d_skip[ch] * uk;
    }
}

#[inline]
fn step_flops(dims: ScanDims) -> u64 {
    // state update: 2 mul + 1 add; readout: 1 mul + 1 add; skip: 1 mul + 1 add
    (dims.d * dims.n * 5 + dims.d * 2) as u64
}

pub(crate) fn sequential_kernel(
    dims: ScanDims,
    a_bar: &[f64],
    b_bar: &[f64],
    u: &[f64],
    c: &[f64],
    d_skip: &[f64],
    y: &mut [f64],
    stats: &mut ScanStats,
) {
    let ScanDims { l, d, n } = dims;
    let mut x = vec![0.0; d * n];
    for k in 0..l {
        let s = k * d * n;
        step(
            &mut x,
            &a_bar[s..s + d * n],
            &b_bar[s..s + d * n],
            &u[k * d..(k + 1) * d],
            &c[k * n..(k + 1) * n],
            d_skip,
            &mut y[k * d..(k + 1) * d],
            n,
        );
        stats.flops += step_flops(dims);
    }
}

/// Reference recurrence with `x_0 = 0`.
///
/// `a_bar, b_bar: [l, d, n]`, `u: [l, d]`, `c: [l, n]`, `d_skip: [d]` → `y: [l, d]`.
pub fn selective_scan_sequential(
    a_bar: &Tensor,
    b_bar: &Tensor,
    u: &Tensor,
    c: &Tensor,
    d_skip: &Tensor,
) -> Result<Tensor> {
    Ok(selective_scan_sequential_counted(a_bar, b_bar, u, c, d_skip)?.0)
}

pub fn selective_scan_sequential_counted(
    a_bar: &Tensor,
    b_bar: &Tensor,
    u: &Tensor,
    c: &Tensor,
    d_skip: &Tensor,
) -> Result<(Tensor, ScanStats)> {
    let dims = check_dims(a_bar, b_bar, u, c, d_skip)?;
    let mut y = vec![0.0; dims.l * dims.d];
    let mut stats = ScanStats::default();
    sequential_kernel(
        dims,
        a_bar.data(),
        b_bar.data(),
        u.data(),
        c.data(),
        d_skip.data(),
        &mut y,
        &mut stats,
    );
    Ok((Tensor::new([dims.l, dims.d], y)?, stats))
}

/// Chunked scan: each chunk is reduced to one [`ScanElement`] (up-sweep), a
/// serial pass turns those into carry-in states, then every chunk replays its
/// steps from its carry-in (down-sweep). Same contract as
/// [`selective_scan_sequential`].
pub fn selective_scan_parallel(
    a_bar: &Tensor,
    b_bar: &Tensor,
    u: &Tensor,
    c: &Tensor,
    d_skip: &Tensor,
    chunk: usize,
) -> Result<Tensor> {
    Ok(selective_scan_parallel_counted(a_bar, b_bar, u, c, d_skip, chunk)?.0)
}

pub fn selective_scan_parallel_counted(
    a_bar: &Tensor,
    b_bar: &Tensor,
    u: &Tensor,
    c: &Tensor,
    d_skip: &Tensor,
    chunk: usize,
) -> Result<(Tensor, ScanStats)> {
    if chunk == 0 {
        return Err(Error::Config("scan chunk size must be at least 1".into()));
    }
    let dims = check_dims(a_bar, b_bar, u, c, d_skip)?;
    let mut y = vec![0.0; dims.l * dims.d];
    let stats = parallel_kernel(
        dims,
        a_bar.data(),
        b_bar.data(),
        u.data(),
        c.data(),
        d_skip.data(),
        &mut y,
        chunk,
        true,
    );
    Ok((Tensor::new([dims.l, dims.d], y)?, stats))
}

/// Reduces steps `range` to a single element: the composition of
/// `(Ā_k, B̄_k ⊙ u_k)` over the chunk.
fn chunk_aggregate(
    dims: ScanDims,
    a_bar: &[f64],
    b_bar: &[f64],
    u: &[f64],
    range: std::ops::Range<usize>,
) -> (ScanElement, u64) {
    let ScanDims { d, n, .. } = dims;
    let dn = d * n;
    let mut agg = ScanElement::identity(dn);
    let mut flops = 0u64;
    for k in range {
        let (ak, bk) = (&a_bar[k * dn..(k + 1) * dn], &b_bar[k * dn..(k + 1) * dn]);
        for ch in 0..d {
            let uk = u[k * d + ch];
            for j in 0..n {
                let i = ch * n + j;
                agg.b[i] = ak[i] * agg.b[i] + bk[i] * uk;
                agg.a[i] *= ak[i];
            }
        }
        flops += (dn * 4) as u64;
    }
    (agg, flops)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn parallel_kernel(
    dims: ScanDims,
    a_bar: &[f64],
    b_bar: &[f64],
    u: &[f64],
    c: &[f64],
    d_skip: &[f64],
    y: &mut [f64],
    chunk: usize,
    use_pool: bool,
) -> ScanStats {
    let ScanDims { l, d, n } = dims;
    if l == 0 {
        return ScanStats::default();
    }
    let dn = d * n;
    let n_chunks = l.div_ceil(chunk);
    let range = |ci: usize| ci * chunk..((ci + 1) * chunk).min(l);

    // up-sweep: the last chunk's aggregate is never needed
    let agg = |ci: usize| chunk_aggregate(dims, a_bar, b_bar, u, range(ci));
    let aggregates: Vec<(ScanElement, u64)> = if use_pool {
        (0..n_chunks - 1).into_par_iter().map(agg).collect()
    } else {
        (0..n_chunks - 1).map(agg).collect()
    };

    // carry-in state for each chunk
    let mut carries = Vec::with_capacity(n_chunks);
    let mut carry = vec![0.0; dn];
    let mut flops: u64 = aggregates.iter().map(|(_, f)| f).sum();
    carries.push(carry.clone());
    for (e, _) in &aggregates {
        e.apply(&mut carry);
        flops += (dn * 2) as u64;
        carries.push(carry.clone());
    }

    // down-sweep
    let replay = |(ci, ys): (usize, &mut [f64])| {
        let mut x = carries[ci].clone();
        for (off, k) in range(ci).enumerate() {
            let s = k * dn;
            step(
                &mut x,
                &a_bar[s..s + dn],
                &b_bar[s..s + dn],
                &u[k * d..(k + 1) * d],
                &c[k * n..(k + 1) * n],
                d_skip,
                &mut ys[off * d..(off + 1) * d],
                n,
            );
        }
    };
    if use_pool {
        y[..l * d].par_chunks_mut(chunk * d).enumerate().for_each(replay);
    } else {
        y[..l * d].chunks_mut(chunk * d).enumerate().for_each(replay);
    }
    flops += l as u64 * step_flops(dims);
    ScanStats { flops }
}

/// Discretised scan inputs for one sequence.
#[derive(Clone, Debug)]
pub struct ScanInstance {
    /// `[l, d, n]`
    pub a_bar: Tensor,
    /// `[l, d, n]`
    pub b_bar: Tensor,
    /// `[l, d]`
    pub u: Tensor,
    /// `[l, n]`
    pub c: Tensor,
    /// `[d]`
    pub d_skip: Tensor,
}

impl ScanInstance {
    /// Seeded instance with `A = -exp(ln(j + 1))`, step sizes log-uniform in
    /// `[1e-3, 0.1]` and unit-scale inputs, discretised like the model does.
    pub fn random(l: usize, d: usize, n: usize, seed: u64) -> Result<Self> {
        let mut rng = crate::init::substream(seed, "scan_instance");
        let a = Tensor::from_fn([d, n], |i| -((i % n) as f64 + 1.0));
        let delta = Tensor::from_fn([l, d], |_| rng.gen_range(0.001f64.ln()..0.1f64.ln()).exp());
        let b = Tensor::from_fn([l, n], |_| rng.gen_range(-1.0..1.0));
        let (a_bar, b_bar) = discretize(&a, &b, &delta)?;
        Ok(ScanInstance {
            a_bar,
            b_bar,
            u: Tensor::from_fn([l, d], |_| rng.gen_range(-1.0..1.0)),
            c: Tensor::from_fn([l, n], |_| rng.gen_range(-1.0..1.0)),
            d_skip: Tensor::from_fn([d], |_| rng.gen_range(-1.0..1.0)),
        })
    }

    pub fn sequential(&self) -> Result<(Tensor, ScanStats)> {
        selective_scan_sequential_counted(&self.a_bar, &self.b_bar, &self.u, &self.c, &self.d_skip)
    }

    pub fn parallel(&self, chunk: usize) -> Result<(Tensor, ScanStats)> {
        selective_scan_parallel_counted(&self.a_bar, &self.b_bar, &self.u, &self.c, &self.d_skip, chunk)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn discretize_closed_forms() {
        let ln2 = std::f64::consts::LN_2;
        let (ab, _) = discretize(&t(&[1, 1], &[-1.0]), &t(&[1, 1], &[1.0]), &t(&[1, 1], &[ln2])).unwrap();
        assert!((ab.data()[0] - 0.5).abs() < 1e-15);
        let (_, bb) = discretize(&t(&[1, 1], &[-1.0]), &t(&[1, 1], &[2.0]), &t(&[1, 1], &[0.1])).unwrap();
        assert!((bb.data()[0] - 0.2).abs() < 1e-15);
        // small-step limit
        let (ab, bb) = discretize(&t(&[1, 1], &[-3.0]), &t(&[1, 1], &[2.0]), &t(&[1, 1], &[1e-14])).unwrap();
        assert!((ab.data()[0] - 1.0).abs() < 1e-12 && bb.data()[0].abs() < 1e-12);
    }

    #[test]
    fn discretize_rejects_bad_inputs() {
        let a = t(&[1, 1], &[-1.0]);
        let b = t(&[1, 1], &[1.0]);
        assert!(matches!(discretize(&a, &b, &t(&[1, 1], &[0.0])), Err(Error::Contract(_))));
        assert!(matches!(discretize(&t(&[1, 1], &[0.5]), &b, &t(&[1, 1], &[0.1])), Err(Error::Contract(_))));
        assert!(matches!(discretize(&a, &b, &t(&[2, 1], &[0.1, 0.1])), Err(Error::Dimension { .. })));
    }

    #[test]
    fn single_step_has_no_history_term() {
        let y = selective_scan_sequential(
            &t(&[1, 1, 2], &[0.3, 0.7]),
            &t(&[1, 1, 2], &[2.0, 5.0]),
            &t(&[1, 1], &[3.0]),
            &t(&[1, 2], &[1.0, -1.0]),
            &t(&[1], &[0.5]),
        )
        .unwrap();
        // C·(B̄ u) + D u = (6 - 15) + 1.5
        assert_eq!(y.data(), &[-7.5]);
    }

    #[test]
    fn unit_recurrence_is_a_running_count() {
        let l = 6;
        let ones = |s: &[usize]| Tensor::full(s.to_vec(), 1.0);
        let y = selective_scan_sequential(&ones(&[l, 1, 1]), &ones(&[l, 1, 1]), &ones(&[l, 1]), &ones(&[l, 1]), &Tensor::zeros([1]))
            .unwrap();
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn empty_sequence_gives_empty_output() {
        let y = selective_scan_sequential(
            &Tensor::zeros([0, 2, 3]),
            &Tensor::zeros([0, 2, 3]),
            &Tensor::zeros([0, 2]),
            &Tensor::zeros([0, 3]),
            &Tensor::zeros([2]),
        )
        .unwrap();
        assert_eq!(y.shape(), &[0, 2]);
        let y = selective_scan_parallel(
            &Tensor::zeros([0, 2, 3]),
            &Tensor::zeros([0, 2, 3]),
            &Tensor::zeros([0, 2]),
            &Tensor::zeros([0, 3]),
            &Tensor::zeros([2]),
            4,
        )
        .unwrap();
        assert_eq!(y.numel(), 0);
    }

    #[test]
    fn zero_chunk_is_rejected() {
        let z = |s: &[usize]| Tensor::zeros(s.to_vec());
        assert!(selective_scan_parallel(&z(&[2, 1, 1]), &z(&[2, 1, 1]), &z(&[2, 1]), &z(&[2, 1]), &z(&[1]), 0).is_err());
    }

    #[test]
    fn combine_is_associative() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut el = || ScanElement {
            a: (0..24).map(|_| rng.gen_range(0.0..1.0)).collect(),
            b: (0..24).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        };
        let (e1, e2, e3) = (el(), el(), el());
        let left = e3.combine(&e2).combine(&e1);
        let right = e3.combine(&e2.combine(&e1));
        for (x, y) in left.a.iter().chain(&left.b).zip(right.a.iter().chain(&right.b)) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
