use rand::Rng;

use super::{ScanMode, SelectiveSSMConfig};
use crate::autodiff::{selective_scan, DropoutMask, Var};
use crate::error::{Error, Result};
use crate::init::{inv_softplus, uniform, xavier};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Dropout settings for one training step. `None` in place of this means
/// evaluation mode.
#[derive(Clone, Copy, Debug)]
pub struct DropoutCtx {
    pub rate: f64,
    pub seed: u64,
    pub step: u64,
}

impl DropoutCtx {
    pub fn mask(&self, n: usize, layer: u64) -> Result<Option<DropoutMask>> {
        if self.rate == 0.0 {
            return Ok(None);
        }
        DropoutMask::sample(n, self.rate, self.seed, layer, self.step).map(Some)
    }
}

pub(crate) fn apply_dropout<'t>(x: Var<'t>, ctx: Option<&DropoutCtx>, layer: u64) -> Result<Var<'t>> {
    match ctx {
        Some(c) => {
            let n = x.value().numel();
            let mask = c.mask(n, layer)?;
            x.dropout(mask.as_ref())
        }
        None => Ok(x),
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNormParams {
    pub fn new(store: &mut ParamStore, prefix: &str, width: usize) -> Result<Self> {
        Ok(LayerNormParams {
            gamma: store.add(format!("{prefix}.gamma"), Tensor::full([width], 1.0))?,
            beta: store.add(format!("{prefix}.beta"), Tensor::zeros([width]))?,
        })
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        x.layer_norm(p[self.gamma], p[self.beta], LAYER_NORM_EPS)
    }
}

/// Gated selective-SSM block.
///
/// `u → in_proj → (v, g)`; `v → causal depthwise conv → silu`;
/// `x_proj(v) → (Δ-latent, B, C)`; `Δ = softplus(dt_proj(Δ-latent) + dt_bias)`;
/// `y = scan(v; Δ, A = -exp(a_log), B, C, D)`; `out = out_proj(y ⊙ silu(g))`.
#[derive(Clone, Debug)]
pub struct MambaBlock {
    pub cfg: SelectiveSSMConfig,
    pub in_proj: ParamId,
    pub conv_w: ParamId,
    pub conv_b: ParamId,
    pub x_proj: ParamId,
    pub dt_proj: ParamId,
    pub dt_bias: ParamId,
    pub a_log: ParamId,
    pub d_skip: ParamId,
    pub out_proj: ParamId,
}

impl MambaBlock {
    pub fn new(store: &mut ParamStore, prefix: &str, cfg: &SelectiveSSMConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let (dm, di, n, r, k) = (cfg.d_model, cfg.d_inner(), cfg.state_dim, cfg.dt_rank, cfg.conv_kernel);
        let conv_bound = 1.0 / (k as f64).sqrt();
        let dt_bound = 1.0 / (r as f64).sqrt();
        // Δ at init spans [1e-3, 0.1] log-uniformly
        let dt_bias = Tensor::from_fn([di], |_| {
            let dt = (rng.gen_range(0.001f64.ln()..0.1f64.ln())).exp();
            inv_softplus(dt)
        });
        let a_log = Tensor::from_fn([di, n], |i| ((i % n) as f64 + 1.0).ln());
        Ok(MambaBlock {
            cfg: cfg.clone(),
            in_proj: store.add(format!("{prefix}.in_proj"), xavier(dm, 2 * di, rng))?,
            conv_w: store.add(format!("{prefix}.conv_w"), uniform([di, k], conv_bound, rng))?,
            conv_b: store.add(format!("{prefix}.conv_b"), uniform([di], conv_bound, rng))?,
            x_proj: store.add(format!("{prefix}.x_proj"), xavier(di, r + 2 * n, rng))?,
            dt_proj: store.add(format!("{prefix}.dt_proj"), uniform([r, di], dt_bound, rng))?,
            dt_bias: store.add(format!("{prefix}.dt_bias"), dt_bias)?,
            a_log: store.add(format!("{prefix}.a_log"), a_log)?,
            d_skip: store.add(format!("{prefix}.d_skip"), Tensor::full([di], 1.0))?,
            out_proj: store.add(format!("{prefix}.out_proj"), xavier(di, dm, rng))?,
        })
    }

    /// `u: [s, l, d_model]` → `[s, l, d_model]`, causal along `l`.
    pub fn forward<'t>(&self, p: &Bound<'t>, u: Var<'t>, mode: ScanMode) -> Result<Var<'t>> {
        let shape = u.shape();
        let [s, l, dm] = shape[..] else {
            return Err(Error::dim("mamba_block", format!("input must be [s, l, d], got {shape:?}")));
        };
        if dm != self.cfg.d_model {
            return Err(Error::dim(
                "mamba_block",
                format!("input width {dm}, block width {}", self.cfg.d_model),
            ));
        }
        let (di, n, r) = (self.cfg.d_inner(), self.cfg.state_dim, self.cfg.dt_rank);
        let xz = u.matmul(p[self.in_proj])?;
        let v = xz.slice_last(0, di)?;
        let g = xz.slice_last(di, di)?;
        let v = v.causal_conv1d(p[self.conv_w], p[self.conv_b])?.silu()?;
        let dbc = v.matmul(p[self.x_proj])?;
        let dt_latent = dbc.slice_last(0, r)?;
        let b = dbc.slice_last(r, n)?;
        let c = dbc.slice_last(r + n, n)?;
        let delta = dt_latent
            .matmul(p[self.dt_proj])?
            .add(p[self.dt_bias])?
            .softplus()?;
        let a = p[self.a_log].exp()?.neg()?;
        let y = selective_scan(v, delta, a, b, c, p[self.d_skip], mode)?;
        let gated = y.mul(g.silu()?)?;
        let out = gated.matmul(p[self.out_proj])?;
        debug_assert_eq!(out.shape(), vec![s, l, dm]);
        Ok(out)
    }
}

/// Two-layer relu feed-forward sublayer.
#[derive(Clone, Debug)]
pub struct Ffn {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl Ffn {
    pub fn new(store: &mut ParamStore, prefix: &str, d_model: usize, d_ff: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Ffn {
            w1: store.add(format!("{prefix}.w1"), xavier(d_model, d_ff, rng))?,
            b1: store.add(format!("{prefix}.b1"), Tensor::zeros([d_ff]))?,
            w2: store.add(format!("{prefix}.w2"), xavier(d_ff, d_model, rng))?,
            b2: store.add(format!("{prefix}.b2"), Tensor::zeros([d_model]))?,
        })
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>, dropout: Option<&DropoutCtx>, layer: u64) -> Result<Var<'t>> {
        let h = x.linear(p[self.w1], Some(p[self.b1]))?.relu()?;
        let h = apply_dropout(h, dropout, layer)?;
        h.linear(p[self.w2], Some(p[self.b2]))
    }
}

/// `h = U + mamba(norm1(U))`, `out = h + ffn(norm2(h))`.
#[derive(Clone, Debug)]
pub struct McstBlock {
    pub norm1: LayerNormParams,
    pub mamba: MambaBlock,
    pub norm2: LayerNormParams,
    pub ffn: Ffn,
    /// Dropout stream id.
    pub layer: u64,
}

impl McstBlock {
    pub fn new(store: &mut ParamStore, prefix: &str, cfg: &SelectiveSSMConfig, layer: u64, rng: &mut impl Rng) -> Result<Self> {
        Ok(McstBlock {
            norm1: LayerNormParams::new(store, &format!("{prefix}.norm1"), cfg.d_model)?,
            mamba: MambaBlock::new(store, &format!("{prefix}.mamba"), cfg, rng)?,
            norm2: LayerNormParams::new(store, &format!("{prefix}.norm2"), cfg.d_model)?,
            ffn: Ffn::new(store, &format!("{prefix}.ffn"), cfg.d_model, cfg.d_ff, rng)?,
            layer,
        })
    }

    pub fn forward<'t>(
        &self,
        p: &Bound<'t>,
        u: Var<'t>,
        mode: ScanMode,
        dropout: Option<&DropoutCtx>,
    ) -> Result<Var<'t>> {
        let h = u.add(self.mamba.forward(p, self.norm1.forward(p, u)?, mode)?)?;
        let f = self.ffn.forward(p, self.norm2.forward(p, h)?, dropout, self.layer)?;
        h.add(f)
    }

    /// Every parameter id owned by this block.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let m = &self.mamba;
        vec![
            self.norm1.gamma,
            self.norm1.beta,
            m.in_proj,
            m.conv_w,
            m.conv_b,
            m.x_proj,
            m.dt_proj,
            m.dt_bias,
            m.a_log,
            m.d_skip,
            m.out_proj,
            self.norm2.gamma,
            self.norm2.beta,
            self.ffn.w1,
            self.ffn.b1,
            self.ffn.w2,
            self.ffn.b2,
        ]
    }
}
