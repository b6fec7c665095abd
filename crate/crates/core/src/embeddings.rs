//! Input embedding: feature projection, time-of-day and day-of-week lookups,
//! per-node spatial vectors and a (window step, node) adaptive table,
//! concatenated on the last axis and projected to the block width.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{concat_last, embedding_lookup, Var};
use crate::error::{Error, Result};
use crate::init::{uniform, xavier};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::Tensor;

pub const TOD_SLOTS: usize = 288;
pub const DOW_SLOTS: usize = 7;
const TABLE_INIT: f64 = 0.07;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    pub n_nodes: usize,
    pub t_in: usize,
    pub c_features: usize,
    pub d_feat: usize,
    pub d_tod: usize,
    pub d_dow: usize,
    pub d_spatial: usize,
    pub d_adaptive: usize,
    pub tod_slots: usize,
    pub dow_slots: usize,
    /// Output width of the projection (the block width).
    pub d_mamba: usize,
}

impl EmbeddingConfig {
    pub fn new(n_nodes: usize, t_in: usize, c_features: usize, d_mamba: usize) -> Self {
        EmbeddingConfig {
            n_nodes,
            t_in,
            c_features,
            d_feat: 24,
            d_tod: 24,
            d_dow: 24,
            d_spatial: 16,
            d_adaptive: 80,
            tod_slots: TOD_SLOTS,
            dow_slots: DOW_SLOTS,
            d_mamba,
        }
    }

    pub fn d_concat(&self) -> usize {
        self.d_feat + self.d_tod + self.d_dow + self.d_spatial + self.d_adaptive
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            (self.n_nodes, "n_nodes"),
            (self.t_in, "t_in"),
            (self.c_features, "c_features"),
            (self.d_feat, "d_feat"),
            (self.d_tod, "d_tod"),
            (self.d_dow, "d_dow"),
            (self.d_spatial, "d_spatial"),
            (self.d_adaptive, "d_adaptive"),
            (self.tod_slots, "tod_slots"),
            (self.dow_slots, "dow_slots"),
            (self.d_mamba, "d_mamba"),
        ];
        for (v, name) in fields {
            if v == 0 {
                return Err(Error::Config(format!("embedding {name} must be at least 1")));
            }
        }
        Ok(())
    }
}

/// Number of time-of-day slots for a sampling interval.
pub fn tod_slots_for(interval_minutes: usize) -> Result<usize> {
    if interval_minutes == 0 || (24 * 60) % interval_minutes != 0 {
        return Err(Error::Config(format!(
            "interval of {interval_minutes} minutes does not divide a day"
        )));
    }
    Ok(24 * 60 / interval_minutes)
}

/// Time-of-day and day-of-week indices for `t` steps starting at
/// `(start_slot, start_dow)`, advancing `stride` slots per step. Day 0 is
/// Monday; the day advances whenever the slot wraps past midnight.
pub fn time_indices(start_slot: usize, start_dow: usize, t: usize, stride: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    time_indices_with_slots(start_slot, start_dow, t, stride, TOD_SLOTS)
}

pub fn time_indices_with_slots(
    start_slot: usize,
    start_dow: usize,
    t: usize,
    stride: usize,
    slots: usize,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if start_slot >= slots {
        return Err(Error::Config(format!("start slot {start_slot} outside 0..{slots}")));
    }
    if start_dow >= DOW_SLOTS {
        return Err(Error::Config(format!("start day {start_dow} outside 0..7")));
    }
    let mut tod = Vec::with_capacity(t);
    let mut dow = Vec::with_capacity(t);
    for k in 0..t {
        let abs = start_slot + k * stride;
        tod.push(abs % slots);
        dow.push((start_dow + abs / slots) % DOW_SLOTS);
    }
    Ok((tod, dow))
}

#[derive(Clone, Debug)]
pub struct EmbeddingTables {
    pub cfg: EmbeddingConfig,
    /// `[c, d_feat]`
    pub feat_w: ParamId,
    /// `[tod_slots, d_tod]`
    pub tod: ParamId,
    /// `[7, d_dow]`
    pub dow: ParamId,
    /// `[n, d_spatial]`
    pub spatial: ParamId,
    /// `[t_in, n, d_adaptive]`
    pub adaptive: ParamId,
    /// `[d_concat, d_mamba]`
    pub proj_w: ParamId,
    pub proj_b: ParamId,
}

impl EmbeddingTables {
    pub fn new(store: &mut ParamStore, cfg: &EmbeddingConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        Ok(EmbeddingTables {
            cfg: cfg.clone(),
            feat_w: store.add("emb.feat.w", xavier(cfg.c_features, cfg.d_feat, rng))?,
            tod: store.add("emb.tod", uniform([cfg.tod_slots, cfg.d_tod], TABLE_INIT, rng))?,
            dow: store.add("emb.dow", uniform([cfg.dow_slots, cfg.d_dow], TABLE_INIT, rng))?,
            spatial: store.add("emb.spatial", uniform([cfg.n_nodes, cfg.d_spatial], TABLE_INIT, rng))?,
            adaptive: store.add(
                "emb.adaptive",
                uniform([cfg.t_in, cfg.n_nodes, cfg.d_adaptive], TABLE_INIT, rng),
            )?,
            proj_w: store.add("emb.proj.w", xavier(cfg.d_concat(), cfg.d_mamba, rng))?,
            proj_b: store.add("emb.proj.b", Tensor::zeros([cfg.d_mamba]))?,
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![
            self.feat_w,
            self.tod,
            self.dow,
            self.spatial,
            self.adaptive,
            self.proj_w,
            self.proj_b,
        ]
    }

    /// `x: [m, t, n, c]`, `tod_idx`/`dow_idx`: `m·t` indices (row-major `[m, t]`)
    /// → `[m, t, n, d_concat]` in the order feature ‖ tod ‖ dow ‖ spatial ‖ adaptive.
    pub fn assemble<'t>(&self, p: &Bound<'t>, x: Var<'t>, tod_idx: &[usize], dow_idx: &[usize]) -> Result<Var<'t>> {
        let shape = x.shape();
        let [m, t, n, c] = shape[..] else {
            return Err(Error::dim("assemble_embedding", format!("input must be [m, t, n, c], got {shape:?}")));
        };
        let cfg = &self.cfg;
        if t != cfg.t_in || n != cfg.n_nodes || c != cfg.c_features {
            return Err(Error::dim(
                "assemble_embedding",
                format!(
                    "input {shape:?} vs configured t_in={}, n={}, c={}",
                    cfg.t_in, cfg.n_nodes, cfg.c_features
                ),
            ));
        }
        if tod_idx.len() != m * t || dow_idx.len() != m * t {
            return Err(Error::dim(
                "assemble_embedding",
                format!("{} / {} time indices for {m}×{t} steps", tod_idx.len(), dow_idx.len()),
            ));
        }
        let per_step = |idx: &[usize]| -> Vec<usize> {
            idx.iter().flat_map(|&i| std::iter::repeat(i).take(n)).collect()
        };
        let spatial_idx: Vec<usize> = (0..m * t).flat_map(|_| 0..n).collect();
        let adaptive_idx: Vec<usize> = (0..m).flat_map(|_| 0..t * n).collect();
        let grid = [m, t, n];

        let e_f = x.matmul(p[self.feat_w])?;
        let e_tod = embedding_lookup(p[self.tod], &per_step(tod_idx), &grid)?;
        let e_dow = embedding_lookup(p[self.dow], &per_step(dow_idx), &grid)?;
        let e_sp = embedding_lookup(p[self.spatial], &spatial_idx, &grid)?;
        let adaptive = p[self.adaptive].reshape([t * n, cfg.d_adaptive])?;
        let e_a = embedding_lookup(adaptive, &adaptive_idx, &grid)?;
        concat_last(&[e_f, e_tod, e_dow, e_sp, e_a])
    }

    /// `[..., d_concat]` → `[..., d_mamba]`.
    pub fn project<'t>(&self, p: &Bound<'t>, z: Var<'t>) -> Result<Var<'t>> {
        let w = *z.shape().last().unwrap_or(&0);
        if w != self.cfg.d_concat() {
            return Err(Error::dim(
                "project",
                format!("last extent {w}, expected {}", self.cfg.d_concat()),
            ));
        }
        z.linear(p[self.proj_w], Some(p[self.proj_b]))
    }
}
