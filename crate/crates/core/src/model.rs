//! The end-to-end forecaster.
//!
//! ```text
//! X [m, t_in, n, c] ─ embed ─ E [m, t, n, d] ─┬─ temporal rows [m·n, t, d] ─ blocks ─┐
//!                                             └─ spatial rows  [m·t, n, d] ─ blocks ─┴─ w_t·Y_t + w_s·Y_s
//!   ─ layer_norm ─ per node flatten [t·d] ─ affine ─ [m, t_out, n, c]
//! ```

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::embeddings::{EmbeddingConfig, EmbeddingTables};
use crate::error::{Error, Result};
use crate::init::{substream, xavier};
use crate::params::{Bound, ParamId, ParamStore};
use crate::ssm::block::{apply_dropout, LayerNormParams};
use crate::ssm::{DropoutCtx, McstBlock, ScanMode, SelectiveSSMConfig};
use crate::tensor::Tensor;

/// Dropout stream of the embedding projection; blocks use `1 + index`.
const EMBEDDING_DROPOUT_LAYER: u64 = 0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_nodes: usize,
    pub t_in: usize,
    pub t_out: usize,
    pub c_features: usize,
    pub ssm: SelectiveSSMConfig,
    pub emb: EmbeddingConfig,
    pub blocks_per_pathway: usize,
    pub dropout: f64,
    /// Scan evaluation order. Does not affect parameter shapes.
    pub scan: ScanMode,
}

impl ModelConfig {
    /// Full-size configuration: 12 → 12 steps, 3 channels, width 96, state 32.
    pub fn new(n_nodes: usize) -> Self {
        Self::with_dims(n_nodes, 12, 12, 96, 32)
    }

    /// Small configuration for finite-difference checks.
    pub fn tiny(n_nodes: usize) -> Self {
        Self::with_dims(n_nodes, 3, 2, 8, 4)
    }

    pub fn with_dims(n_nodes: usize, t_in: usize, t_out: usize, d_model: usize, state_dim: usize) -> Self {
        ModelConfig {
            n_nodes,
            t_in,
            t_out,
            c_features: 3,
            ssm: SelectiveSSMConfig::with_width(d_model, state_dim),
            emb: EmbeddingConfig::new(n_nodes, t_in, 3, d_model),
            blocks_per_pathway: 1,
            dropout: 0.1,
            scan: ScanMode::Sequential,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_nodes == 0 || self.t_in == 0 || self.t_out == 0 || self.c_features == 0 {
            return Err(Error::Config(format!(
                "n_nodes, t_in, t_out and c_features must be at least 1 (got {}, {}, {}, {})",
                self.n_nodes, self.t_in, self.t_out, self.c_features
            )));
        }
        if self.blocks_per_pathway == 0 {
            return Err(Error::Config("blocks_per_pathway must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if let ScanMode::Parallel { chunk: 0 } = self.scan {
            return Err(Error::Config("scan chunk must be at least 1".into()));
        }
        self.ssm.validate()?;
        self.emb.validate()?;
        let e = &self.emb;
        if e.n_nodes != self.n_nodes || e.t_in != self.t_in || e.c_features != self.c_features {
            return Err(Error::Config(format!(
                "embedding sized for n={}, t_in={}, c={} but model has n={}, t_in={}, c={}",
                e.n_nodes, e.t_in, e.c_features, self.n_nodes, self.t_in, self.c_features
            )));
        }
        if e.d_mamba != self.ssm.d_model {
            return Err(Error::Config(format!(
                "embedding projects to {} but blocks are {} wide",
                e.d_mamba, self.ssm.d_model
            )));
        }
        Ok(())
    }
}

/// `[m, t, n, d]` → `[m·n, t, d]`: one sequence over time per (sample, node).
pub fn reshape_temporal(e: &Tensor) -> Result<Tensor> {
    let [m, t, n, d] = dims4(e.shape(), "reshape_temporal")?;
    e.permute(&[0, 2, 1, 3])?.reshape([m * n, t, d])
}

pub fn unreshape_temporal(y: &Tensor, m: usize, n: usize) -> Result<Tensor> {
    let [_, t, d] = dims3(y.shape(), "unreshape_temporal")?;
    y.reshape([m, n, t, d])?.permute(&[0, 2, 1, 3])
}

/// `[m, t, n, d]` → `[m·t, n, d]`: one sequence over nodes per (sample, step).
pub fn reshape_spatial(e: &Tensor) -> Result<Tensor> {
    let [m, t, n, d] = dims4(e.shape(), "reshape_spatial")?;
    e.reshape([m * t, n, d])
}

pub fn unreshape_spatial(y: &Tensor, m: usize, t: usize) -> Result<Tensor> {
    let [_, n, d] = dims3(y.shape(), "unreshape_spatial")?;
    y.reshape([m, t, n, d])
}

fn dims4(shape: &[usize], op: &'static str) -> Result<[usize; 4]> {
    <[usize; 4]>::try_from(shape).map_err(|_| Error::dim(op, format!("expected rank 4, got {shape:?}")))
}

fn dims3(shape: &[usize], op: &'static str) -> Result<[usize; 3]> {
    <[usize; 3]>::try_from(shape).map_err(|_| Error::dim(op, format!("expected rank 3, got {shape:?}")))
}

/// `w_t·Y_t + w_s·Y_s` with single-element weights.
pub fn combine_pathways<'t>(y_t: Var<'t>, y_s: Var<'t>, w_t: Var<'t>, w_s: Var<'t>) -> Result<Var<'t>> {
    if y_t.shape() != y_s.shape() {
        return Err(Error::dim(
            "combine_pathways",
            format!("temporal {:?} vs spatial {:?}", y_t.shape(), y_s.shape()),
        ));
    }
    if w_t.value().numel() != 1 || w_s.value().numel() != 1 {
        return Err(Error::dim("combine_pathways", "fusion weights must be scalars"));
    }
    y_t.mul(w_t)?.add(y_s.mul(w_s)?)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ParameterCount {
    pub total: usize,
    pub breakdown: Vec<(String, usize)>,
}

impl ParameterCount {
    pub fn get(&self, group: &str) -> Option<usize> {
        self.breakdown.iter().find(|(g, _)| g == group).map(|&(_, c)| c)
    }
}

#[derive(Clone, Debug)]
pub struct MCSTModel {
    pub cfg: ModelConfig,
    pub params: ParamStore,
    pub tables: EmbeddingTables,
    pub temporal: Vec<McstBlock>,
    pub spatial: Vec<McstBlock>,
    pub w_temporal: ParamId,
    pub w_spatial: ParamId,
    pub head_norm: LayerNormParams,
    /// `[t_in·d, t_out·c]`
    pub head_w: ParamId,
    pub head_b: ParamId,
}

impl MCSTModel {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        let tables = EmbeddingTables::new(&mut params, &cfg.emb, &mut substream(seed, "init.embedding"))?;
        let k = cfg.blocks_per_pathway as u64;
        let mut rng = substream(seed, "init.temporal");
        let temporal = (0..cfg.blocks_per_pathway)
            .map(|i| McstBlock::new(&mut params, &format!("model.temporal.{i}"), &cfg.ssm, 1 + i as u64, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let mut rng = substream(seed, "init.spatial");
        let spatial = (0..cfg.blocks_per_pathway)
            .map(|i| {
                McstBlock::new(&mut params, &format!("model.spatial.{i}"), &cfg.ssm, 1 + k + i as u64, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let w_temporal = params.add("model.fuse.w_t", Tensor::full([1], 0.5))?;
        let w_spatial = params.add("model.fuse.w_s", Tensor::full([1], 0.5))?;
        let d = cfg.ssm.d_model;
        let head_norm = LayerNormParams::new(&mut params, "model.head.norm", d)?;
        let mut rng = substream(seed, "init.head");
        let head_w = params.add(
            "model.head.w",
            xavier(cfg.t_in * d, cfg.t_out * cfg.c_features, &mut rng),
        )?;
        let head_b = params.add("model.head.b", Tensor::zeros([cfg.t_out * cfg.c_features]))?;
        Ok(MCSTModel {
            cfg,
            params,
            tables,
            temporal,
            spatial,
            w_temporal,
            w_spatial,
            head_norm,
            head_w,
            head_b,
        })
    }

    /// Rebuilds a model around checkpointed parameters, reading every size
    /// from the stored shapes.
    pub fn from_params(stored: &ParamStore) -> Result<Self> {
        let cfg = infer_config(stored)?;
        let mut model = MCSTModel::new(cfg, 0)?;
        model.params.load_from(stored)?;
        Ok(model)
    }

    /// Records the forward pass on `p`'s tape.
    ///
    /// `x: [m, t_in, n, c]`; `tod_idx`, `dow_idx`: `m·t_in` indices. Passing a
    /// dropout context selects training behaviour.
    pub fn forward<'t>(
        &self,
        p: &Bound<'t>,
        x: Var<'t>,
        tod_idx: &[usize],
        dow_idx: &[usize],
        dropout: Option<&DropoutCtx>,
    ) -> Result<Var<'t>> {
        let shape = x.shape();
        let [m, t, n, _] = dims4(&shape, "forward")?;
        let d = self.cfg.ssm.d_model;
        let e = self.tables.project(p, self.tables.assemble(p, x, tod_idx, dow_idx)?)?;
        let e = apply_dropout(e, dropout, EMBEDDING_DROPOUT_LAYER)?;

        let mut yt = e.permute(&[0, 2, 1, 3])?.reshape([m * n, t, d])?;
        for block in &self.temporal {
            yt = block.forward(p, yt, self.cfg.scan, dropout)?;
        }
        let yt = yt.reshape([m, n, t, d])?.permute(&[0, 2, 1, 3])?;

        let mut ys = e.reshape([m * t, n, d])?;
        for block in &self.spatial {
            ys = block.forward(p, ys, self.cfg.scan, dropout)?;
        }
        let ys = ys.reshape([m, t, n, d])?;

        let yc = combine_pathways(yt, ys, p[self.w_temporal], p[self.w_spatial])?;
        let (t_out, c) = (self.cfg.t_out, self.cfg.c_features);
        self.head_norm
            .forward(p, yc)?
            .permute(&[0, 2, 1, 3])?
            .reshape([m, n, t * d])?
            .linear(p[self.head_w], Some(p[self.head_b]))?
            .reshape([m, n, t_out, c])?
            .permute(&[0, 2, 1, 3])
    }

    /// Evaluation-mode forward without gradient bookkeeping.
    pub fn predict(&self, x: &Tensor, tod_idx: &[usize], dow_idx: &[usize]) -> Result<Tensor> {
        let tape = Tape::new();
        let p = self.params.bind(&tape, false);
        let y = self.forward(&p, tape.constant(x.clone()), tod_idx, dow_idx, None)?;
        let out = y.value();
        Ok((*out).clone())
    }

    /// Output of the temporal pathway alone, `[m, t, n, d]`, before fusion.
    pub fn temporal_pathway(&self, x: &Tensor, tod_idx: &[usize], dow_idx: &[usize]) -> Result<Tensor> {
        let tape = Tape::new();
        let p = self.params.bind(&tape, false);
        let e = self
            .tables
            .project(&p, self.tables.assemble(&p, tape.constant(x.clone()), tod_idx, dow_idx)?)?;
        let [m, t, n, _] = dims4(&e.shape(), "temporal_pathway")?;
        let d = self.cfg.ssm.d_model;
        let mut yt = e.permute(&[0, 2, 1, 3])?.reshape([m * n, t, d])?;
        for block in &self.temporal {
            yt = block.forward(&p, yt, self.cfg.scan, None)?;
        }
        let v = yt.value();
        unreshape_temporal(&v, m, n)
    }

    /// Parameter ids of every spatial-pathway block.
    pub fn spatial_param_ids(&self) -> Vec<ParamId> {
        self.spatial.iter().flat_map(|b| b.param_ids()).collect()
    }

    pub fn temporal_param_ids(&self) -> Vec<ParamId> {
        self.temporal.iter().flat_map(|b| b.param_ids()).collect()
    }

    pub fn parameter_count(&self) -> ParameterCount {
        let size = |id: ParamId| self.params.get(id).value.numel();
        let sum = |ids: &[ParamId]| ids.iter().map(|&id| size(id)).sum::<usize>();
        let t = &self.tables;
        let breakdown = vec![
            ("embedding.feature".to_string(), size(t.feat_w)),
            ("embedding.tod".to_string(), size(t.tod)),
            ("embedding.dow".to_string(), size(t.dow)),
            ("embedding.spatial".to_string(), size(t.spatial)),
            ("embedding.adaptive".to_string(), size(t.adaptive)),
            ("embedding.projection".to_string(), size(t.proj_w) + size(t.proj_b)),
            ("temporal".to_string(), sum(&self.temporal_param_ids())),
            ("spatial".to_string(), sum(&self.spatial_param_ids())),
            ("fusion".to_string(), size(self.w_temporal) + size(self.w_spatial)),
            (
                "head".to_string(),
                sum(&[self.head_norm.gamma, self.head_norm.beta, self.head_w, self.head_b]),
            ),
        ];
        let total = breakdown.iter().map(|(_, c)| c).sum();
        debug_assert_eq!(total, self.params.numel());
        ParameterCount { total, breakdown }
    }
}

fn shape_of<'a>(store: &'a ParamStore, name: &str) -> Result<&'a [usize]> {
    store
        .by_name(name)
        .map(|p| p.value.shape())
        .ok_or_else(|| Error::Contract(format!("checkpoint lacks parameter {name}")))
}

fn extent(store: &ParamStore, name: &str, axis: usize, rank: usize) -> Result<usize> {
    let s = shape_of(store, name)?;
    if s.len() != rank {
        return Err(Error::dim("checkpoint", format!("{name} has shape {s:?}, expected rank {rank}")));
    }
    Ok(s[axis])
}

fn infer_config(store: &ParamStore) -> Result<ModelConfig> {
    let n_nodes = extent(store, "emb.spatial", 0, 2)?;
    let t_in = extent(store, "emb.adaptive", 0, 3)?;
    let c_features = extent(store, "emb.feat.w", 0, 2)?;
    let d_model = extent(store, "emb.proj.w", 1, 2)?;
    let pre = "model.temporal.0";
    let d_inner = extent(store, &format!("{pre}.mamba.a_log"), 0, 2)?;
    let state_dim = extent(store, &format!("{pre}.mamba.a_log"), 1, 2)?;
    let head_out = extent(store, "model.head.w", 1, 2)?;
    if d_inner % d_model != 0 || head_out % c_features != 0 {
        return Err(Error::Contract("checkpoint shapes are inconsistent".into()));
    }
    let blocks_per_pathway = (0..)
        .take_while(|i| store.by_name(&format!("model.temporal.{i}.norm1.gamma")).is_some())
        .count();
    let mut cfg = ModelConfig::with_dims(n_nodes, t_in, head_out / c_features, d_model, state_dim);
    cfg.c_features = c_features;
    cfg.blocks_per_pathway = blocks_per_pathway;
    cfg.ssm.expand = d_inner / d_model;
    cfg.ssm.dt_rank = extent(store, &format!("{pre}.mamba.dt_proj"), 0, 2)?;
    cfg.ssm.conv_kernel = extent(store, &format!("{pre}.mamba.conv_w"), 1, 2)?;
    cfg.ssm.d_ff = extent(store, &format!("{pre}.ffn.w1"), 1, 2)?;
    cfg.emb = EmbeddingConfig {
        n_nodes,
        t_in,
        c_features,
        d_feat: extent(store, "emb.feat.w", 1, 2)?,
        d_tod: extent(store, "emb.tod", 1, 2)?,
        d_dow: extent(store, "emb.dow", 1, 2)?,
        d_spatial: extent(store, "emb.spatial", 1, 2)?,
        d_adaptive: extent(store, "emb.adaptive", 2, 3)?,
        tod_slots: extent(store, "emb.tod", 0, 2)?,
        dow_slots: extent(store, "emb.dow", 0, 2)?,
        d_mamba: d_model,
    };
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn temporal_index_oracle() {
        let (m, t, n, d) = (2, 4, 3, 5);
        let e = Tensor::arange([m, t, n, d]);
        let r = reshape_temporal(&e).unwrap();
        assert_eq!(r.shape(), &[6, 4, 5]);
        for s in 0..m {
            for k in 0..t {
                for v in 0..n {
                    for j in 0..d {
                        assert_eq!(r.at(&[s * n + v, k, j]), e.at(&[s, k, v, j]));
                    }
                }
            }
        }
        assert!(unreshape_temporal(&r, m, n).unwrap().bitwise_eq(&e));
    }

    #[test]
    fn spatial_index_oracle() {
        let (m, t, n, d) = (2, 4, 3, 5);
        let e = Tensor::arange([m, t, n, d]);
        let r = reshape_spatial(&e).unwrap();
        assert_eq!(r.shape(), &[8, 3, 5]);
        for s in 0..m {
            for k in 0..t {
                for v in 0..n {
                    for j in 0..d {
                        assert_eq!(r.at(&[s * t + k, v, j]), e.at(&[s, k, v, j]));
                    }
                }
            }
        }
        assert!(unreshape_spatial(&r, m, t).unwrap().bitwise_eq(&e));
    }

    #[test]
    fn full_size_breakdown() {
        let model = MCSTModel::new(ModelConfig::new(307), 0).unwrap();
        let count = model.parameter_count();
        assert_eq!(count.get("embedding.adaptive"), Some(294_720));
        assert_eq!(count.get("embedding.spatial"), Some(4_912));
        assert_eq!(count.total, model.params.numel());
        assert!((340_000..=690_000).contains(&count.total), "{}", count.total);
    }

    #[test]
    fn config_recovered_from_parameters() {
        let mut cfg = ModelConfig::tiny(5);
        cfg.blocks_per_pathway = 2;
        let model = MCSTModel::new(cfg.clone(), 3).unwrap();
        let back = MCSTModel::from_params(&model.params).unwrap();
        assert_eq!(back.cfg, cfg);
        assert_eq!(back.params.snapshot(), model.params.snapshot());
    }

    #[test]
    fn mismatched_embedding_rejected() {
        let mut cfg = ModelConfig::tiny(4);
        cfg.emb.n_nodes = 5;
        assert!(matches!(MCSTModel::new(cfg, 0), Err(Error::Config(_))));
    }
}
