//! Run configuration files.
//!
//! ```text
//! # comment
//! [section]
//! key = value
//! ```
//!
//! Sections are `data`, `model`, `train` and `output`. Unknown sections or
//! keys and repeated keys are errors; absent keys take the defaults below.
//! [`RunConfig::to_ini`] writes every key with its resolved value and parses
//! back to the same configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::embeddings::EmbeddingConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::ssm::{ScanMode, SelectiveSSMConfig};
use crate::training::TrainConfig;

const KEYS: &[(&str, &[&str])] = &[
    ("data", &["path", "seed", "nodes", "days"]),
    (
        "model",
        &[
            "t_in",
            "t_out",
            "d_model",
            "state_dim",
            "expand",
            "dt_rank",
            "conv_kernel",
            "d_ff",
            "blocks_per_pathway",
            "dropout",
            "scan",
            "node_order",
            "d_feat",
            "d_tod",
            "d_dow",
            "d_spatial",
            "d_adaptive",
        ],
    ),
    (
        "train",
        &[
            "lr_init",
            "lr_min",
            "beta1",
            "beta2",
            "adam_eps",
            "max_epochs",
            "patience",
            "batch_size",
            "clip_norm",
        ],
    ),
    ("output", &["dir"]),
];

/// Order in which the spatial pathway visits sensors.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum NodeOrder {
    /// Dataset order.
    #[default]
    Identity,
    Reverse,
    /// Seeded random permutation.
    Shuffle(u64),
}

impl NodeOrder {
    /// `perm[i]` is the dataset node placed at position `i`.
    pub fn permutation(self, n: usize) -> Vec<usize> {
        match self {
            NodeOrder::Identity => (0..n).collect(),
            NodeOrder::Reverse => (0..n).rev().collect(),
            NodeOrder::Shuffle(seed) => {
                use rand::seq::SliceRandom;
                let mut p: Vec<usize> = (0..n).collect();
                p.shuffle(&mut crate::init::substream(seed, "node_order"));
                p
            }
        }
    }
}

impl FromStr for NodeOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(NodeOrder::Identity),
            "reverse" => Ok(NodeOrder::Reverse),
            _ => s
                .strip_prefix("shuffle:")
                .and_then(|x| x.parse().ok())
                .map(NodeOrder::Shuffle)
                .ok_or_else(|| Error::Config(format!("node_order {s:?}: expected identity, reverse or shuffle:<seed>"))),
        }
    }
}

impl std::fmt::Display for NodeOrder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NodeOrder::Identity => f.write_str("identity"),
            NodeOrder::Reverse => f.write_str("reverse"),
            NodeOrder::Shuffle(s) => write!(f, "shuffle:{s}"),
        }
    }
}

pub fn parse_scan_mode(s: &str) -> Result<ScanMode> {
    if s == "sequential" {
        return Ok(ScanMode::Sequential);
    }
    match s.strip_prefix("parallel:").map(str::parse::<usize>) {
        Some(Ok(chunk)) if chunk > 0 => Ok(ScanMode::Parallel { chunk }),
        _ => Err(Error::Config(format!("scan {s:?}: expected sequential or parallel:<chunk>"))),
    }
}

fn format_scan_mode(m: ScanMode) -> String {
    match m {
        ScanMode::Sequential => "sequential".into(),
        ScanMode::Parallel { chunk } => format!("parallel:{chunk}"),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataSection {
    /// Dataset file; `None` generates synthetic data.
    pub path: Option<PathBuf>,
    /// The single seed every random stream derives from.
    pub seed: u64,
    pub nodes: usize,
    pub days: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSection {
    pub t_in: usize,
    pub t_out: usize,
    pub d_model: usize,
    pub state_dim: usize,
    pub expand: usize,
    pub dt_rank: usize,
    pub conv_kernel: usize,
    pub d_ff: usize,
    pub blocks_per_pathway: usize,
    pub dropout: f64,
    pub scan: ScanMode,
    pub node_order: NodeOrder,
    pub d_feat: usize,
    pub d_tod: usize,
    pub d_dow: usize,
    pub d_spatial: usize,
    pub d_adaptive: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSection {
    pub lr_init: f64,
    pub lr_min: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub clip_norm: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::parse("").expect("defaults are valid")
    }
}

struct Entries {
    map: BTreeMap<(&'static str, &'static str), (String, usize)>,
}

impl Entries {
    fn raw(&self, section: &'static str, key: &'static str) -> Option<&(String, usize)> {
        self.map.get(&(section, key))
    }

    fn get<T: FromStr>(&self, section: &'static str, key: &'static str, default: T) -> Result<T> {
        match self.raw(section, key) {
            None => Ok(default),
            Some((v, line)) => v
                .parse()
                .map_err(|_| Error::Config(format!("line {line}: {section}.{key} = {v:?} is not valid"))),
        }
    }

    fn with<T>(&self, section: &'static str, key: &'static str, default: T, f: impl Fn(&str) -> Result<T>) -> Result<T> {
        match self.raw(section, key) {
            None => Ok(default),
            Some((v, line)) => f(v).map_err(|e| Error::Config(format!("line {line}: {e}"))),
        }
    }
}

fn lex(text: &str) -> Result<Entries> {
    let mut map = BTreeMap::new();
    let mut section: Option<&'static str> = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            let name = name.trim();
            section = Some(
                KEYS.iter()
                    .find(|(s, _)| *s == name)
                    .map(|(s, _)| *s)
                    .ok_or_else(|| Error::Config(format!("line {line_no}: unknown section [{name}]")))?,
            );
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Config(format!("line {line_no}: expected `key = value`, got {line:?}")));
        };
        let sec = section.ok_or_else(|| Error::Config(format!("line {line_no}: key outside of any section")))?;
        let k = k.trim();
        let keys = KEYS.iter().find(|(s, _)| *s == sec).expect("known section").1;
        let key = *keys
            .iter()
            .find(|x| **x == k)
            .ok_or_else(|| Error::Config(format!("line {line_no}: unknown key {sec}.{k}")))?;
        if map.insert((sec, key), (v.trim().to_string(), line_no)).is_some() {
            return Err(Error::Config(format!("line {line_no}: {sec}.{key} given twice")));
        }
    }
    Ok(Entries { map })
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let e = lex(text)?;
        let data = DataSection {
            path: e.raw("data", "path").map(|(v, _)| PathBuf::from(v)).filter(|p| !p.as_os_str().is_empty()),
            seed: e.get("data", "seed", 1)?,
            nodes: e.get("data", "nodes", 6)?,
            days: e.get("data", "days", 3)?,
        };
        let d_model = e.get("model", "d_model", 96)?;
        let model = ModelSection {
            t_in: e.get("model", "t_in", 12)?,
            t_out: e.get("model", "t_out", 12)?,
            d_model,
            state_dim: e.get("model", "state_dim", 32)?,
            expand: e.get("model", "expand", 2)?,
            dt_rank: e.get("model", "dt_rank", d_model.div_ceil(16))?,
            conv_kernel: e.get("model", "conv_kernel", 4)?,
            d_ff: e.get("model", "d_ff", 2 * d_model)?,
            blocks_per_pathway: e.get("model", "blocks_per_pathway", 1)?,
            dropout: e.get("model", "dropout", 0.1)?,
            scan: e.with("model", "scan", ScanMode::Sequential, parse_scan_mode)?,
            node_order: e.with("model", "node_order", NodeOrder::Identity, str::parse)?,
            d_feat: e.get("model", "d_feat", 24)?,
            d_tod: e.get("model", "d_tod", 24)?,
            d_dow: e.get("model", "d_dow", 24)?,
            d_spatial: e.get("model", "d_spatial", 16)?,
            d_adaptive: e.get("model", "d_adaptive", 80)?,
        };
        let lr_init = e.get("train", "lr_init", 1e-3)?;
        let train = TrainSection {
            lr_init,
            lr_min: e.get("train", "lr_min", lr_init / 100.0)?,
            beta1: e.get("train", "beta1", 0.9)?,
            beta2: e.get("train", "beta2", 0.999)?,
            adam_eps: e.get("train", "adam_eps", 1e-8)?,
            max_epochs: e.get("train", "max_epochs", 100)?,
            patience: e.get("train", "patience", 15)?,
            batch_size: e.get("train", "batch_size", 64)?,
            clip_norm: e.with("train", "clip_norm", Some(5.0), |v| {
                if v == "none" {
                    Ok(None)
                } else {
                    v.parse()
                        .map(Some)
                        .map_err(|_| Error::Config(format!("clip_norm {v:?}: expected a number or none")))
                }
            })?,
        };
        let output_dir = e.get("output", "dir", PathBuf::from("run"))?;
        let cfg = RunConfig {
            data,
            model,
            train,
            output_dir,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.path.is_none() && (self.data.nodes == 0 || self.data.days == 0) {
            return Err(Error::Config("data.nodes and data.days must be at least 1".into()));
        }
        self.model_config(self.data.nodes.max(1))?.validate()?;
        self.train_config().validate()
    }

    pub fn model_config(&self, n_nodes: usize) -> Result<ModelConfig> {
        let m = &self.model;
        let cfg = ModelConfig {
            n_nodes,
            t_in: m.t_in,
            t_out: m.t_out,
            c_features: 3,
            ssm: SelectiveSSMConfig {
                d_model: m.d_model,
                expand: m.expand,
                state_dim: m.state_dim,
                dt_rank: m.dt_rank,
                conv_kernel: m.conv_kernel,
                d_ff: m.d_ff,
            },
            emb: EmbeddingConfig {
                d_feat: m.d_feat,
                d_tod: m.d_tod,
                d_dow: m.d_dow,
                d_spatial: m.d_spatial,
                d_adaptive: m.d_adaptive,
                ..EmbeddingConfig::new(n_nodes, m.t_in, 3, m.d_model)
            },
            blocks_per_pathway: m.blocks_per_pathway,
            dropout: m.dropout,
            scan: m.scan,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            lr_init: t.lr_init,
            beta1: t.beta1,
            beta2: t.beta2,
            adam_eps: t.adam_eps,
            max_epochs: t.max_epochs,
            patience: t.patience,
            batch_size: t.batch_size,
            lr_min: t.lr_min,
            seed: self.data.seed,
            clip_norm: t.clip_norm,
        }
    }

    /// Every key with its resolved value.
    pub fn to_ini(&self) -> String {
        let mut s = String::new();
        let d = &self.data;
        s.push_str("[data]\n");
        let path = d.path.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let _ = writeln!(s, "path = {path}\nseed = {}\nnodes = {}\ndays = {}", d.seed, d.nodes, d.days);
        let m = &self.model;
        s.push_str("\n[model]\n");
        let _ = writeln!(
            s,
            "t_in = {}\nt_out = {}\nd_model = {}\nstate_dim = {}\nexpand = {}\ndt_rank = {}\nconv_kernel = {}\nd_ff = {}\nblocks_per_pathway = {}\ndropout = {:?}\nscan = {}\nnode_order = {}\nd_feat = {}\nd_tod = {}\nd_dow = {}\nd_spatial = {}\nd_adaptive = {}",
            m.t_in,
            m.t_out,
            m.d_model,
            m.state_dim,
            m.expand,
            m.dt_rank,
            m.conv_kernel,
            m.d_ff,
            m.blocks_per_pathway,
            m.dropout,
            format_scan_mode(m.scan),
            m.node_order,
            m.d_feat,
            m.d_tod,
            m.d_dow,
            m.d_spatial,
            m.d_adaptive
        );
        let t = &self.train;
        s.push_str("\n[train]\n");
        let clip = t.clip_norm.map_or_else(|| "none".to_string(), |c| format!("{c:?}"));
        let _ = writeln!(
            s,
            "lr_init = {:?}\nlr_min = {:?}\nbeta1 = {:?}\nbeta2 = {:?}\nadam_eps = {:?}\nmax_epochs = {}\npatience = {}\nbatch_size = {}\nclip_norm = {clip}",
            t.lr_init, t.lr_min, t.beta1, t.beta2, t.adam_eps, t.max_epochs, t.patience, t.batch_size
        );
        let _ = writeln!(s, "\n[output]\ndir = {}", self.output_dir.display());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_reference_setup() {
        let c = RunConfig::default();
        assert_eq!(c.model.d_model, 96);
        assert_eq!(c.model.dt_rank, 6);
        assert_eq!(c.model.d_ff, 192);
        assert_eq!(c.train.lr_min, 1e-5);
        assert_eq!(c.train.patience, 15);
        assert_eq!(c.train.batch_size, 64);
        assert_eq!(c.train.clip_norm, Some(5.0));
    }

    #[test]
    fn echo_round_trips() {
        let text = "# tiny\n[data]\nseed = 7\nnodes = 4\n\n[model]\nd_model = 8\nstate_dim = 4\nscan = parallel:4\nnode_order = shuffle:3\n[train]\nlr_init = 0.003\nclip_norm = none\n[output]\ndir = out/x\n";
        let a = RunConfig::parse(text).unwrap();
        assert_eq!(a.model.dt_rank, 1);
        assert_eq!(a.train.lr_min, 3e-5);
        let echo = a.to_ini();
        let b = RunConfig::parse(&echo).unwrap();
        assert_eq!(a, b);
        assert_eq!(echo, b.to_ini());
    }

    #[test]
    fn unknown_and_repeated_keys_rejected() {
        for text in [
            "[model]\nwidth = 3\n",
            "[extras]\n",
            "[train]\npatience = 3\npatience = 4\n",
            "seed = 1\n",
            "[data]\nseed\n",
            "[train]\nlr_init = fast\n",
            "[model]\nscan = parallel:0\n",
            "[train]\npatience = 0\n",
        ] {
            assert!(matches!(RunConfig::parse(text), Err(Error::Config(_))), "{text:?}");
        }
    }

    #[test]
    fn node_orders() {
        assert_eq!(NodeOrder::Reverse.permutation(3), vec![2, 1, 0]);
        let mut p = NodeOrder::Shuffle(5).permutation(10);
        p.sort_unstable();
        assert_eq!(p, (0..10).collect::<Vec<_>>());
        assert_eq!("shuffle:5".parse::<NodeOrder>().unwrap().to_string(), "shuffle:5");
    }
}
