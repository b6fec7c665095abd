use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::data::{Normalizer, Windows, CHANNEL_NAMES};
use crate::error::{Error, Result};
use crate::model::MCSTModel;
use crate::tensor::Tensor;

/// Ground-truth magnitudes below this are left out of MAPE.
pub const MAPE_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Scores {
    pub mae: f64,
    pub rmse: f64,
    /// Percent.
    pub mape: f64,
    pub count: usize,
    /// Share of elements excluded from MAPE by the floor.
    pub mape_excluded: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct MetricsReport {
    #[serde(flatten)]
    pub pooled: Scores,
    pub per_channel: Vec<Scores>,
    pub channel_names: Vec<String>,
    /// Indexed by horizon step, 0-based.
    pub per_horizon: Vec<Scores>,
}

impl MetricsReport {
    pub fn mae(&self) -> f64 {
        self.pooled.mae
    }

    pub fn rmse(&self) -> f64 {
        self.pooled.rmse
    }

    pub fn mape(&self) -> f64 {
        self.pooled.mape
    }
}

#[derive(Clone, Copy, Debug, Default)]
struct Sums {
    abs: f64,
    sq: f64,
    pct: f64,
    n: usize,
    n_pct: usize,
}

impl Sums {
    fn push(&mut self, pred: f64, truth: f64) {
        let e = pred - truth;
        self.abs += e.abs();
        self.sq += e * e;
        self.n += 1;
        if truth.abs() >= MAPE_FLOOR {
            self.pct += (e / truth).abs();
            self.n_pct += 1;
        }
    }

    fn scores(&self) -> Scores {
        if self.n == 0 {
            return Scores::default();
        }
        let n = self.n as f64;
        Scores {
            mae: self.abs / n,
            rmse: (self.sq / n).sqrt(),
            mape: if self.n_pct == 0 { 0.0 } else { 100.0 * self.pct / self.n_pct as f64 },
            count: self.n,
            mape_excluded: (self.n - self.n_pct) as f64 / n,
        }
    }
}

/// Running MAE/RMSE/MAPE over `[m, horizon, n, c]` blocks in data units.
#[derive(Clone, Debug)]
pub struct MetricsAccumulator {
    pooled: Sums,
    channel: Vec<Sums>,
    horizon: Vec<Sums>,
}

impl MetricsAccumulator {
    pub fn new(horizons: usize, channels: usize) -> Self {
        MetricsAccumulator {
            pooled: Sums::default(),
            channel: vec![Sums::default(); channels],
            horizon: vec![Sums::default(); horizons],
        }
    }

    pub fn add(&mut self, pred: &Tensor, truth: &Tensor) -> Result<()> {
        if pred.shape() != truth.shape() {
            return Err(Error::dim(
                "metrics",
                format!("prediction {:?} vs truth {:?}", pred.shape(), truth.shape()),
            ));
        }
        let [_, h, n, c] = *pred.shape() else {
            return Err(Error::dim("metrics", format!("expected [m, h, n, c], got {:?}", pred.shape())));
        };
        if h != self.horizon.len() || c != self.channel.len() {
            return Err(Error::dim(
                "metrics",
                format!("{h} horizons × {c} channels, accumulator expects {} × {}", self.horizon.len(), self.channel.len()),
            ));
        }
        for (i, (&p, &y)) in pred.data().iter().zip(truth.data()).enumerate() {
            let ch = i % c;
            let step = (i / (n * c)) % h;
            self.pooled.push(p, y);
            self.channel[ch].push(p, y);
            self.horizon[step].push(p, y);
        }
        Ok(())
    }

    pub fn report(&self) -> MetricsReport {
        let c = self.channel.len();
        MetricsReport {
            pooled: self.pooled.scores(),
            per_channel: self.channel.iter().map(Sums::scores).collect(),
            channel_names: (0..c)
                .map(|i| CHANNEL_NAMES.get(i).map_or_else(|| format!("channel{i}"), |s| s.to_string()))
                .collect(),
            per_horizon: self.horizon.iter().map(Sums::scores).collect(),
        }
    }
}

/// Metrics of one prediction block against its truth, both in data units.
pub fn compute_metrics(pred: &Tensor, truth: &Tensor) -> Result<MetricsReport> {
    let shape = pred.shape();
    let (h, c) = match shape {
        [_, h, _, c] => (*h, *c),
        _ => return Err(Error::dim("metrics", format!("expected [m, h, n, c], got {shape:?}"))),
    };
    let mut acc = MetricsAccumulator::new(h, c);
    acc.add(pred, truth)?;
    Ok(acc.report())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineMode {
    /// Repeat the last observed step.
    Inertia,
    /// Repeat the per-(node, channel) mean of the input window.
    Mean,
}

impl FromStr for BaselineMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inertia" => Ok(BaselineMode::Inertia),
            "mean" => Ok(BaselineMode::Mean),
            _ => Err(Error::Config(format!("unknown baseline mode {s:?} (inertia, mean)"))),
        }
    }
}

/// Historical forecast `[m, t_out, n, c]` from inputs `[m, t_in, n, c]`.
pub fn historical_baseline(x: &Tensor, t_out: usize, mode: BaselineMode) -> Result<Tensor> {
    let [m, t_in, n, c] = *x.shape() else {
        return Err(Error::dim("historical_baseline", format!("expected [m, t, n, c], got {:?}", x.shape())));
    };
    if t_in == 0 {
        return Err(Error::dim("historical_baseline", "empty input window"));
    }
    let row = n * c;
    let mut out = Vec::with_capacity(m * t_out * row);
    for s in 0..m {
        let win = &x.data()[s * t_in * row..(s + 1) * t_in * row];
        let level: Vec<f64> = match mode {
            BaselineMode::Inertia => win[(t_in - 1) * row..].to_vec(),
            BaselineMode::Mean => (0..row)
                .map(|j| (0..t_in).map(|k| win[k * row + j]).sum::<f64>() / t_in as f64)
                .collect(),
        };
        for _ in 0..t_out {
            out.extend_from_slice(&level);
        }
    }
    Tensor::new([m, t_out, n, c], out)
}

/// Denormalised model forecasts for the windows beginning at `starts`.
pub fn predict_windows(model: &MCSTModel, windows: &Windows<'_>, starts: &[usize], normalizer: &Normalizer) -> Result<Tensor> {
    let b = windows.batch(starts);
    normalizer.invert(&model.predict(&b.x, &b.tod_idx, &b.dow_idx)?)
}

/// Model metrics over every window, in chronological batches.
pub fn evaluate(model: &MCSTModel, windows: &Windows<'_>, normalizer: &Normalizer, batch_size: usize) -> Result<MetricsReport> {
    if windows.is_empty() {
        return Err(Error::Config("cannot evaluate an empty split".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let chunks: Vec<&[usize]> = windows.starts.chunks(batch_size).collect();
    let blocks: Vec<(Tensor, Tensor)> = chunks
        .par_iter()
        .map(|starts| {
            let b = windows.batch(starts);
            let pred = normalizer.invert(&model.predict(&b.x, &b.tod_idx, &b.dow_idx)?)?;
            Ok((pred, normalizer.invert(&b.y)?))
        })
        .collect::<Result<_>>()?;
    let mut acc = MetricsAccumulator::new(windows.t_out, normalizer.channels());
    for (pred, truth) in &blocks {
        acc.add(pred, truth)?;
    }
    Ok(acc.report())
}

/// Baseline metrics over every window, computed like [`evaluate`].
pub fn evaluate_baseline(windows: &Windows<'_>, normalizer: &Normalizer, mode: BaselineMode) -> Result<MetricsReport> {
    if windows.is_empty() {
        return Err(Error::Config("cannot evaluate an empty split".into()));
    }
    let mut acc = MetricsAccumulator::new(windows.t_out, normalizer.channels());
    for starts in windows.starts.chunks(256) {
        let b = windows.batch(starts);
        let pred = normalizer.invert(&historical_baseline(&b.x, windows.t_out, mode)?)?;
        acc.add(&pred, &normalizer.invert(&b.y)?)?;
    }
    Ok(acc.report())
}
