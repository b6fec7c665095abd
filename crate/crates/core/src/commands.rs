//! The work behind each `mcst` subcommand. Every function here is
//! deterministic given its arguments; the binary only parses flags and maps
//! errors to exit codes.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::autodiff::fault::with_corrupted_backward;
use crate::autodiff::gradcheck::{check_parameters, GroupReport};
use crate::autodiff::Tape;
use crate::checkpoint;
use crate::config::{NodeOrder, RunConfig};
use crate::data::{load_dataset, save_dataset, synthetic_generate, Dataset, Split, TrafficTensorFile, CHANNEL_NAMES};
use crate::data::format::OCCUPANCY;
use crate::error::{Error, Result};
use crate::init::substream;
use crate::model::{MCSTModel, ModelConfig};
use crate::params::ParamStore;
use crate::ssm::ScanInstance;
use crate::tensor::Tensor;
use crate::training::{evaluate, evaluate_baseline, mse_loss, train, BaselineMode, MetricsReport};

/// Gradient checking perturbs every element, so it is capped.
pub const GRADCHECK_PARAM_CAP: usize = 50_000;
pub const GRADCHECK_TOL: f64 = 1e-4;

/// Output layout of `train`.
pub const CONFIG_FILE: &str = "config.resolved";
pub const CHECKPOINT_FILE: &str = "checkpoint.best";
pub const HISTORY_FILE: &str = "history.jsonl";
pub const REPORT_FILE: &str = "report.json";

/// Process exit status for a failed command.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Divergence { .. } => 3,
        _ => 2,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

fn stdout_err(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

/// Loads a dataset, reordering its nodes when `order` is not the identity.
pub fn load_ordered(path: &Path, order: NodeOrder) -> Result<Dataset> {
    let file = load_dataset(path)?;
    ordered(file, order)
}

fn ordered(file: TrafficTensorFile, order: NodeOrder) -> Result<Dataset> {
    let file = match order {
        NodeOrder::Identity => file,
        o => file.permute_nodes(&o.permutation(file.nodes()))?,
    };
    Dataset::prepare(file)
}

fn load_model(path: &Path) -> Result<MCSTModel> {
    MCSTModel::from_params(&checkpoint::load(path)?)
}

fn check_nodes(model: &MCSTModel, data: &Dataset) -> Result<()> {
    if model.cfg.n_nodes != data.nodes() {
        return Err(Error::Config(format!(
            "checkpoint was trained on {} nodes but the dataset has {}",
            model.cfg.n_nodes,
            data.nodes()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------- gen-data

#[derive(Clone, Debug)]
pub struct GenDataArgs {
    pub nodes: usize,
    pub days: usize,
    pub seed: u64,
    pub out: PathBuf,
}

#[derive(Clone, Debug, Serialize)]
pub struct ChannelRange {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DataSummary {
    pub steps: usize,
    pub nodes: usize,
    pub channels: Vec<ChannelRange>,
}

pub fn summarize(file: &TrafficTensorFile) -> DataSummary {
    let c = CHANNEL_NAMES.len();
    let channels = (0..c)
        .map(|ch| {
            let (min, max) = file
                .raw
                .data()
                .iter()
                .skip(ch)
                .step_by(c)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            ChannelRange {
                name: CHANNEL_NAMES[ch].to_string(),
                min,
                max,
            }
        })
        .collect();
    DataSummary {
        steps: file.steps(),
        nodes: file.nodes(),
        channels,
    }
}

pub fn gen_data(args: &GenDataArgs, out: &mut dyn Write) -> Result<DataSummary> {
    let file = synthetic_generate(args.nodes, args.days, args.seed)?;
    save_dataset(&file, &args.out)?;
    let s = summarize(&file);
    writeln!(out, "wrote {}: T={} n={}", args.out.display(), s.steps, s.nodes).map_err(stdout_err)?;
    for r in &s.channels {
        writeln!(out, "  {:<10} [{:.4}, {:.4}]", r.name, r.min, r.max).map_err(stdout_err)?;
    }
    Ok(s)
}

// ---------------------------------------------------------------- train

#[derive(Clone, Debug, Serialize)]
pub struct Baselines {
    pub inertia: MetricsReport,
    pub mean: MetricsReport,
}

fn baselines(data: &Dataset, split: Split, t_in: usize, t_out: usize) -> Result<Baselines> {
    let w = data.windows(split, t_in, t_out)?;
    Ok(Baselines {
        inertia: evaluate_baseline(&w, &data.normalizer, BaselineMode::Inertia)?,
        mean: evaluate_baseline(&w, &data.normalizer, BaselineMode::Mean)?,
    })
}

/// Contents of `report.json`. Holds no timings so reruns are byte-identical.
#[derive(Clone, Debug, Serialize)]
pub struct TrainReport {
    pub nodes: usize,
    pub steps: usize,
    pub parameters: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub best_val_mae: f64,
    pub val: MetricsReport,
    pub test: MetricsReport,
    /// On the test split.
    pub baselines: Baselines,
}

/// Reads the run config at `config_path`. Relative data and output paths are
/// taken relative to the config file's directory.
pub fn load_run_config(config_path: &Path) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(config_path)?;
    let base = config_path.parent().unwrap_or(Path::new(""));
    let base = if base.as_os_str().is_empty() { Path::new(".") } else { base };
    let base = base.canonicalize().map_err(|e| Error::io(base, e))?;
    if let Some(p) = cfg.data.path.take() {
        cfg.data.path = Some(base.join(p));
    }
    cfg.output_dir = base.join(&cfg.output_dir);
    Ok(cfg)
}

pub fn run_training(cfg: &RunConfig, out: &mut dyn Write) -> Result<TrainReport> {
    let file = match &cfg.data.path {
        Some(p) => load_dataset(p)?,
        None => synthetic_generate(cfg.data.nodes, cfg.data.days, cfg.data.seed)?,
    };
    let data = ordered(file, cfg.model.node_order)?;
    let mcfg = cfg.model_config(data.nodes())?;
    let tcfg = cfg.train_config();
    tcfg.validate()?;
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let resolved = dir.join(CONFIG_FILE);
    fs::write(&resolved, cfg.to_ini()).map_err(write_err(&resolved))?;

    let mut model = MCSTModel::new(mcfg, cfg.data.seed)?;
    let history_path = dir.join(HISTORY_FILE);
    let mut history = create(&history_path)?;
    let mut io_failure = None;
    let outcome = train(&mut model, &data, &tcfg, |rec| {
        let line = serde_json::to_string(rec).expect("record serialises");
        let res = writeln!(history, "{line}")
            .and_then(|_| history.flush())
            .and_then(|_| {
                writeln!(
                    out,
                    "epoch {:>3}  loss {:.5}  val mae {:.4}  lr {:.2e}",
                    rec.epoch, rec.train_loss, rec.val_mae, rec.lr
                )
            });
        if let Err(e) = res {
            io_failure.get_or_insert(e);
        }
    })?;
    if let Some(e) = io_failure {
        return Err(Error::io(&history_path, e));
    }
    checkpoint::save(&model.params, dir.join(CHECKPOINT_FILE))?;

    let (t_in, t_out) = (model.cfg.t_in, model.cfg.t_out);
    let bs = tcfg.batch_size;
    let val = evaluate(&model, &data.windows(Split::Val, t_in, t_out)?, &data.normalizer, bs)?;
    let test = evaluate(&model, &data.windows(Split::Test, t_in, t_out)?, &data.normalizer, bs)?;
    let report = TrainReport {
        nodes: data.nodes(),
        steps: data.file.steps(),
        parameters: model.params.numel(),
        epochs_run: outcome.history.len(),
        best_epoch: outcome.best_epoch,
        stopped_early: outcome.stopped_early,
        best_val_mae: outcome.best_val_mae,
        val,
        test,
        baselines: baselines(&data, Split::Test, t_in, t_out)?,
    };
    let report_path = dir.join(REPORT_FILE);
    let json = serde_json::to_string_pretty(&report).expect("report serialises");
    fs::write(&report_path, json + "\n").map_err(write_err(&report_path))?;
    writeln!(
        out,
        "best epoch {}: test mae {:.4} (inertia {:.4}, mean {:.4}); wrote {}",
        report.best_epoch,
        report.test.mae(),
        report.baselines.inertia.mae(),
        report.baselines.mean.mae(),
        dir.display()
    )
    .map_err(stdout_err)?;
    Ok(report)
}

/// `mcst train --config <path>`.
pub fn train_cmd(config_path: &Path, out: &mut dyn Write) -> Result<TrainReport> {
    run_training(&load_run_config(config_path)?, out)
}

// ---------------------------------------------------------------- eval

#[derive(Clone, Debug)]
pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    pub split: Split,
    pub node_order: NodeOrder,
    pub batch_size: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub split: String,
    /// Half-open step range of the split.
    pub range: [usize; 2],
    pub windows: usize,
    #[serde(flatten)]
    pub model: MetricsReport,
    pub baselines: Baselines,
}

pub fn eval_cmd(args: &EvalArgs) -> Result<EvalReport> {
    let model = load_model(&args.checkpoint)?;
    let data = load_ordered(&args.data, args.node_order)?;
    check_nodes(&model, &data)?;
    let (t_in, t_out) = (model.cfg.t_in, model.cfg.t_out);
    let w = data.windows(args.split, t_in, t_out)?;
    let range = data.splits.get(args.split);
    Ok(EvalReport {
        split: format!("{:?}", args.split).to_lowercase(),
        range: [range.start, range.end],
        windows: w.len(),
        model: evaluate(&model, &w, &data.normalizer, args.batch_size)?,
        baselines: baselines(&data, args.split, t_in, t_out)?,
    })
}

// ---------------------------------------------------------------- predict

#[derive(Clone, Debug)]
pub struct PredictArgs {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    /// First forecast step; the input is the `t_in` steps before it.
    pub at: usize,
    pub node_order: NodeOrder,
}

#[derive(Clone, Debug)]
pub struct Forecast {
    /// `[t_out, n, 3]` in data units, dataset node order.
    pub values: Tensor,
    /// `(horizon, node)` pairs whose occupancy left the 3σ band.
    pub flagged: Vec<(usize, usize)>,
}

pub fn forecast(args: &PredictArgs) -> Result<Forecast> {
    let model = load_model(&args.checkpoint)?;
    let data = load_ordered(&args.data, args.node_order)?;
    check_nodes(&model, &data)?;
    let (x, tod, dow) = data.input_at(args.at, model.cfg.t_in)?;
    let pred = data.normalizer.invert(&model.predict(&x, &tod, &dow)?)?;
    let [_, h, n, c] = *pred.shape() else { unreachable!() };
    let perm = args.node_order.permutation(n);
    let mut values = vec![0.0; h * n * c];
    for k in 0..h {
        for (pos, &node) in perm.iter().enumerate() {
            let src = (k * n + pos) * c;
            values[(k * n + node) * c..(k * n + node + 1) * c].copy_from_slice(&pred.data()[src..src + c]);
        }
    }
    let (mu, sd) = (data.normalizer.mean[OCCUPANCY], data.normalizer.std[OCCUPANCY]);
    let (lo, hi) = (mu - 3.0 * sd, mu + 3.0 * sd);
    let mut flagged = Vec::new();
    for k in 0..h {
        for v in 0..n {
            let occ = values[(k * n + v) * c + OCCUPANCY];
            if !(lo..=hi).contains(&occ) {
                log::warn!("horizon {} node {v}: occupancy {occ:.4} outside [{lo:.4}, {hi:.4}]", k + 1);
                flagged.push((k, v));
            }
        }
    }
    Ok(Forecast {
        values: Tensor::new([h, n, c], values)?,
        flagged,
    })
}

/// Writes `horizon,node,flow,speed,occupancy` rows, horizon counted from 1.
/// Values use the shortest representation that parses back exactly.
pub fn write_forecast_csv(f: &Forecast, out: &mut dyn Write) -> Result<()> {
    let [h, n, c] = *f.values.shape() else { unreachable!() };
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["horizon".to_string(), "node".to_string()];
    header.extend(CHANNEL_NAMES.iter().map(|s| s.to_string()));
    w.write_record(&header).map_err(csv_err)?;
    for k in 0..h {
        for v in 0..n {
            let mut row = vec![(k + 1).to_string(), v.to_string()];
            row.extend(f.values.data()[(k * n + v) * c..(k * n + v + 1) * c].iter().map(|x| x.to_string()));
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    w.flush().map_err(stdout_err)
}

fn csv_err(e: csv::Error) -> Error {
    Error::io("<csv>", std::io::Error::other(e))
}

pub fn predict_cmd(args: &PredictArgs, out: &mut dyn Write) -> Result<Forecast> {
    let f = forecast(args)?;
    write_forecast_csv(&f, out)?;
    Ok(f)
}

// ---------------------------------------------------------------- bench-scan

#[derive(Clone, Debug)]
pub struct BenchArgs {
    pub lens: Vec<usize>,
    pub d_inner: usize,
    pub state: usize,
    /// Chunk sizes for the parallel scan.
    pub chunks: Vec<usize>,
    pub repeats: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub len: usize,
    pub d_inner: usize,
    pub state: usize,
    /// 0 for the sequential scan.
    pub chunk: usize,
    pub mode: &'static str,
    pub wall_ns: u128,
    pub flops: u64,
    pub max_abs_diff: f64,
}

fn best_of<T>(repeats: usize, mut f: impl FnMut() -> Result<T>) -> Result<(T, u128)> {
    let mut best = u128::MAX;
    let mut last = None;
    for _ in 0..repeats.max(1) {
        let start = Instant::now();
        let r = f()?;
        best = best.min(start.elapsed().as_nanos());
        last = Some(r);
    }
    Ok((last.expect("ran at least once"), best))
}

pub fn bench_scan(args: &BenchArgs) -> Result<Vec<BenchRow>> {
    if args.lens.is_empty() || args.lens.contains(&0) || args.d_inner == 0 || args.state == 0 {
        return Err(Error::Config("bench-scan sizes must be positive".into()));
    }
    if args.chunks.contains(&0) {
        return Err(Error::Config("scan chunk size must be at least 1".into()));
    }
    let mut rows = Vec::new();
    for &len in &args.lens {
        let inst = ScanInstance::random(len, args.d_inner, args.state, args.seed)?;
        let ((reference, stats), ns) = best_of(args.repeats, || inst.sequential())?;
        rows.push(BenchRow {
            len,
            d_inner: args.d_inner,
            state: args.state,
            chunk: 0,
            mode: "seq",
            wall_ns: ns,
            flops: stats.flops,
            max_abs_diff: 0.0,
        });
        for &chunk in &args.chunks {
            let ((y, stats), ns) = best_of(args.repeats, || inst.parallel(chunk))?;
            rows.push(BenchRow {
                len,
                d_inner: args.d_inner,
                state: args.state,
                chunk,
                mode: "par",
                wall_ns: ns,
                flops: stats.flops,
                max_abs_diff: y.max_abs_diff(&reference),
            });
        }
    }
    Ok(rows)
}

pub fn write_bench_csv(rows: &[BenchRow], out: &mut dyn Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(stdout_err)
}

// ---------------------------------------------------------------- gradcheck

#[derive(Clone, Debug)]
pub struct GradcheckArgs {
    /// Run config whose model section is checked; the tiny model otherwise.
    pub config: Option<PathBuf>,
    pub nodes: usize,
    pub samples: usize,
    pub seed: u64,
    pub eps: f64,
    pub tol: f64,
    /// Backward rule to corrupt, as a negative control.
    pub corrupt: Option<String>,
}

impl Default for GradcheckArgs {
    fn default() -> Self {
        GradcheckArgs {
            config: None,
            nodes: 4,
            samples: 2,
            seed: 7,
            eps: 1e-5,
            tol: GRADCHECK_TOL,
            corrupt: None,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckOutcome {
    pub groups: Vec<GroupReport>,
    pub tol: f64,
    pub passed: bool,
}

/// Finite-difference check of every parameter of `cfg`'s model on the MSE of
/// a random batch, with dropout off.
pub fn gradcheck_model(cfg: ModelConfig, args: &GradcheckArgs) -> Result<GradcheckOutcome> {
    let model = MCSTModel::new(cfg, args.seed)?;
    let numel = model.params.numel();
    if numel > GRADCHECK_PARAM_CAP {
        return Err(Error::Config(format!(
            "gradcheck model has {numel} parameters, cap is {GRADCHECK_PARAM_CAP}"
        )));
    }
    use rand::Rng;
    let cfg = &model.cfg;
    let mut rng = substream(args.seed, "gradcheck");
    let m = args.samples.max(1);
    let x = Tensor::from_fn([m, cfg.t_in, cfg.n_nodes, cfg.c_features], |_| rng.gen_range(-2.0..2.0));
    let y = Tensor::from_fn([m, cfg.t_out, cfg.n_nodes, cfg.c_features], |_| rng.gen_range(-2.0..2.0));
    let tod: Vec<usize> = (0..m * cfg.t_in).map(|_| rng.gen_range(0..cfg.emb.tod_slots)).collect();
    let dow: Vec<usize> = (0..m * cfg.t_in).map(|_| rng.gen_range(0..cfg.emb.dow_slots)).collect();

    let mut store = model.params.clone();
    let eval = |s: &ParamStore| -> Result<f64> {
        let tape = Tape::new();
        let p = s.bind(&tape, false);
        let pred = model.forward(&p, tape.constant(x.clone()), &tod, &dow, None)?;
        mse_loss(pred, tape.constant(y.clone()))?.value().item()
    };
    let analytic = |s: &mut ParamStore| -> Result<()> {
        let tape = Tape::new();
        let p = s.bind(&tape, true);
        let pred = model.forward(&p, tape.constant(x.clone()), &tod, &dow, None)?;
        let loss = mse_loss(pred, tape.constant(y.clone()))?;
        let mut grads = tape.backward(loss)?;
        s.absorb_grads(&p, &mut grads);
        Ok(())
    };
    let mut run = move || check_parameters(&mut store, eval, analytic, args.eps);
    let groups = match &args.corrupt {
        Some(op) => with_corrupted_backward(op, run)?,
        None => run()?,
    };
    let passed = groups.iter().all(|g| g.passes(args.tol));
    Ok(GradcheckOutcome {
        groups,
        tol: args.tol,
        passed,
    })
}

pub fn gradcheck_cmd(args: &GradcheckArgs, out: &mut dyn Write) -> Result<GradcheckOutcome> {
    let cfg = match &args.config {
        Some(path) => {
            let rc = load_run_config(path)?;
            rc.model_config(rc.data.nodes)?
        }
        None => ModelConfig::tiny(args.nodes),
    };
    let outcome = gradcheck_model(cfg, args)?;
    write_gradcheck_table(&outcome, out)?;
    Ok(outcome)
}

pub fn write_gradcheck_table(o: &GradcheckOutcome, out: &mut dyn Write) -> Result<()> {
    let width = o.groups.iter().map(|g| g.name.len()).max().unwrap_or(9).max(9);
    writeln!(out, "{:<width$}  {:>7}  {:>11}  {:>11}  result", "parameter", "numel", "max_rel", "max_abs")
        .map_err(stdout_err)?;
    for g in &o.groups {
        let verdict = if g.passes(o.tol) { "pass" } else { "FAIL" };
        writeln!(
            out,
            "{:<width$}  {:>7}  {:>11.3e}  {:>11.3e}  {verdict}",
            g.name, g.numel, g.max_rel_err, g.max_abs_err
        )
        .map_err(stdout_err)?;
    }
    let failed = o.groups.iter().filter(|g| !g.passes(o.tol)).count();
    writeln!(out, "{} groups, {failed} above {:e}", o.groups.len(), o.tol).map_err(stdout_err)?;
    Ok(())
}
