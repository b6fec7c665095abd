use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mcst::commands::{self, BenchArgs, EvalArgs, GenDataArgs, GradcheckArgs, PredictArgs};
use mcst::config::NodeOrder;
use mcst::data::Split;
use mcst::{Error, Result};

#[derive(Parser)]
#[command(name = "mcst", version, about = "Multi-channel spatio-temporal traffic forecasting")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic dataset file.
    GenData {
        #[arg(long)]
        nodes: usize,
        #[arg(long)]
        days: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train from a run config; writes config.resolved, checkpoint.best,
    /// history.jsonl and report.json into the configured output directory.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Score a checkpoint on one split, next to the historical baselines.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        /// identity, reverse or shuffle:<seed>; must match training.
        #[arg(long, default_value = "identity")]
        node_order: NodeOrder,
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Forecast the steps starting at --at from the window before it, as CSV.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        at: usize,
        #[arg(long, default_value = "identity")]
        node_order: NodeOrder,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time sequential and chunked scans; CSV on stdout.
    BenchScan {
        #[arg(long = "len", value_delimiter = ',', default_value = "1024,2048,4096")]
        lens: Vec<usize>,
        #[arg(long, default_value_t = 16)]
        dinner: usize,
        #[arg(long, default_value_t = 16)]
        state: usize,
        /// Chunk sizes for the parallel scan.
        #[arg(long, value_delimiter = ',', default_value = "1,16,256")]
        chunks: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare every parameter gradient against central differences.
    Gradcheck {
        /// Run config supplying the model section; the tiny model otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        nodes: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        #[arg(long, hide = true)]
        corrupt: Option<String>,
    },
}

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| Error::Io {
            path: p.to_path_buf(),
            source: e,
        })?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn flushed(mut w: Box<dyn Write>) -> Result<()> {
    w.flush().map_err(|e| Error::Io {
        path: "<output>".into(),
        source: e,
    })
}

/// Ok(true) on success, Ok(false) when a check failed.
fn run(cmd: Cmd) -> Result<bool> {
    let mut stdout = io::stdout().lock();
    match cmd {
        Cmd::GenData { nodes, days, seed, out } => {
            commands::gen_data(&GenDataArgs { nodes, days, seed, out }, &mut stdout)?;
        }
        Cmd::Train { config } => {
            commands::train_cmd(&config, &mut stdout)?;
        }
        Cmd::Eval {
            checkpoint,
            data,
            split,
            node_order,
            batch_size,
            out,
        } => {
            drop(stdout);
            let report = commands::eval_cmd(&EvalArgs {
                checkpoint,
                data,
                split,
                node_order,
                batch_size,
            })?;
            let mut w = sink(out.as_deref())?;
            let json = serde_json::to_string_pretty(&report).expect("report serialises");
            writeln!(w, "{json}").map_err(|e| Error::Io {
                path: "<output>".into(),
                source: e,
            })?;
            flushed(w)?;
        }
        Cmd::Predict {
            checkpoint,
            data,
            at,
            node_order,
            out,
        } => {
            drop(stdout);
            let args = PredictArgs {
                checkpoint,
                data,
                at,
                node_order,
            };
            let f = commands::forecast(&args)?;
            let mut w = sink(out.as_deref())?;
            commands::write_forecast_csv(&f, &mut w)?;
            flushed(w)?;
        }
        Cmd::BenchScan {
            lens,
            dinner,
            state,
            chunks,
            repeats,
            seed,
            out,
        } => {
            drop(stdout);
            let rows = commands::bench_scan(&BenchArgs {
                lens,
                d_inner: dinner,
                state,
                chunks,
                repeats,
                seed,
            })?;
            let mut w = sink(out.as_deref())?;
            commands::write_bench_csv(&rows, &mut w)?;
            flushed(w)?;
        }
        Cmd::Gradcheck {
            config,
            nodes,
            seed,
            eps,
            corrupt,
        } => {
            let args = GradcheckArgs {
                config,
                nodes,
                seed,
                eps,
                corrupt,
                ..GradcheckArgs::default()
            };
            return Ok(commands::gradcheck_cmd(&args, &mut stdout)?.passed);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.cmd) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::exit_code(&e) as u8)
        }
    }
}
