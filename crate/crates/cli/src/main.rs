//! `vlncl`: command-line driver for the continual-learning navigation lab.
//!
//! Every subcommand works inside one output directory. `gen-scenes` stores
//! the resolved config there, and later steps reuse it unless `--config` is
//! given.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use vlncl_core::engine::Arm;
use vlncl_core::exec::Mode;
use vlncl_core::harness::{self, layout, ExperimentConfig};
use vlncl_core::world::Split;

#[derive(Parser)]
#[command(name = "vlncl", version, about = "Continual-learning navigation lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (flat TOML). Defaults to OUT/config.toml if present,
    /// else built-in defaults.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Output directory; overrides the config's out_dir.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Run every parallel section on the calling thread.
    #[arg(long)]
    sequential: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate scenes and task streams and write the corpus.
    GenScenes {
        #[command(flatten)]
        common: Common,
        /// Domains in the continual-learning split.
        #[arg(long, value_name = "N")]
        domains: Option<usize>,
        /// Tasks generated per domain in every split.
        #[arg(long, value_name = "N")]
        tasks_per_domain: Option<usize>,
    },
    /// Train the base agent on the train-seen split.
    TrainBase {
        #[command(flatten)]
        common: Common,
        /// Base-training iterations; overrides the config.
        #[arg(long, value_name = "N")]
        iterations: Option<usize>,
    },
    /// Continual learning with dual-loop scenario replay.
    RunCl {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        stream: StreamArgs,
    },
    /// Continual learning with the fine-tune baseline.
    RunBaseline {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        stream: StreamArgs,
    },
    /// Greedy evaluation of a checkpoint on one split.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to evaluate (default: OUT/base_checkpoint.json).
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        /// Split to evaluate (train_seen, val_seen, val_unseen).
        #[arg(long, value_name = "SPLIT")]
        split: Option<Split>,
    },
    /// Emit tables, charts and the summary for every run under OUT/runs.
    Report {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args, Clone)]
struct StreamArgs {
    /// Split whose domains form the stream (val_seen or val_unseen).
    #[arg(long, value_name = "SPLIT")]
    split: Option<Split>,
    /// Inner-loop iterations per domain; overrides the config.
    #[arg(long, value_name = "N")]
    iterations: Option<usize>,
}

/// Resolved config, output directory and execution mode.
struct Resolved {
    cfg: ExperimentConfig,
    out: PathBuf,
    mode: Mode,
}

fn resolve(common: &Common) -> Result<Resolved> {
    let from_config = match &common.config {
        Some(p) => Some(ExperimentConfig::load(p)?),
        None => None,
    };
    let out = common
        .out
        .clone()
        .or_else(|| {
            from_config
                .as_ref()
                .and_then(|c| c.out_dir.as_ref().map(PathBuf::from))
        })
        .context("no output directory: pass --out DIR or set out_dir in the config")?;
    let mut cfg = match from_config {
        Some(c) => c,
        None => {
            let stored = out.join(layout::CONFIG);
            if stored.exists() {
                ExperimentConfig::load(&stored)?
            } else {
                ExperimentConfig::default()
            }
        }
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let mode = if common.sequential {
        Mode::Sequential
    } else {
        Mode::Parallel
    };
    Ok(Resolved { cfg, out, mode })
}

fn finish(cx: &Resolved) -> Result<()> {
    cx.cfg.validate()?;
    Ok(())
}

fn print_paths(paths: &[PathBuf]) {
    for p in paths {
        println!("{}", p.display());
    }
}

fn run_stream(common: &Common, stream: &StreamArgs, arm: Arm) -> Result<()> {
    let mut cx = resolve(common)?;
    if let Some(split) = stream.split {
        cx.cfg.cl_split = split;
    }
    if let Some(n) = stream.iterations {
        cx.cfg.cl_iterations = n;
    }
    finish(&cx)?;
    let run = harness::run_cl_step(&cx.cfg, &cx.out, arm, cx.mode)?;
    let summary = harness::summarize(&harness::RunRecord {
        arm,
        split: run.split,
        matrix: run.matrix,
        metrics: run.metrics,
    })?;
    eprintln!(
        "{} on {}: ST {:+.4}, UT {:+.4}, final SR {:.4}",
        arm.as_str(),
        run.split,
        summary.seen_transfer,
        summary.unseen_transfer,
        summary.last.sr
    );
    println!("{}", layout::run_dir(&cx.out, arm, run.split).display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenScenes {
            common,
            domains,
            tasks_per_domain,
        } => {
            let mut cx = resolve(&common)?;
            if let Some(n) = domains {
                match cx.cfg.cl_split {
                    Split::ValSeen => cx.cfg.val_seen_domains = n,
                    _ => cx.cfg.val_unseen_domains = n,
                }
            }
            if let Some(n) = tasks_per_domain {
                cx.cfg.tasks_per_domain = n;
            }
            finish(&cx)?;
            let world = harness::gen_scenes(&cx.cfg, &cx.out)?;
            eprintln!(
                "wrote {} scenes, {} tasks",
                world.scenes.len(),
                world.streams.values().map(|s| s.num_tasks()).sum::<usize>()
            );
            print_paths(&[cx.out.join(layout::CORPUS), cx.out.join(layout::CONFIG)]);
        }
        Command::TrainBase { common, iterations } => {
            let mut cx = resolve(&common)?;
            if let Some(n) = iterations {
                cx.cfg.base_iterations = n;
            }
            finish(&cx)?;
            harness::train_base_step(&cx.cfg, &cx.out, cx.mode)?;
            print_paths(&[
                cx.out.join(layout::BASE_CHECKPOINT),
                cx.out.join(layout::BASE_LOG),
            ]);
        }
        Command::RunCl { common, stream } => run_stream(&common, &stream, Arm::DualSr)?,
        Command::RunBaseline { common, stream } => run_stream(&common, &stream, Arm::FineTune)?,
        Command::Eval {
            common,
            checkpoint,
            split,
        } => {
            let cx = resolve(&common)?;
            finish(&cx)?;
            let ckpt = checkpoint.unwrap_or_else(|| cx.out.join(layout::BASE_CHECKPOINT));
            let split = split.unwrap_or(cx.cfg.cl_split);
            let rows = harness::eval_step(&cx.cfg, &cx.out, &ckpt, split, cx.mode)?;
            for r in &rows {
                println!("{}", serde_json::to_string(r)?);
            }
        }
        Command::Report { common } => {
            let out = common
                .out
                .clone()
                .or_else(|| resolve(&common).ok().map(|cx| cx.out))
                .context("no output directory: pass --out DIR")?;
            print_paths(&harness::report_step(&out)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
