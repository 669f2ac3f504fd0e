//! Experiment orchestration: configuration, base training, continual-learning
//! runs, checkpoints, append-only run logs and report emission.
//!
//! Every pipeline step reads and writes a fixed layout under one output
//! directory (see [`layout`]), so the steps can run as separate processes.

mod checkpoint;
mod config;
mod protocol;
mod report;
mod train;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT_VERSION};
pub use config::{ExperimentConfig, CONFIG_FORMAT_VERSION};
pub use protocol::{check_compatible, run_protocol, ProtocolRun, StageCallback, StageMetrics};
pub use report::{
    emit_report, summarize, ReportSummary, RunRecord, RunSummary, REPORT_FORMAT_VERSION,
};
pub use train::{initial_params, train_base, Adam, BaseLog};

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::engine::{Arm, EngineError};
use crate::exec::Mode;
use crate::losses::LossError;
use crate::metrics::{evaluate_domain, MetricsError, PerfMatrix};
use crate::planner::PlannerError;
use crate::world::{make_world, read_corpus, write_corpus, Split, World, WorldError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("required file {} does not exist", .0.display())]
    MissingFile(PathBuf),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("base training diverged: non-finite loss at iteration {iteration}")]
    Diverged { iteration: usize },
    #[error("stream/model mismatch: {0}")]
    DimensionMismatch(String),
    #[error("inconsistent run record: {0}")]
    Inconsistent(String),
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// File names under an output directory.
pub mod layout {
    use std::path::{Path, PathBuf};

    use crate::engine::Arm;
    use crate::world::Split;

    pub const CONFIG: &str = "config.toml";
    pub const CORPUS: &str = "corpus.jsonl";
    pub const BASE_CHECKPOINT: &str = "base_checkpoint.json";
    pub const BASE_LOG: &str = "base_train_log.jsonl";
    pub const RUNS: &str = "runs";
    pub const RUN_META: &str = "run.json";
    pub const PERF_MATRIX: &str = "perf_matrix.csv";
    pub const STAGE_METRICS: &str = "stage_metrics.jsonl";
    pub const TRAIN_LOG: &str = "train_log.jsonl";
    pub const FINAL_CHECKPOINT: &str = "checkpoint.json";
    pub const REPORT: &str = "report";

    pub fn run_dir(out: &Path, arm: Arm, split: Split) -> PathBuf {
        out.join(RUNS)
            .join(format!("{}_{}", arm.as_str(), split.as_str()))
    }
}

/// Identifies a run directory's arm and split.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunMeta {
    format_version: u32,
    kind: String,
    arm: Arm,
    split: Split,
    seed: u64,
}

/// Append-only JSON-lines writer, flushed after every batch of records.
pub struct JsonlWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl JsonlWriter {
    pub fn create(path: &Path) -> Result<Self, HarnessError> {
        let file = File::create(path).map_err(|e| HarnessError::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<(), HarnessError> {
        let line = serde_json::to_string(record).expect("log records serialize");
        writeln!(self.out, "{line}").map_err(|e| HarnessError::io(&self.path, e))
    }

    pub fn flush(&mut self) -> Result<(), HarnessError> {
        self.out
            .flush()
            .map_err(|e| HarnessError::io(&self.path, e))
    }
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, HarnessError> {
    let file = open_existing(path)?;
    let mut out = Vec::new();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| HarnessError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| HarnessError::Format {
                path: path.to_path_buf(),
                message: format!("line {}: {e}", k + 1),
            })?,
        );
    }
    Ok(out)
}

fn open_existing(path: &Path) -> Result<File, HarnessError> {
    if !path.exists() {
        return Err(HarnessError::MissingFile(path.to_path_buf()));
    }
    File::open(path).map_err(|e| HarnessError::io(path, e))
}

fn create_dir(dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))
}

/// Generates the world for `cfg` and writes the corpus and resolved config.
pub fn gen_scenes(cfg: &ExperimentConfig, out: &Path) -> Result<World, HarnessError> {
    cfg.validate()?;
    let world = make_world(cfg.seed, &cfg.world())?;
    create_dir(out)?;
    let path = out.join(layout::CORPUS);
    let file = File::create(&path).map_err(|e| HarnessError::io(&path, e))?;
    let mut w = BufWriter::new(file);
    write_corpus(&world, &mut w)?;
    w.flush().map_err(|e| HarnessError::io(&path, e))?;
    let cfg_path = out.join(layout::CONFIG);
    std::fs::write(&cfg_path, cfg.to_toml_string()).map_err(|e| HarnessError::io(&cfg_path, e))?;
    Ok(world)
}

/// Reads the corpus under `out`, checking it was generated with `cfg.seed`.
pub fn load_world(cfg: &ExperimentConfig, out: &Path) -> Result<World, HarnessError> {
    let path = out.join(layout::CORPUS);
    let world = read_corpus(BufReader::new(open_existing(&path)?))?;
    if world.seed != cfg.seed {
        return Err(HarnessError::Config(format!(
            "{} was generated with seed {}, but the run uses seed {}",
            path.display(),
            world.seed,
            cfg.seed
        )));
    }
    Ok(world)
}

/// Trains the base agent and writes its checkpoint and per-iteration log.
pub fn train_base_step(
    cfg: &ExperimentConfig,
    out: &Path,
    mode: Mode,
) -> Result<Checkpoint, HarnessError> {
    let world = load_world(cfg, out)?;
    let mut log = JsonlWriter::create(&out.join(layout::BASE_LOG))?;
    let params = train_base(&world, cfg, mode, &mut |r| {
        log.write(r)?;
        if r.iteration % 100 == 99 {
            log.flush()?;
        }
        Ok(())
    })?;
    log.flush()?;
    let ckpt = Checkpoint::new(0, params);
    ckpt.save(&out.join(layout::BASE_CHECKPOINT))?;
    Ok(ckpt)
}

/// Runs the continual-learning protocol for `arm` from the base checkpoint,
/// writing the run directory incrementally as stages complete.
pub fn run_cl_step(
    cfg: &ExperimentConfig,
    out: &Path,
    arm: Arm,
    mode: Mode,
) -> Result<ProtocolRun, HarnessError> {
    let base = Checkpoint::load(&out.join(layout::BASE_CHECKPOINT))?;
    let world = load_world(cfg, out)?;
    let dir = layout::run_dir(out, arm, cfg.cl_split);
    create_dir(&dir)?;
    let meta = RunMeta {
        format_version: REPORT_FORMAT_VERSION,
        kind: "run".into(),
        arm,
        split: cfg.cl_split,
        seed: cfg.seed,
    };
    let meta_path = dir.join(layout::RUN_META);
    std::fs::write(
        &meta_path,
        serde_json::to_string_pretty(&meta).expect("meta") + "\n",
    )
    .map_err(|e| HarnessError::io(&meta_path, e))?;

    let mut metrics_log = JsonlWriter::create(&dir.join(layout::STAGE_METRICS))?;
    let mut train_log = JsonlWriter::create(&dir.join(layout::TRAIN_LOG))?;
    let ckpt_path = dir.join(layout::FINAL_CHECKPOINT);
    let mut stage = base.stage;
    let run = run_protocol(
        &world,
        base.params,
        cfg,
        arm,
        mode,
        &mut |row, logs, params| {
            for r in row {
                metrics_log.write(r)?;
            }
            for l in logs {
                train_log.write(l)?;
            }
            metrics_log.flush()?;
            train_log.flush()?;
            if !logs.is_empty() {
                // Latest parameters after every domain, so an interrupted run
                // keeps its progress.
                stage += 1;
                Checkpoint::new(stage, params.clone()).save(&ckpt_path)?;
            }
            Ok(())
        },
    )?;

    let pm_path = dir.join(layout::PERF_MATRIX);
    let file = File::create(&pm_path).map_err(|e| HarnessError::io(&pm_path, e))?;
    run.matrix.write_csv(BufWriter::new(file))?;
    Ok(run)
}

/// Greedy evaluation of a checkpoint on every domain of `split`.
pub fn eval_step(
    cfg: &ExperimentConfig,
    out: &Path,
    checkpoint: &Path,
    split: Split,
    mode: Mode,
) -> Result<Vec<StageMetrics>, HarnessError> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let world = load_world(cfg, out)?;
    let stream = world.stream(split)?;
    check_compatible(&ckpt.params, stream, cfg)?;
    let planner = cfg.planner();
    stream
        .domains
        .iter()
        .map(|d| {
            Ok(StageMetrics {
                stage: ckpt.stage,
                domain: d.domain_id,
                metrics: evaluate_domain(&world, &ckpt.params, &planner, d, mode)?,
            })
        })
        .collect()
}

/// Loads one run directory written by [`run_cl_step`].
pub fn read_run(dir: &Path) -> Result<RunRecord, HarnessError> {
    let meta_path = dir.join(layout::RUN_META);
    let text = std::fs::read_to_string(&meta_path).map_err(|e| HarnessError::io(&meta_path, e))?;
    let meta: RunMeta = serde_json::from_str(&text).map_err(|e| HarnessError::Format {
        path: meta_path.clone(),
        message: e.to_string(),
    })?;
    if meta.format_version != REPORT_FORMAT_VERSION {
        return Err(HarnessError::Format {
            path: meta_path,
            message: format!("unsupported format_version {}", meta.format_version),
        });
    }
    let matrix = PerfMatrix::read_csv(open_existing(&dir.join(layout::PERF_MATRIX))?)?;
    let metrics = read_jsonl(&dir.join(layout::STAGE_METRICS))?;
    Ok(RunRecord {
        arm: meta.arm,
        split: meta.split,
        matrix,
        metrics,
    })
}

/// Emits the report for every run under `out/runs` into `out/report`.
pub fn report_step(out: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let runs_dir = out.join(layout::RUNS);
    if !runs_dir.exists() {
        return Err(HarnessError::MissingFile(runs_dir));
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(&runs_dir)
        .map_err(|e| HarnessError::io(&runs_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(layout::RUN_META).exists())
        .collect();
    dirs.sort();
    let runs = dirs
        .iter()
        .map(|d| read_run(d))
        .collect::<Result<Vec<_>, _>>()?;
    emit_report(&runs, &out.join(layout::REPORT))
}
