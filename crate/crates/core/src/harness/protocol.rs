use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, HarnessError};
use crate::autodiff::ParamSet;
use crate::engine::{Arm, Engine, IterLog};
use crate::exec::Mode;
use crate::metrics::{evaluate_domain, DomainMetrics, PerfMatrix};
use crate::planner::init_params;
use crate::world::{Split, TaskStream, World};

/// Metrics of one domain after one training stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageMetrics {
    pub stage: usize,
    pub domain: u32,
    #[serde(flatten)]
    pub metrics: DomainMetrics,
}

/// Receives each stage's metrics, the logs of the domain just trained (empty
/// for the base stage) and the parameters after it.
pub type StageCallback<'a> =
    dyn FnMut(&[StageMetrics], &[IterLog], &ParamSet) -> Result<(), HarnessError> + 'a;

/// Everything a continual-learning run produces.
#[derive(Debug, Clone)]
pub struct ProtocolRun {
    pub arm: Arm,
    pub split: Split,
    pub matrix: PerfMatrix,
    /// Stage-major, domain order of the stream.
    pub metrics: Vec<StageMetrics>,
    pub logs: Vec<IterLog>,
    pub params: ParamSet,
}

/// Errors unless `params` has exactly the planner layout of `cfg` and every
/// task of `stream` fits the planner's instruction length.
pub fn check_compatible(
    params: &ParamSet,
    stream: &TaskStream,
    cfg: &ExperimentConfig,
) -> Result<(), HarnessError> {
    let planner = cfg.planner();
    let reference = init_params(&planner, 0, cfg.cl_alpha_init)?;
    reference
        .check_layout(params)
        .map_err(|e| HarnessError::DimensionMismatch(format!("checkpoint vs config: {e}")))?;
    for d in &stream.domains {
        for t in &d.tasks {
            if t.instruction.len() > planner.max_instruction_len {
                return Err(HarnessError::DimensionMismatch(format!(
                    "task {} has a {}-token instruction; the planner takes at most {}",
                    t.task_id,
                    t.instruction.len(),
                    planner.max_instruction_len
                )));
            }
        }
    }
    Ok(())
}

fn evaluate_stage(
    world: &World,
    params: &ParamSet,
    cfg: &ExperimentConfig,
    stream: &TaskStream,
    stage: usize,
    mode: Mode,
) -> Result<Vec<StageMetrics>, HarnessError> {
    let planner = cfg.planner();
    stream
        .domains
        .iter()
        .map(|d| {
            Ok(StageMetrics {
                stage,
                domain: d.domain_id,
                metrics: evaluate_domain(world, params, &planner, d, mode)?,
            })
        })
        .collect()
}

/// Scores the base agent on every domain of the `cfg.cl_split` stream, then
/// for each domain in order trains with `arm` and re-scores every domain.
/// `on_stage` sees each stage's metrics, the domain logs and the parameters
/// as they finish.
pub fn run_protocol(
    world: &World,
    base: ParamSet,
    cfg: &ExperimentConfig,
    arm: Arm,
    mode: Mode,
    on_stage: &mut StageCallback<'_>,
) -> Result<ProtocolRun, HarnessError> {
    cfg.validate()?;
    let split = cfg.cl_split;
    let stream = world.stream(split)?;
    check_compatible(&base, stream, cfg)?;
    let planner = cfg.planner();
    let mut engine = Engine::for_arm(world, &planner, cfg.weights(), &cfg.cl(), cfg.seed, arm)?;
    engine.mode = mode;
    let mut learner = engine.learner(base, arm == Arm::DualSr);

    let mut matrix = PerfMatrix::new(stream.domain_ids());
    let mut metrics = Vec::new();
    let mut logs = Vec::new();

    let row = evaluate_stage(world, &learner.params, cfg, stream, 0, mode)?;
    on_stage(&row, &[], &learner.params)?;
    matrix.push_row(row.iter().map(|m| m.metrics.sr).collect())?;
    metrics.extend(row);

    for domain in &stream.domains {
        let domain_logs = engine.run_domain(&mut learner, domain)?;
        let row = evaluate_stage(world, &learner.params, cfg, stream, learner.stage, mode)?;
        on_stage(&row, &domain_logs, &learner.params)?;
        matrix.push_row(row.iter().map(|m| m.metrics.sr).collect())?;
        metrics.extend(row);
        logs.extend(domain_logs);
    }
    Ok(ProtocolRun {
        arm,
        split,
        matrix,
        metrics,
        logs,
        params: learner.params,
    })
}
