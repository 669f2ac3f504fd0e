//! Training losses over a recorded trajectory: imitation (IL), REINFORCE
//! (RL), history-teacher (HT), target prediction and their weighted sum.
//!
//! Every loss is built on the episode's tape so it can be differentiated.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Var};
use crate::planner::{grid_offsets, PlannerConfig};
use crate::world::{euclid, EpisodeState, Scene, Task};

/// Shaping reward added on STOP: `+STOP_REWARD` within the success radius,
/// `-STOP_REWARD` otherwise.
pub const STOP_REWARD: f64 = 2.0;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("trajectory has no steps")]
    EmptyTrajectory,
    #[error("RL loss needs a student-forced trajectory")]
    TeacherForcedRl,
    #[error("all loss weights are zero")]
    ZeroWeights,
    #[error("invalid loss weights: {0}")]
    InvalidWeights(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Forcing {
    /// Actions follow the teacher path.
    Teacher,
    /// Actions come from the policy; labels are the shortest-path next hop.
    Student,
}

impl Forcing {
    /// Even batches are teacher-forced, odd batches student-forced.
    pub fn for_batch(index: usize) -> Self {
        if index.is_multiple_of(2) {
            Forcing::Teacher
        } else {
            Forcing::Student
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// Log-probabilities over the step's action space (1×|A|).
    pub action_logp: Var,
    /// Log-probabilities over candidate cells (1×q).
    pub target_logp: Var,
    pub chosen: usize,
    pub teacher: usize,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub task_id: u64,
    pub forcing: Forcing,
    pub steps: Vec<StepRecord>,
    pub final_state: EpisodeState,
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub il: f64,
    pub rl: f64,
    pub ht: f64,
    pub target: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            il: 1.0,
            rl: 1.0,
            ht: 1.0,
            target: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        let w = [self.il, self.rl, self.ht, self.target];
        if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(LossError::InvalidWeights(
                "weights must be finite and nonnegative".into(),
            ));
        }
        if w.iter().all(|&x| x == 0.0) {
            return Err(LossError::ZeroWeights);
        }
        Ok(())
    }
}

fn non_empty(traj: &TrajectoryRecord) -> Result<(), LossError> {
    if traj.steps.is_empty() {
        Err(LossError::EmptyTrajectory)
    } else {
        Ok(())
    }
}

/// Sum of `coef_t · logp_t[index_t]` over steps.
fn weighted_pick_sum(
    tape: &mut Tape,
    terms: impl IntoIterator<Item = (Var, usize, f64)>,
) -> Result<Var, LossError> {
    let mut acc: Option<Var> = None;
    for (logp, index, coef) in terms {
        let p = tape.pick(logp, index)?;
        let p = tape.scale(p, coef);
        acc = Some(match acc {
            None => p,
            Some(a) => tape.add(a, p)?,
        });
    }
    acc.ok_or(LossError::EmptyTrajectory)
}

/// Mean teacher-action cross-entropy.
pub fn il_loss(tape: &mut Tape, traj: &TrajectoryRecord) -> Result<Var, LossError> {
    non_empty(traj)?;
    let c = -1.0 / traj.len() as f64;
    weighted_pick_sum(
        tape,
        traj.steps.iter().map(|s| (s.action_logp, s.teacher, c)),
    )
}

/// REINFORCE with the episode-mean return-to-go as baseline.
pub fn rl_loss(tape: &mut Tape, traj: &TrajectoryRecord) -> Result<Var, LossError> {
    non_empty(traj)?;
    if traj.forcing == Forcing::Teacher {
        return Err(LossError::TeacherForcedRl);
    }
    let adv = advantages(&traj.steps.iter().map(|s| s.reward).collect::<Vec<_>>());
    weighted_pick_sum(
        tape,
        traj.steps
            .iter()
            .zip(adv)
            .map(|(s, a)| (s.action_logp, s.chosen, -a)),
    )
}

/// Undiscounted return-to-go minus its episode mean.
pub fn advantages(rewards: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (t, r) in rewards.iter().enumerate().rev() {
        acc += r;
        g[t] = acc;
    }
    let b = g.iter().sum::<f64>() / g.len().max(1) as f64;
    g.iter().map(|x| x - b).collect()
}

/// Negative summed log-probability of the teacher actions.
pub fn ht_loss(tape: &mut Tape, traj: &TrajectoryRecord) -> Result<Var, LossError> {
    non_empty(traj)?;
    weighted_pick_sum(
        tape,
        traj.steps.iter().map(|s| (s.action_logp, s.teacher, -1.0)),
    )
}

/// Grid cell whose center is closest to the goal; ties go to the lower index.
pub fn target_cell(task: &Task, scene: &Scene, cfg: &PlannerConfig) -> usize {
    let origin = scene.position(task.start);
    let goal = scene.position(task.goal);
    let mut best = (f64::INFINITY, 0);
    for (i, off) in grid_offsets(cfg).iter().enumerate() {
        let d = euclid([origin[0] + off[0], origin[1] + off[1]], goal);
        if d < best.0 {
            best = (d, i);
        }
    }
    best.1
}

/// Negative summed log-probability of the goal-nearest candidate cell.
pub fn target_loss(
    tape: &mut Tape,
    traj: &TrajectoryRecord,
    task: &Task,
    scene: &Scene,
    cfg: &PlannerConfig,
) -> Result<Var, LossError> {
    non_empty(traj)?;
    let cell = target_cell(task, scene, cfg);
    weighted_pick_sum(tape, traj.steps.iter().map(|s| (s.target_logp, cell, -1.0)))
}

/// Weighted sum of the losses that apply to the trajectory's forcing mode:
/// RL only for student forcing, HT only for teacher forcing.
pub fn total_loss(
    tape: &mut Tape,
    traj: &TrajectoryRecord,
    task: &Task,
    scene: &Scene,
    cfg: &PlannerConfig,
    w: &LossWeights,
) -> Result<Var, LossError> {
    w.validate()?;
    non_empty(traj)?;
    let mut terms = Vec::with_capacity(4);
    if w.il > 0.0 {
        terms.push((il_loss(tape, traj)?, w.il));
    }
    match traj.forcing {
        Forcing::Student if w.rl > 0.0 => terms.push((rl_loss(tape, traj)?, w.rl)),
        Forcing::Teacher if w.ht > 0.0 => terms.push((ht_loss(tape, traj)?, w.ht)),
        _ => {}
    }
    if w.target > 0.0 {
        terms.push((target_loss(tape, traj, task, scene, cfg)?, w.target));
    }
    let mut acc: Option<Var> = None;
    for (v, c) in terms {
        let v = tape.scale(v, c);
        acc = Some(match acc {
            None => v,
            Some(a) => tape.add(a, v)?,
        });
    }
    // Weights are valid, but the forcing mode may exclude the only positive term.
    Ok(acc.unwrap_or_else(|| tape.constant(crate::autodiff::Tensor::scalar(0.0))))
}

#[cfg(test)]
mod tests;
