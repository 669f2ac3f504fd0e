use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, HarnessError};
use crate::autodiff::{Gradients, ParamSet};
use crate::engine::{batch_gradients, LossTerms};
use crate::exec::Mode;
use crate::losses::Forcing;
use crate::planner::init_params;
use crate::rng::{derive_seed, stream, tag};
use crate::world::{Split, Task, World};

/// One record per base-training iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseLog {
    pub iteration: usize,
    pub forcing: Forcing,
    pub loss: LossTerms,
    pub grad_norm: f64,
}

/// Adam with bias correction over a parameter set's values.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Gradients,
    v: Gradients,
}

impl Adam {
    pub fn new(params: &ParamSet, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Gradients::zeros_like(params),
            v: Gradients::zeros_like(params),
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &Gradients) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grads.at(i).data();
            let m = self.m.at_mut(i).data_mut();
            for (mi, gi) in m.iter_mut().zip(g) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
            }
            let v = self.v.at_mut(i).data_mut();
            for (vi, gi) in v.iter_mut().zip(g) {
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
            }
            let (m, v) = (self.m.at(i).data(), self.v.at(i).data());
            for ((x, mi), vi) in params.value_at_mut(i).data_mut().iter_mut().zip(m).zip(v) {
                *x -= self.lr * (mi / c1) / ((vi / c2).sqrt() + self.eps);
            }
        }
    }
}

/// Seeded initialization for `cfg`, with rates at the CL initial α.
pub fn initial_params(cfg: &ExperimentConfig) -> Result<ParamSet, HarnessError> {
    Ok(init_params(&cfg.planner(), cfg.seed, cfg.cl_alpha_init)?)
}

/// Trains the base agent on the train-seen split with Adam on the combined
/// loss, alternating teacher and student forcing. `sink` receives every
/// iteration record as it is produced.
pub fn train_base(
    world: &World,
    cfg: &ExperimentConfig,
    mode: Mode,
    sink: &mut dyn FnMut(&BaseLog) -> Result<(), HarnessError>,
) -> Result<ParamSet, HarnessError> {
    cfg.validate()?;
    let planner = cfg.planner();
    let weights = cfg.weights();
    let mut params = initial_params(cfg)?;
    let pool: Vec<&Task> = world
        .stream(Split::TrainSeen)?
        .domains
        .iter()
        .flat_map(|d| &d.tasks)
        .collect();
    let take = cfg.base_batch.min(pool.len());
    let mut adam = Adam::new(&params, cfg.base_lr);
    for it in 0..cfg.base_iterations {
        let mut rng = stream(cfg.seed, &[tag::BASE, 0, it as u64]);
        let tasks: Vec<Task> = sample(&mut rng, pool.len(), take)
            .into_iter()
            .map(|i| pool[i].clone())
            .collect();
        let forcing = Forcing::for_batch(it);
        let seed = derive_seed(cfg.seed, &[tag::BASE, 1, it as u64]);
        let (mut grads, loss) = batch_gradients(
            world, &tasks, &params, &planner, &weights, forcing, seed, mode,
        )?;
        if !loss.total.is_finite() || !grads.all_finite() {
            return Err(HarnessError::Diverged { iteration: it });
        }
        let grad_norm = grads.l2_norm();
        if cfg.base_clip > 0.0 && grad_norm > cfg.base_clip {
            grads.scale(cfg.base_clip / grad_norm);
        }
        adam.step(&mut params, &grads);
        sink(&BaseLog {
            iteration: it,
            forcing,
            loss,
            grad_norm,
        })?;
    }
    Ok(params)
}
