//! Dual-loop scenario replay: per-batch inner updates with learnable rates
//! on new plus replayed tasks, a per-domain Reptile outer update, and a
//! domain-keyed memory buffer. The fine-tune baseline is the same loop with
//! no replay and full adoption (β = 1).

mod buffer;
mod update;

pub use buffer::{buffer_update, sample_replay, BufferEvent, MemoryBuffer};
pub use update::{inner_update, learn_alpha, outer_update, AlphaMeta, ALPHA_MAX, ALPHA_MIN};

use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Gradients, ParamSet, Tensor};
use crate::exec::{self, Mode};
use crate::losses::{
    ht_loss, il_loss, rl_loss, target_loss, total_loss, Forcing, LossError, LossWeights,
};
use crate::planner::{rollout, Driver, PlannerConfig, PlannerError};
use crate::rng::{derive_seed, stream, tag};
use crate::world::{Domain, Task, World, WorldError};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("meta rate β must lie in (0, 1], got {0}")]
    InvalidBeta(f64),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid continual-learning config: {0}")]
    InvalidConfig(String),
    #[error("domain {0} has no tasks")]
    EmptyDomain(u32),
    #[error("non-finite loss at stage {stage}, iteration {iteration}")]
    NonFinite { stage: usize, iteration: usize },
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    World(#[from] WorldError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CLConfig {
    /// Initial inner-loop rate for every parameter entry.
    pub alpha_init: f64,
    /// Outer-loop meta rate β.
    pub beta: f64,
    /// Replayed tasks per batch (rs).
    pub replay: usize,
    /// Buffer parameter Z: per-domain capacity and replacement period.
    pub buffer_z: usize,
    /// Inner-loop iterations per task domain.
    pub iterations: usize,
    /// New tasks per batch.
    pub batch_new: usize,
    pub learn_alpha: bool,
    /// Step size of the α update.
    pub alpha_lr: f64,
}

impl Default for CLConfig {
    fn default() -> Self {
        Self {
            alpha_init: 1e-2,
            beta: 0.5,
            replay: 4,
            buffer_z: 10,
            iterations: 1000,
            batch_new: 4,
            learn_alpha: true,
            alpha_lr: 1e-3,
        }
    }
}

impl CLConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(EngineError::InvalidBeta(self.beta));
        }
        let bad = |m: &str| Err(EngineError::InvalidConfig(m.into()));
        if !(self.alpha_init >= ALPHA_MIN && self.alpha_init <= ALPHA_MAX) {
            return bad("alpha_init must lie in [1e-6, 1e-1]");
        }
        if self.buffer_z == 0 {
            return bad("buffer_z must be at least 1");
        }
        if self.batch_new == 0 {
            return bad("batch_new must be positive");
        }
        if !(self.alpha_lr >= 0.0 && self.alpha_lr.is_finite()) {
            return bad("alpha_lr must be a nonnegative number");
        }
        Ok(())
    }

    /// The fine-tune baseline: same budget, no replay, full adoption.
    pub fn fine_tune(&self) -> Self {
        Self {
            replay: 0,
            beta: 1.0,
            ..self.clone()
        }
    }
}

/// Which continual-learning arm to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arm {
    DualSr,
    FineTune,
}

impl Arm {
    pub fn as_str(self) -> &'static str {
        match self {
            Arm::DualSr => "dual-sr",
            Arm::FineTune => "fine-tune",
        }
    }
}

/// Mean loss terms over a batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub total: f64,
    pub il: f64,
    pub rl: f64,
    pub ht: f64,
    pub target: f64,
}

/// One structured record per (domain, iteration).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterLog {
    pub stage: usize,
    pub domain: u32,
    pub iteration: usize,
    pub forcing: Forcing,
    pub loss: LossTerms,
    pub grad_norm: f64,
    pub replayed: usize,
    pub buffer_occupancy: usize,
    pub alpha_mean: f64,
    pub alpha_min: f64,
    pub alpha_max: f64,
}

/// Sets every inner-loop rate to `alpha`.
pub fn reset_rates(params: &mut ParamSet, alpha: f64) {
    for i in 0..params.len() {
        params.rate_at_mut(i).data_mut().fill(alpha);
    }
}

fn alpha_stats(params: &ParamSet) -> (f64, f64, f64) {
    let (mut sum, mut lo, mut hi, mut n) = (0.0, f64::INFINITY, f64::NEG_INFINITY, 0usize);
    for (_, _, a) in params.iter() {
        for &x in a.data() {
            sum += x;
            lo = lo.min(x);
            hi = hi.max(x);
            n += 1;
        }
    }
    (sum / n.max(1) as f64, lo, hi)
}

/// Mean gradient and loss terms of the total loss over `tasks`, one episode
/// per task. Episode `k` under student forcing samples with seed
/// `derive_seed(rollout_seed, [k])`. Gradients are reduced in task order.
#[allow(clippy::too_many_arguments)]
pub fn batch_gradients(
    world: &World,
    tasks: &[Task],
    params: &ParamSet,
    planner: &PlannerConfig,
    weights: &LossWeights,
    forcing: Forcing,
    rollout_seed: u64,
    mode: Mode,
) -> Result<(Gradients, LossTerms), EngineError> {
    let per_task = exec::map_mode(mode, tasks, |k, task| -> Result<_, EngineError> {
        let scene = world.scene(task.scene_id)?;
        let driver = match forcing {
            Forcing::Teacher => Driver::Teacher,
            Forcing::Student => Driver::Sample(derive_seed(rollout_seed, &[k as u64])),
        };
        let mut r = rollout(task, scene, params, planner, &driver)?;
        let tape = &mut r.tape;
        let total = total_loss(tape, &r.record, task, scene, planner, weights)?;
        let mut terms = LossTerms {
            total: tape.scalar(total),
            ..LossTerms::default()
        };
        let il = il_loss(tape, &r.record)?;
        terms.il = tape.scalar(il);
        match forcing {
            Forcing::Teacher => {
                let ht = ht_loss(tape, &r.record)?;
                terms.ht = tape.scalar(ht);
            }
            Forcing::Student => {
                let rl = rl_loss(tape, &r.record)?;
                terms.rl = tape.scalar(rl);
            }
        }
        let tl = target_loss(tape, &r.record, task, scene, planner)?;
        terms.target = tape.scalar(tl);
        let grads = tape.backward(total, params)?;
        Ok((grads, terms))
    });
    let mut mean_terms = LossTerms::default();
    let mut grads = Vec::with_capacity(per_task.len());
    for res in per_task {
        let (g, t) = res?;
        mean_terms.total += t.total;
        mean_terms.il += t.il;
        mean_terms.rl += t.rl;
        mean_terms.ht += t.ht;
        mean_terms.target += t.target;
        grads.push(g);
    }
    let n = grads.len().max(1) as f64;
    let mut total = Gradients::sum_ordered(params, &grads);
    total.scale(1.0 / n);
    for x in [
        &mut mean_terms.total,
        &mut mean_terms.il,
        &mut mean_terms.rl,
        &mut mean_terms.ht,
        &mut mean_terms.target,
    ] {
        *x /= n;
    }
    Ok((total, mean_terms))
}

/// Live state of a continual-learning run.
#[derive(Debug, Clone)]
pub struct Learner {
    pub params: ParamSet,
    /// `None` for the fine-tune baseline, which keeps no memory.
    pub buffer: Option<MemoryBuffer>,
    /// Domains completed so far.
    pub stage: usize,
    buffer_rng: ChaCha8Rng,
}

/// Runs continual learning over task domains for one configuration.
pub struct Engine<'a> {
    pub world: &'a World,
    pub planner: &'a PlannerConfig,
    pub weights: LossWeights,
    pub cl: CLConfig,
    pub seed: u64,
    pub mode: Mode,
}

impl<'a> Engine<'a> {
    pub fn new(
        world: &'a World,
        planner: &'a PlannerConfig,
        weights: LossWeights,
        cl: CLConfig,
        seed: u64,
    ) -> Result<Self, EngineError> {
        cl.validate()?;
        weights.validate()?;
        Ok(Self {
            world,
            planner,
            weights,
            cl,
            seed,
            mode: Mode::default(),
        })
    }

    /// Engine configured for `arm`: Dual-SR uses `cl` as given, fine-tune
    /// uses [`CLConfig::fine_tune`].
    pub fn for_arm(
        world: &'a World,
        planner: &'a PlannerConfig,
        weights: LossWeights,
        cl: &CLConfig,
        seed: u64,
        arm: Arm,
    ) -> Result<Self, EngineError> {
        let cl = match arm {
            Arm::DualSr => cl.clone(),
            Arm::FineTune => cl.fine_tune(),
        };
        Self::new(world, planner, weights, cl, seed)
    }

    /// Starts a run from `params`, resetting every rate to `alpha_init`.
    pub fn learner(&self, mut params: ParamSet, with_buffer: bool) -> Learner {
        reset_rates(&mut params, self.cl.alpha_init);
        Learner {
            params,
            buffer: with_buffer.then(|| MemoryBuffer::new(self.cl.buffer_z)),
            stage: 0,
            buffer_rng: stream(self.seed, &[tag::BUFFER]),
        }
    }

    /// Trains on one task domain: inner updates on new + replayed batches,
    /// then the outer update, the α update and the buffer update.
    pub fn run_domain(
        &self,
        learner: &mut Learner,
        domain: &Domain,
    ) -> Result<Vec<IterLog>, EngineError> {
        if domain.tasks.is_empty() {
            return Err(EngineError::EmptyDomain(domain.domain_id));
        }
        let stage = learner.stage + 1;
        let anchor = learner.params.clone();
        let mut meta = AlphaMeta::new(&learner.params);
        let mut logs = Vec::with_capacity(self.cl.iterations);
        let take = self.cl.batch_new.min(domain.tasks.len());

        for it in 0..self.cl.iterations {
            let mut batch_rng = stream(self.seed, &[tag::BATCH, stage as u64, it as u64]);
            let mut tasks: Vec<Task> = sample(&mut batch_rng, domain.tasks.len(), take)
                .into_iter()
                .map(|i| domain.tasks[i].clone())
                .collect();
            let replayed = match &learner.buffer {
                Some(buf) => sample_replay(buf, self.cl.replay, &mut learner.buffer_rng),
                None => Vec::new(),
            };
            let n_replayed = replayed.len();
            tasks.extend(replayed);

            let forcing = Forcing::for_batch(it);
            let rollout_seed = derive_seed(self.seed, &[tag::ROLLOUT, stage as u64, it as u64]);
            let (grads, terms) = batch_gradients(
                self.world,
                &tasks,
                &learner.params,
                self.planner,
                &self.weights,
                forcing,
                rollout_seed,
                self.mode,
            )?;
            if !terms.total.is_finite() || !grads.all_finite() {
                return Err(EngineError::NonFinite {
                    stage,
                    iteration: it,
                });
            }
            if self.cl.learn_alpha {
                meta.observe(&grads);
            }
            inner_update(&mut learner.params, &grads)?;

            let (alpha_mean, alpha_min, alpha_max) = alpha_stats(&learner.params);
            logs.push(IterLog {
                stage,
                domain: domain.domain_id,
                iteration: it,
                forcing,
                loss: terms,
                grad_norm: grads.l2_norm(),
                replayed: n_replayed,
                buffer_occupancy: learner.buffer.as_ref().map_or(0, MemoryBuffer::len),
                alpha_mean,
                alpha_min,
                alpha_max,
            });
        }

        learner.params = outer_update(&anchor, &learner.params, self.cl.beta)?;
        if self.cl.learn_alpha {
            learn_alpha(&mut learner.params, &meta.mean(), self.cl.alpha_lr)?;
        }
        if let Some(buf) = learner.buffer.as_mut() {
            for task in &domain.tasks {
                buf.offer(task, &mut learner.buffer_rng);
            }
        }
        learner.stage = stage;
        Ok(logs)
    }
}

/// Sequential training over `domains` with no replay and full adoption.
pub fn fine_tune_baseline(
    world: &World,
    planner: &PlannerConfig,
    weights: LossWeights,
    cl: &CLConfig,
    seed: u64,
    params: ParamSet,
    domains: &[Domain],
) -> Result<(ParamSet, Vec<IterLog>), EngineError> {
    let engine = Engine::for_arm(world, planner, weights, cl, seed, Arm::FineTune)?;
    let mut learner = engine.learner(params, false);
    let mut logs = Vec::new();
    for d in domains {
        logs.extend(engine.run_domain(&mut learner, d)?);
    }
    Ok((learner.params, logs))
}

/// Bitwise equality of parameter values and rates.
pub fn params_bit_identical(a: &ParamSet, b: &ParamSet) -> bool {
    let bits = |t: &Tensor| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    a.same_layout(b)
        && a.iter()
            .zip(b.iter())
            .all(|((_, va, ra), (_, vb, rb))| bits(va) == bits(vb) && bits(ra) == bits(rb))
}
