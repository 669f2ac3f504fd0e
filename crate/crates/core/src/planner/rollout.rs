use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamSet, Tape};
use crate::losses::{Forcing, StepRecord, TrajectoryRecord, STOP_REWARD};
use crate::world::{shortest_path, step, Action, EpisodeState, Scene, Task, SUCCESS_RADIUS};

use super::forward::{action_space, forward_step, StepOutput};
use super::tokens::{encode_history, init_tokens, vision_features, vision_tokens};
use super::{PlannerConfig, PlannerError};

/// How actions are chosen during a rollout.
#[derive(Debug, Clone)]
pub enum Driver {
    /// Follow the teacher path, then STOP.
    Teacher,
    /// Sample from the policy with a seeded generator.
    Sample(u64),
    /// Argmax of the policy (first index on ties).
    Greedy,
    /// Replay fixed action indices; recorded as student forcing.
    Replay(Vec<usize>),
}

/// A finished episode together with the tape holding its computation.
pub struct Rollout {
    pub tape: Tape,
    pub record: TrajectoryRecord,
    pub trace: Vec<StepOutput>,
}

/// Index of the shortest-path label at `state`: next hop toward the goal, or STOP at it.
fn teacher_action(
    scene: &Scene,
    state: &EpisodeState,
    goal: usize,
    space: &super::ActionSpace,
) -> Result<usize, PlannerError> {
    if state.current == goal {
        return Ok(space.stop_index());
    }
    let path = shortest_path(scene, state.current, goal)?;
    Ok(space
        .index_of(Action::Move(path[1]))
        .expect("next hop on a shortest path is a neighbor"))
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn sample(logp: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, lp) in logp.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return i;
        }
    }
    logp.len() - 1
}

/// Runs one episode of `task` under `driver`, recording everything the
/// losses need on a fresh tape.
pub fn rollout(
    task: &Task,
    scene: &Scene,
    params: &ParamSet,
    cfg: &PlannerConfig,
    driver: &Driver,
) -> Result<Rollout, PlannerError> {
    let mut tape = Tape::new();
    let mut bundle = init_tokens(&mut tape, task, scene, params, cfg)?;
    let mut state = EpisodeState::start(task.start);
    let mut rng = match driver {
        Driver::Sample(seed) => Some(ChaCha8Rng::seed_from_u64(*seed)),
        _ => None,
    };
    let forcing = match driver {
        Driver::Teacher => Forcing::Teacher,
        _ => Forcing::Student,
    };
    let goal_pos = scene.position(task.goal);
    let dist_to_goal = |n: usize| scene.graph_distance(n, task.goal);

    let mut steps = Vec::new();
    let mut trace = Vec::new();
    while !state.done {
        let space = action_space(&state, scene);
        let raw = vision_features(scene, state.current);
        let vision = vision_tokens(&mut tape, params, &raw)?;
        let out = forward_step(&mut tape, &mut bundle, vision, &space, params, cfg)?;
        let logp = tape.value(out.action_logp).data().to_vec();

        let teacher = teacher_action(scene, &state, task.goal, &space)?;
        let chosen = match driver {
            Driver::Teacher => teacher,
            Driver::Greedy => argmax(&logp),
            Driver::Sample(_) => sample(&logp, rng.as_mut().expect("sampler seeded")),
            Driver::Replay(indices) => {
                let k = steps.len();
                match indices.get(k) {
                    Some(&i) if i < space.len() => i,
                    Some(&i) => return Err(PlannerError::BadReplay { step: k, index: i }),
                    None => space.stop_index(),
                }
            }
        };
        let action = space.actions[chosen];
        let next = step(&state, action, scene, cfg.horizon)?;
        let reward = match action {
            Action::Stop => {
                if crate::world::euclid(scene.position(state.current), goal_pos) <= SUCCESS_RADIUS {
                    STOP_REWARD
                } else {
                    -STOP_REWARD
                }
            }
            Action::Move(n) => dist_to_goal(state.current)? - dist_to_goal(n)?,
        };
        if let Action::Move(n) = action {
            let origin = bundle.origin;
            let p = scene.position(state.current);
            let token = encode_history(
                &mut tape,
                params,
                &raw,
                scene.heading(state.current, n),
                state.t,
                [p[0] - origin[0], p[1] - origin[1]],
            )?;
            bundle.push_history(&mut tape, token, state.current, scene)?;
        }
        steps.push(StepRecord {
            action_logp: out.action_logp,
            target_logp: out.target_logp,
            chosen,
            teacher,
            reward,
        });
        trace.push(out);
        state = next;
    }
    Ok(Rollout {
        tape,
        record: TrajectoryRecord {
            task_id: task.task_id,
            forcing,
            steps,
            final_state: state,
        },
        trace,
    })
}
