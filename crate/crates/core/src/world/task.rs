use rand::Rng;
use serde::{Deserialize, Serialize};

use super::scene::{shortest_path, Scene};
use super::vocab::{direction_token, landmark_token, TOKEN_SUMMARY};
use super::WorldError;

/// One navigation episode specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Task {
    pub task_id: u64,
    pub scene_id: u32,
    pub instruction: Vec<usize>,
    pub start: usize,
    pub goal: usize,
    pub teacher_path: Vec<usize>,
}

impl Task {
    pub fn hops(&self) -> usize {
        self.teacher_path.len() - 1
    }
}

/// Renders a node path as `[i0, dir, landmark, dir, landmark, ...]`.
pub fn render_instruction(scene: &Scene, path: &[usize]) -> Vec<usize> {
    let mut tokens = vec![TOKEN_SUMMARY];
    for w in path.windows(2) {
        tokens.push(direction_token(scene.heading(w[0], w[1])));
        tokens.push(landmark_token(scene.nodes[w[1]].landmark));
    }
    tokens
}

pub fn generate_task(scene: &Scene, task_id: u64, seed: u64) -> Result<Task, WorldError> {
    let n = scene.len();
    if n < 2 {
        return Err(WorldError::InvalidScene(format!(
            "scene {} has fewer than 2 nodes",
            scene.scene_id
        )));
    }
    let mut rng = crate::rng::stream(seed, &[crate::rng::tag::TASK, task_id]);
    let start = rng.random_range(0..n);
    let mut goal = rng.random_range(0..n - 1);
    if goal >= start {
        goal += 1;
    }
    let teacher_path = shortest_path(scene, start, goal)?;
    Ok(Task {
        task_id,
        scene_id: scene.scene_id,
        instruction: render_instruction(scene, &teacher_path),
        start,
        goal,
        teacher_path,
    })
}
