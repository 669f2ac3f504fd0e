use serde::{Deserialize, Serialize};

use super::scene::Scene;
use super::WorldError;

/// An agent within this distance (m) of the goal counts as there.
pub const SUCCESS_RADIUS: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    /// Go to a node: a navigable neighbor or any previously visited node.
    Move(usize),
    Stop,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeState {
    pub current: usize,
    pub t: usize,
    pub visited: Vec<usize>,
    pub done: bool,
}

impl EpisodeState {
    pub fn start(node: usize) -> Self {
        Self {
            current: node,
            t: 0,
            visited: vec![node],
            done: false,
        }
    }

    /// Distinct previously visited nodes other than the current one, in first-visit order.
    pub fn history_nodes(&self) -> Vec<usize> {
        let mut out: Vec<usize> = Vec::new();
        for &n in &self.visited {
            if n != self.current && !out.contains(&n) {
                out.push(n);
            }
        }
        out
    }

    pub fn is_legal(&self, action: Action, scene: &Scene) -> bool {
        match action {
            Action::Stop => true,
            Action::Move(n) => {
                n != self.current && (scene.is_edge(self.current, n) || self.visited.contains(&n))
            }
        }
    }
}

/// Applies one action; the episode ends on STOP or when `t` reaches `horizon`.
pub fn step(
    state: &EpisodeState,
    action: Action,
    scene: &Scene,
    horizon: usize,
) -> Result<EpisodeState, WorldError> {
    if state.done {
        return Err(WorldError::EpisodeFinished);
    }
    if !state.is_legal(action, scene) {
        return Err(WorldError::IllegalAction {
            node: state.current,
            action,
        });
    }
    let mut next = state.clone();
    match action {
        Action::Stop => next.done = true,
        Action::Move(n) => {
            next.current = n;
            next.visited.push(n);
            next.t += 1;
            if next.t >= horizon {
                next.done = true;
            }
        }
    }
    Ok(next)
}
