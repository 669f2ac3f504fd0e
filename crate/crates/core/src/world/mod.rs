//! Synthetic navigation world: scenes (task domains), tasks with token
//! instructions and teacher paths, episode dynamics and split streams.

mod corpus;
mod episode;
mod scene;
mod stream;
mod task;
pub mod vocab;

pub use corpus::{read_corpus, write_corpus, CORPUS_FORMAT_VERSION};
pub use episode::{step, Action, EpisodeState, SUCCESS_RADIUS};
pub use scene::{euclid, generate_scene, shortest_path, Node, Scene, SceneConfig};
pub use stream::{make_world, Domain, Split, TaskStream, World, WorldConfig};
pub use task::{generate_task, render_instruction, Task};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("invalid world config: {0}")]
    InvalidConfig(String),
    #[error("config unsatisfiable: {0}")]
    Unsatisfiable(String),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("scene {scene}: node {node} does not exist")]
    UnknownNode { scene: u32, node: usize },
    #[error("unknown scene {0}")]
    UnknownScene(u32),
    #[error("scene {scene}: no path between {a} and {b}")]
    Disconnected { scene: u32, a: usize, b: usize },
    #[error("split {split} needs at least 2 domains, got {domains}")]
    TooFewDomains { split: Split, domains: usize },
    #[error("split {0} has no domains")]
    EmptySplit(Split),
    #[error("action {action:?} is not legal at node {node}")]
    IllegalAction { node: usize, action: Action },
    #[error("episode already finished")]
    EpisodeFinished,
    #[error("corpus format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
