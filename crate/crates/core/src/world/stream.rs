use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::scene::{generate_scene, Scene, SceneConfig};
use super::task::{generate_task, Task};
use super::WorldError;
use crate::rng::{derive_seed, stream, tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    TrainSeen,
    ValSeen,
    ValUnseen,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::TrainSeen, Split::ValSeen, Split::ValUnseen];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::TrainSeen => "train_seen",
            Split::ValSeen => "val_seen",
            Split::ValUnseen => "val_unseen",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Split::TrainSeen => "Train Seen",
            Split::ValSeen => "Val Seen",
            Split::ValUnseen => "Val Unseen",
        }
    }

    fn code(self) -> u64 {
        match self {
            Split::TrainSeen => 1,
            Split::ValSeen => 2,
            Split::ValUnseen => 3,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = WorldError;

    fn from_str(s: &str) -> Result<Self, WorldError> {
        Split::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| WorldError::InvalidConfig(format!("unknown split `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub train_domains: usize,
    /// Val-seen domains reuse the first train scenes with fresh tasks.
    pub val_seen_domains: usize,
    pub val_unseen_domains: usize,
    pub tasks_per_domain: usize,
    pub scene: SceneConfig,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            train_domains: 8,
            val_seen_domains: 4,
            val_unseen_domains: 8,
            tasks_per_domain: 50,
            scene: SceneConfig::default(),
        }
    }
}

impl WorldConfig {
    pub fn domains(&self, split: Split) -> usize {
        match split {
            Split::TrainSeen => self.train_domains,
            Split::ValSeen => self.val_seen_domains,
            Split::ValUnseen => self.val_unseen_domains,
        }
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        self.scene.validate()?;
        for split in Split::ALL {
            let d = self.domains(split);
            if d == 1 || (split == Split::ValUnseen && d < 2) {
                return Err(WorldError::TooFewDomains { split, domains: d });
            }
        }
        if self.val_seen_domains > self.train_domains {
            return Err(WorldError::InvalidConfig(
                "val_seen_domains cannot exceed train_domains".into(),
            ));
        }
        if self.tasks_per_domain == 0 {
            return Err(WorldError::InvalidConfig(
                "tasks_per_domain must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// All tasks of one scene, in presentation order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub domain_id: u32,
    pub tasks: Vec<Task>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskStream {
    pub split: Split,
    pub domains: Vec<Domain>,
}

impl TaskStream {
    pub fn num_tasks(&self) -> usize {
        self.domains.iter().map(|d| d.tasks.len()).sum()
    }

    pub fn domain_ids(&self) -> Vec<u32> {
        self.domains.iter().map(|d| d.domain_id).collect()
    }
}

/// Scenes plus one task stream per split.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub seed: u64,
    pub scenes: BTreeMap<u32, Scene>,
    pub streams: BTreeMap<Split, TaskStream>,
}

impl World {
    pub fn scene(&self, id: u32) -> Result<&Scene, WorldError> {
        self.scenes.get(&id).ok_or(WorldError::UnknownScene(id))
    }

    pub fn stream(&self, split: Split) -> Result<&TaskStream, WorldError> {
        self.streams
            .get(&split)
            .filter(|s| !s.domains.is_empty())
            .ok_or(WorldError::EmptySplit(split))
    }

    /// Checks every task against its scene.
    pub fn validate(&self) -> Result<(), WorldError> {
        for (split, s) in &self.streams {
            let mut seen = std::collections::BTreeSet::new();
            for d in &s.domains {
                if !seen.insert(d.domain_id) {
                    return Err(WorldError::InvalidScene(format!(
                        "domain {} repeated in {split}",
                        d.domain_id
                    )));
                }
                let scene = self.scene(d.domain_id)?;
                for t in &d.tasks {
                    if t.scene_id != d.domain_id
                        || t.start >= scene.len()
                        || t.goal >= scene.len()
                        || t.start == t.goal
                    {
                        return Err(WorldError::InvalidScene(format!(
                            "task {} inconsistent with scene {}",
                            t.task_id, d.domain_id
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Generates every scene and split stream for `(seed, config)`.
pub fn make_world(seed: u64, cfg: &WorldConfig) -> Result<World, WorldError> {
    cfg.validate()?;
    let mut scenes = BTreeMap::new();
    let train_ids: Vec<u32> = (0..cfg.train_domains as u32).collect();
    let unseen_ids: Vec<u32> = (0..cfg.val_unseen_domains as u32)
        .map(|i| cfg.train_domains as u32 + i)
        .collect();
    for &id in train_ids.iter().chain(&unseen_ids) {
        let scene = generate_scene(id, derive_seed(seed, &[tag::SCENE, id as u64]), &cfg.scene)?;
        scenes.insert(id, scene);
    }

    let mut next_task_id = 0u64;
    let mut streams = BTreeMap::new();
    for split in Split::ALL {
        let mut ids: Vec<u32> = match split {
            Split::TrainSeen => train_ids.clone(),
            Split::ValSeen => train_ids[..cfg.val_seen_domains].to_vec(),
            Split::ValUnseen => unseen_ids.clone(),
        };
        ids.shuffle(&mut stream(seed, &[tag::STREAM, split.code()]));
        let mut domains = Vec::with_capacity(ids.len());
        for id in ids {
            let scene = &scenes[&id];
            let task_seed = derive_seed(seed, &[tag::TASK, split.code(), id as u64]);
            let tasks = (0..cfg.tasks_per_domain)
                .map(|_| {
                    let t = generate_task(scene, next_task_id, task_seed);
                    next_task_id += 1;
                    t
                })
                .collect::<Result<Vec<_>, _>>()?;
            domains.push(Domain {
                domain_id: id,
                tasks,
            });
        }
        streams.insert(split, TaskStream { split, domains });
    }
    Ok(World {
        seed,
        scenes,
        streams,
    })
}
