use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::world::Task;

/// Domain-keyed replay memory with per-domain capacity `z` and the
/// "replace when the global task counter is a multiple of `z`" rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryBuffer {
    z: usize,
    domains: BTreeMap<u32, Vec<Task>>,
    /// Number of tasks offered to the buffer so far (the global counter t).
    offered: u64,
    replacements: BTreeMap<u32, u64>,
}

/// What [`buffer_update`] did with a task.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BufferEvent {
    Appended,
    Replaced { victim: usize },
    Unchanged,
}

impl MemoryBuffer {
    /// `z` is both the per-domain capacity and the replacement period; it must be ≥ 1.
    pub fn new(z: usize) -> Self {
        assert!(z >= 1, "buffer parameter Z must be at least 1");
        Self {
            z,
            domains: BTreeMap::new(),
            offered: 0,
            replacements: BTreeMap::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.z
    }

    pub fn offered(&self) -> u64 {
        self.offered
    }

    pub fn is_empty(&self) -> bool {
        self.domains.is_empty()
    }

    pub fn len(&self) -> usize {
        self.domains.values().map(Vec::len).sum()
    }

    pub fn domain_ids(&self) -> Vec<u32> {
        self.domains.keys().copied().collect()
    }

    pub fn occupancy(&self, domain: u32) -> usize {
        self.domains.get(&domain).map_or(0, Vec::len)
    }

    pub fn tasks(&self, domain: u32) -> &[Task] {
        self.domains.get(&domain).map_or(&[], Vec::as_slice)
    }

    pub fn replacements(&self, domain: u32) -> u64 {
        self.replacements.get(&domain).copied().unwrap_or(0)
    }

    /// Offers the next task of the stream, advancing the global counter.
    pub fn offer<R: Rng>(&mut self, task: &Task, rng: &mut R) -> BufferEvent {
        self.offered += 1;
        let t = self.offered;
        buffer_update(self, task, t, rng)
    }
}

/// Applies the buffer rule for `task` with global task counter `t`:
/// append while the domain is new or under capacity; otherwise, if
/// `t mod Z == 0`, replace a uniformly drawn stored task of that domain;
/// otherwise leave the buffer unchanged.
pub fn buffer_update<R: Rng>(
    buffer: &mut MemoryBuffer,
    task: &Task,
    t: u64,
    rng: &mut R,
) -> BufferEvent {
    let z = buffer.z;
    let slot = buffer.domains.entry(task.scene_id).or_default();
    if slot.len() < z {
        slot.push(task.clone());
        return BufferEvent::Appended;
    }
    if t.is_multiple_of(z as u64) {
        let victim = rng.random_range(0..slot.len());
        slot[victim] = task.clone();
        *buffer.replacements.entry(task.scene_id).or_default() += 1;
        return BufferEvent::Replaced { victim };
    }
    BufferEvent::Unchanged
}

/// Draws up to `rs` distinct stored tasks: each draw picks a domain uniformly
/// among those with tasks left, then a task uniformly within it.
pub fn sample_replay<R: Rng>(buffer: &MemoryBuffer, rs: usize, rng: &mut R) -> Vec<Task> {
    let mut left: Vec<(u32, Vec<usize>)> = buffer
        .domains
        .iter()
        .map(|(&d, v)| (d, (0..v.len()).collect()))
        .collect();
    let mut out = Vec::with_capacity(rs);
    while out.len() < rs && !left.is_empty() {
        let di = rng.random_range(0..left.len());
        let (domain, idx) = &mut left[di];
        let k = rng.random_range(0..idx.len());
        let ti = idx.swap_remove(k);
        out.push(buffer.domains[domain][ti].clone());
        if idx.is_empty() {
            left.remove(di);
        }
    }
    out
}
