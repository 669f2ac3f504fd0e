//! Scene/task corpus file: JSON lines, one header then one document per scene.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::scene::Scene;
use super::stream::{Domain, Split, TaskStream, World};
use super::task::Task;
use super::WorldError;

pub const CORPUS_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    kind: String,
    seed: u64,
    /// Domain order per split.
    streams: BTreeMap<Split, Vec<u32>>,
}

#[derive(Serialize, Deserialize)]
struct SplitTask {
    split: Split,
    #[serde(flatten)]
    task: Task,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneDocument {
    format_version: u32,
    kind: String,
    scene: Scene,
    tasks: Vec<SplitTask>,
}

fn to_line<T: Serialize>(v: &T) -> Result<String, WorldError> {
    serde_json::to_string(v).map_err(|e| WorldError::Format(e.to_string()))
}

fn check_version(v: u32) -> Result<(), WorldError> {
    if v != CORPUS_FORMAT_VERSION {
        return Err(WorldError::Format(format!(
            "unsupported corpus format_version {v} (expected {CORPUS_FORMAT_VERSION})"
        )));
    }
    Ok(())
}

pub fn write_corpus<W: Write>(world: &World, mut out: W) -> Result<(), WorldError> {
    let header = Header {
        format_version: CORPUS_FORMAT_VERSION,
        kind: "header".into(),
        seed: world.seed,
        streams: world
            .streams
            .iter()
            .map(|(k, s)| (*k, s.domain_ids()))
            .collect(),
    };
    writeln!(out, "{}", to_line(&header)?)?;
    for scene in world.scenes.values() {
        let mut tasks = Vec::new();
        for (split, s) in &world.streams {
            if let Some(d) = s.domains.iter().find(|d| d.domain_id == scene.scene_id) {
                tasks.extend(d.tasks.iter().map(|t| SplitTask {
                    split: *split,
                    task: t.clone(),
                }));
            }
        }
        let doc = SceneDocument {
            format_version: CORPUS_FORMAT_VERSION,
            kind: "scene".into(),
            scene: scene.clone(),
            tasks,
        };
        writeln!(out, "{}", to_line(&doc)?)?;
    }
    Ok(())
}

pub fn read_corpus<R: BufRead>(input: R) -> Result<World, WorldError> {
    let mut lines = input.lines();
    let first = lines
        .next()
        .ok_or_else(|| WorldError::Format("empty corpus".into()))??;
    let header: Header =
        serde_json::from_str(&first).map_err(|e| WorldError::Format(format!("header: {e}")))?;
    check_version(header.format_version)?;
    let mut scenes = BTreeMap::new();
    let mut by_split: BTreeMap<Split, BTreeMap<u32, Vec<Task>>> = BTreeMap::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: SceneDocument = serde_json::from_str(&line)
            .map_err(|e| WorldError::Format(format!("line {}: {e}", i + 2)))?;
        check_version(doc.format_version)?;
        for st in doc.tasks {
            by_split
                .entry(st.split)
                .or_default()
                .entry(doc.scene.scene_id)
                .or_default()
                .push(st.task);
        }
        scenes.insert(doc.scene.scene_id, doc.scene);
    }
    let mut streams = BTreeMap::new();
    for (split, order) in header.streams {
        let mut tasks = by_split.remove(&split).unwrap_or_default();
        let domains = order
            .into_iter()
            .map(|id| Domain {
                domain_id: id,
                tasks: tasks.remove(&id).unwrap_or_default(),
            })
            .collect();
        streams.insert(split, TaskStream { split, domains });
    }
    let world = World {
        seed: header.seed,
        scenes,
        streams,
    };
    world.validate()?;
    Ok(world)
}
