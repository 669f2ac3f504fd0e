use std::cmp::Ordering;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::vocab::{APPEARANCE_DIM, NUM_LANDMARKS};
use super::WorldError;
use crate::rng::{derive_seed, stream, tag};

const MAX_ATTEMPTS: u64 = 64;
const PLACEMENT_TRIES: usize = 2000;
const APPEARANCE_SEED: u64 = 0x05ee_da11;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub min_nodes: usize,
    pub max_nodes: usize,
    /// Side of the square area, meters.
    pub area: f64,
    /// Minimum distance between any two nodes, meters.
    pub min_separation: f64,
    pub max_degree: usize,
    /// Probability of keeping each candidate non-tree edge.
    pub edge_density: f64,
    /// Candidate non-tree edges are pairs closer than this, meters.
    pub link_radius: f64,
    /// Scale of the per-scene appearance offset.
    pub style_scale: f64,
    /// Scale of the per-node appearance noise.
    pub noise_scale: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            min_nodes: 8,
            max_nodes: 20,
            area: 30.0,
            min_separation: 4.0,
            max_degree: 5,
            edge_density: 0.35,
            link_radius: 11.0,
            style_scale: 0.6,
            noise_scale: 0.2,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), WorldError> {
        let bad = |m: &str| Err(WorldError::InvalidConfig(m.to_string()));
        if self.min_nodes < 2 || self.min_nodes > self.max_nodes {
            return bad("need 2 <= min_nodes <= max_nodes");
        }
        if self.max_nodes > NUM_LANDMARKS {
            return bad("max_nodes exceeds the landmark vocabulary");
        }
        if !(self.area > 0.0 && self.min_separation >= 0.0 && self.link_radius >= 0.0) {
            return bad("area, min_separation and link_radius must be positive");
        }
        if !(0.0..=1.0).contains(&self.edge_density) {
            return bad("edge_density must lie in [0, 1]");
        }
        if self.max_degree == 0 {
            return bad("max_degree must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Node {
    pub id: usize,
    /// Meters.
    pub position: [f64; 2],
    pub landmark: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneDoc {
    scene_id: u32,
    nodes: Vec<Node>,
    edges: Vec<(usize, usize)>,
    connected: bool,
    style_seed: u64,
    style_scale: f64,
    noise_scale: f64,
}

/// Navigation graph for one task domain. Node ids are `0..nodes.len()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SceneDoc", into = "SceneDoc")]
pub struct Scene {
    pub scene_id: u32,
    pub nodes: Vec<Node>,
    pub edges: Vec<(usize, usize)>,
    pub connected: bool,
    pub style_seed: u64,
    pub style_scale: f64,
    pub noise_scale: f64,
    adjacency: Vec<Vec<usize>>,
    appearance: Vec<[f64; APPEARANCE_DIM]>,
}

impl From<Scene> for SceneDoc {
    fn from(s: Scene) -> Self {
        SceneDoc {
            scene_id: s.scene_id,
            nodes: s.nodes,
            edges: s.edges,
            connected: s.connected,
            style_seed: s.style_seed,
            style_scale: s.style_scale,
            noise_scale: s.noise_scale,
        }
    }
}

impl TryFrom<SceneDoc> for Scene {
    type Error = WorldError;

    fn try_from(d: SceneDoc) -> Result<Self, WorldError> {
        let scene = Scene::with_appearance_scales(
            d.scene_id,
            d.nodes,
            d.edges,
            d.style_seed,
            d.style_scale,
            d.noise_scale,
        )?;
        if scene.connected != d.connected {
            return Err(WorldError::InvalidScene(format!(
                "scene {} connectivity flag disagrees with its edges",
                d.scene_id
            )));
        }
        Ok(scene)
    }
}

fn landmark_vector(landmark: usize) -> [f64; APPEARANCE_DIM] {
    let mut rng = stream(APPEARANCE_SEED, &[tag::APPEARANCE, landmark as u64]);
    std::array::from_fn(|_| StandardNormal.sample(&mut rng))
}

impl Scene {
    /// Builds a scene from raw parts with default appearance scales.
    pub fn new(
        scene_id: u32,
        nodes: Vec<Node>,
        edges: Vec<(usize, usize)>,
        style_seed: u64,
    ) -> Result<Self, WorldError> {
        let d = SceneConfig::default();
        Self::with_appearance_scales(
            scene_id,
            nodes,
            edges,
            style_seed,
            d.style_scale,
            d.noise_scale,
        )
    }

    /// Builds a scene from raw parts, normalizing and validating edges.
    pub fn with_appearance_scales(
        scene_id: u32,
        nodes: Vec<Node>,
        mut edges: Vec<(usize, usize)>,
        style_seed: u64,
        style_scale: f64,
        noise_scale: f64,
    ) -> Result<Self, WorldError> {
        let n = nodes.len();
        if n == 0 {
            return Err(WorldError::InvalidScene(format!(
                "scene {scene_id} has no nodes"
            )));
        }
        for (i, node) in nodes.iter().enumerate() {
            if node.id != i {
                return Err(WorldError::InvalidScene(format!(
                    "scene {scene_id}: node ids must be 0..n in order"
                )));
            }
            if node.landmark >= NUM_LANDMARKS {
                return Err(WorldError::InvalidScene(format!(
                    "scene {scene_id}: landmark {} out of range",
                    node.landmark
                )));
            }
        }
        for e in edges.iter_mut() {
            if e.0 == e.1 || e.0 >= n || e.1 >= n {
                return Err(WorldError::InvalidScene(format!(
                    "scene {scene_id}: bad edge {e:?}"
                )));
            }
            if e.0 > e.1 {
                *e = (e.1, e.0);
            }
        }
        edges.sort_unstable();
        edges.dedup();
        let mut adjacency = vec![Vec::new(); n];
        for &(a, b) in &edges {
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        for list in adjacency.iter_mut() {
            list.sort_unstable();
        }
        let style = {
            let mut rng = stream(style_seed, &[0]);
            let v: [f64; APPEARANCE_DIM] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
            v
        };
        let appearance = nodes
            .iter()
            .map(|node| {
                let base = landmark_vector(node.landmark);
                let mut rng = stream(style_seed, &[1 + node.id as u64]);
                std::array::from_fn(|k| {
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    base[k] + style_scale * style[k] + noise_scale * noise
                })
            })
            .collect();
        let mut scene = Scene {
            scene_id,
            nodes,
            edges,
            connected: false,
            style_seed,
            style_scale,
            noise_scale,
            adjacency,
            appearance,
        };
        scene.connected = scene.is_connected();
        Ok(scene)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Navigable neighbors in ascending node-id order.
    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.adjacency[node]
    }

    pub fn is_edge(&self, a: usize, b: usize) -> bool {
        self.adjacency
            .get(a)
            .is_some_and(|l| l.binary_search(&b).is_ok())
    }

    pub fn position(&self, node: usize) -> [f64; 2] {
        self.nodes[node].position
    }

    pub fn distance(&self, a: usize, b: usize) -> f64 {
        euclid(self.position(a), self.position(b))
    }

    /// Heading from `a` to `b` in radians (east = 0, counter-clockwise).
    pub fn heading(&self, a: usize, b: usize) -> f64 {
        let (pa, pb) = (self.position(a), self.position(b));
        (pb[1] - pa[1]).atan2(pb[0] - pa[0])
    }

    /// Appearance vector observed for a node: landmark look, scene style and per-node noise.
    pub fn appearance(&self, node: usize) -> &[f64; APPEARANCE_DIM] {
        &self.appearance[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adjacency[node].len()
    }

    fn is_connected(&self) -> bool {
        let n = self.len();
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for &v in &self.adjacency[u] {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Total Euclidean length of a node sequence whose consecutive pairs are edges.
    pub fn path_length(&self, path: &[usize]) -> f64 {
        path.windows(2).map(|w| self.distance(w[0], w[1])).sum()
    }

    /// Shortest-path distance between two nodes.
    pub fn graph_distance(&self, a: usize, b: usize) -> Result<f64, WorldError> {
        Ok(self.path_length(&shortest_path(self, a, b)?))
    }
}

pub fn euclid(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn label_cmp(a: &(f64, Vec<usize>), b: &(f64, Vec<usize>)) -> Ordering {
    a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1))
}

/// Minimum-length path from `a` to `b`; exact length ties go to the
/// lexicographically smallest node sequence.
pub fn shortest_path(scene: &Scene, a: usize, b: usize) -> Result<Vec<usize>, WorldError> {
    let n = scene.len();
    if a >= n || b >= n {
        return Err(WorldError::UnknownNode {
            scene: scene.scene_id,
            node: a.max(b),
        });
    }
    let mut best: Vec<Option<(f64, Vec<usize>)>> = vec![None; n];
    let mut done = vec![false; n];
    best[a] = Some((0.0, vec![a]));
    loop {
        let mut pick: Option<usize> = None;
        for u in 0..n {
            if done[u] {
                continue;
            }
            if let Some(lu) = &best[u] {
                let better = match pick {
                    None => true,
                    Some(p) => label_cmp(lu, best[p].as_ref().unwrap()) == Ordering::Less,
                };
                if better {
                    pick = Some(u);
                }
            }
        }
        let Some(u) = pick else { break };
        done[u] = true;
        if u == b {
            break;
        }
        let (du, pu) = best[u].clone().unwrap();
        for &v in scene.neighbors(u) {
            if done[v] {
                continue;
            }
            let mut path = pu.clone();
            path.push(v);
            let cand = (du + scene.distance(u, v), path);
            let replace = match &best[v] {
                None => true,
                Some(cur) => label_cmp(&cand, cur) == Ordering::Less,
            };
            if replace {
                best[v] = Some(cand);
            }
        }
    }
    match &best[b] {
        Some((_, path)) if done[b] => Ok(path.clone()),
        _ => Err(WorldError::Disconnected {
            scene: scene.scene_id,
            a,
            b,
        }),
    }
}

fn prim_mst(pos: &[[f64; 2]]) -> Vec<(usize, usize)> {
    let n = pos.len();
    let mut in_tree = vec![false; n];
    let mut best = vec![(f64::INFINITY, 0usize); n];
    let mut edges = Vec::with_capacity(n.saturating_sub(1));
    in_tree[0] = true;
    for v in 1..n {
        best[v] = (euclid(pos[0], pos[v]), 0);
    }
    for _ in 1..n {
        let mut u = usize::MAX;
        for v in 0..n {
            if !in_tree[v] && (u == usize::MAX || best[v].0 < best[u].0) {
                u = v;
            }
        }
        in_tree[u] = true;
        edges.push((best[u].1.min(u), best[u].1.max(u)));
        for v in 0..n {
            if !in_tree[v] {
                let d = euclid(pos[u], pos[v]);
                if d < best[v].0 {
                    best[v] = (d, u);
                }
            }
        }
    }
    edges
}

fn place_nodes(rng: &mut impl Rng, n: usize, cfg: &SceneConfig) -> Option<Vec<[f64; 2]>> {
    let mut pos: Vec<[f64; 2]> = Vec::with_capacity(n);
    let mut tries = 0;
    while pos.len() < n {
        tries += 1;
        if tries > PLACEMENT_TRIES {
            return None;
        }
        let p = [
            rng.random_range(0.0..cfg.area),
            rng.random_range(0.0..cfg.area),
        ];
        if pos
            .iter()
            .all(|q| euclid(*q, p) >= cfg.min_separation.max(1e-9))
        {
            pos.push(p);
        }
    }
    Some(pos)
}

/// Deterministic connected scene for `(seed, config)`.
pub fn generate_scene(scene_id: u32, seed: u64, cfg: &SceneConfig) -> Result<Scene, WorldError> {
    cfg.validate()?;
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = stream(seed, &[tag::SCENE, attempt]);
        let n = rng.random_range(cfg.min_nodes..=cfg.max_nodes);
        let Some(pos) = place_nodes(&mut rng, n, cfg) else {
            continue;
        };
        let mut edges = prim_mst(&pos);
        let mut degree = vec![0usize; n];
        for &(a, b) in &edges {
            degree[a] += 1;
            degree[b] += 1;
        }
        if degree.iter().any(|&d| d > cfg.max_degree) {
            continue;
        }
        let mut extra: Vec<(f64, usize, usize)> = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                let d = euclid(pos[a], pos[b]);
                if d <= cfg.link_radius && !edges.contains(&(a, b)) {
                    extra.push((d, a, b));
                }
            }
        }
        extra.sort_by(|x, y| x.0.total_cmp(&y.0).then((x.1, x.2).cmp(&(y.1, y.2))));
        for (_, a, b) in extra {
            let keep = rng.random_bool(cfg.edge_density);
            if keep && degree[a] < cfg.max_degree && degree[b] < cfg.max_degree {
                edges.push((a, b));
                degree[a] += 1;
                degree[b] += 1;
            }
        }
        let landmarks = sample(&mut rng, NUM_LANDMARKS, n).into_vec();
        let nodes = pos
            .iter()
            .zip(landmarks)
            .enumerate()
            .map(|(id, (p, landmark))| Node {
                id,
                position: *p,
                landmark,
            })
            .collect();
        let style_seed = derive_seed(seed, &[tag::SCENE, attempt, 0xa77]);
        let scene = Scene::with_appearance_scales(
            scene_id,
            nodes,
            edges,
            style_seed,
            cfg.style_scale,
            cfg.noise_scale,
        )?;
        if scene.connected {
            return Ok(scene);
        }
    }
    Err(WorldError::Unsatisfiable(format!(
        "no connected scene within degree bound {} after {MAX_ATTEMPTS} attempts",
        cfg.max_degree
    )))
}
