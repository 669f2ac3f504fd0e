use crate::autodiff::{ParamSet, Tape, Tensor, Var};
use crate::world::vocab::{APPEARANCE_DIM, TOKEN_SUMMARY};
use crate::world::{Scene, Task};

use super::{names, PlannerConfig, PlannerError, POSITION_SCALE};

/// Raw per-view features: heading sin/cos, distance/10, appearance vector.
pub const VISION_FEATURES: usize = 3 + APPEARANCE_DIM;

/// The agent's per-episode working state. All token matrices live on the
/// episode's tape; `e` is the adjacency over history tokens.
#[derive(Debug, Clone)]
pub struct TokenBundle {
    /// Global token, 1×D.
    pub g: Var,
    /// Candidate target tokens, q×D.
    pub c: Var,
    /// History tokens, |H|×D (None while empty).
    pub h: Option<Var>,
    /// Instruction tokens, L×D; never replaced during an episode.
    pub i: Var,
    /// Node of each history token, in token order.
    pub h_nodes: Vec<usize>,
    /// `e[i][j]` is true iff history nodes i and j coincide or are navigable neighbors.
    pub e: Vec<Vec<bool>>,
    /// Episode start position; the candidate grid is anchored here.
    pub origin: [f64; 2],
}

impl TokenBundle {
    pub fn num_history(&self) -> usize {
        self.h_nodes.len()
    }

    /// Row of the first history token recorded for `node`.
    pub fn history_row(&self, node: usize) -> Option<usize> {
        self.h_nodes.iter().position(|&n| n == node)
    }

    /// Appends a history token for `node`, extending `e` symmetrically.
    pub fn push_history(
        &mut self,
        tape: &mut Tape,
        token: Var,
        node: usize,
        scene: &Scene,
    ) -> Result<(), PlannerError> {
        self.h = Some(match self.h {
            None => token,
            Some(h) => tape.concat_rows(&[h, token])?,
        });
        let row: Vec<bool> = self
            .h_nodes
            .iter()
            .map(|&m| m == node || scene.is_edge(m, node))
            .collect();
        for (r, &link) in self.e.iter_mut().zip(&row) {
            r.push(link);
        }
        let mut row = row;
        row.push(true);
        self.e.push(row);
        self.h_nodes.push(node);
        Ok(())
    }
}

/// Offsets (m) of the candidate cell centers from the grid anchor, row-major.
pub fn grid_offsets(cfg: &PlannerConfig) -> Vec<[f64; 2]> {
    let half = (cfg.grid as f64 - 1.0) / 2.0;
    let mut out = Vec::with_capacity(cfg.num_candidates());
    for r in 0..cfg.grid {
        for c in 0..cfg.grid {
            out.push([
                (c as f64 - half) * cfg.spacing,
                (r as f64 - half) * cfg.spacing,
            ]);
        }
    }
    out
}

/// f_P: tanh(W·(p / scale) + b) for each row of relative positions.
fn positional(tape: &mut Tape, params: &ParamSet, rel: &[[f64; 2]]) -> Result<Var, PlannerError> {
    let data = rel
        .iter()
        .flat_map(|p| [p[0] / POSITION_SCALE, p[1] / POSITION_SCALE])
        .collect();
    let x = tape.constant(Tensor::matrix(rel.len(), 2, data)?);
    let w = tape.param(params, names::POS_W)?;
    let b = tape.param(params, names::POS_B)?;
    let xw = tape.matmul(x, w)?;
    let z = tape.add_row(xw, b)?;
    Ok(tape.tanh(z))
}

/// Builds g, C and I for a fresh episode; H and E start empty.
pub fn init_tokens(
    tape: &mut Tape,
    task: &Task,
    scene: &Scene,
    params: &ParamSet,
    cfg: &PlannerConfig,
) -> Result<TokenBundle, PlannerError> {
    let len = task.instruction.len();
    if len > cfg.max_instruction_len {
        return Err(PlannerError::InstructionTooLong {
            len,
            max: cfg.max_instruction_len,
        });
    }
    let table = tape.param(params, names::TOKEN)?;
    let i0 = tape.embedding(table, &[TOKEN_SUMMARY])?;
    let fp = positional(tape, params, &grid_offsets(cfg))?;
    let c = tape.mul_row(fp, i0)?;

    let words = tape.embedding(table, &task.instruction)?;
    let pos_table = tape.param(params, names::INSTR_POS)?;
    let ids: Vec<usize> = (0..len).collect();
    let pos = tape.embedding(pos_table, &ids)?;
    let i = tape.add(words, pos)?;

    Ok(TokenBundle {
        g: i0,
        c,
        h: None,
        i,
        h_nodes: Vec::new(),
        e: Vec::new(),
        origin: scene.position(task.start),
    })
}

/// Raw feature rows for every navigable neighbor of `node`, in node-id order.
pub fn vision_features(scene: &Scene, node: usize) -> Tensor {
    let nbrs = scene.neighbors(node);
    let mut data = Vec::with_capacity(nbrs.len() * VISION_FEATURES);
    for &m in nbrs {
        let h = scene.heading(node, m);
        data.extend_from_slice(&[h.sin(), h.cos(), scene.distance(node, m) / 10.0]);
        data.extend_from_slice(scene.appearance(m));
    }
    Tensor::matrix(nbrs.len(), VISION_FEATURES, data).expect("rows match neighbor count")
}

/// Vision tokens V: linear projection of each neighbor's raw features.
pub fn vision_tokens(
    tape: &mut Tape,
    params: &ParamSet,
    raw: &Tensor,
) -> Result<Var, PlannerError> {
    let x = tape.constant(raw.clone());
    let w = tape.param(params, names::VIS_W)?;
    let b = tape.param(params, names::VIS_B)?;
    let xw = tape.matmul(x, w)?;
    Ok(tape.add_row(xw, b)?)
}

/// r = (sin θ, cos θ, sin φ, cos φ) with the planar elevation φ = 0.
pub fn move_encoding(heading: f64) -> [f64; 4] {
    [heading.sin(), heading.cos(), 0.0, 1.0]
}

/// History token f_V(views) + f_A(r) + f_T(t) + f_P(position).
///
/// `views` are the raw neighbor features at the node being left, `heading`
/// the executed move's direction, `rel_position` the node's offset from the
/// episode start.
pub fn encode_history(
    tape: &mut Tape,
    params: &ParamSet,
    views: &Tensor,
    heading: f64,
    t: usize,
    rel_position: [f64; 2],
) -> Result<Var, PlannerError> {
    let v = vision_tokens(tape, params, views)?;
    let f_v = tape.mean_rows(v)?;

    let r = tape.constant(Tensor::row(move_encoding(heading).to_vec()));
    let wa = tape.param(params, names::ACT_W)?;
    let f_a = tape.matmul(r, wa)?;

    let time = tape.param(params, names::TIME)?;
    let rows = tape.value(time).rows();
    let f_t = tape.embedding(time, &[t.min(rows - 1)])?;

    let f_p = positional(tape, params, &[rel_position])?;

    let s = tape.add(f_v, f_a)?;
    let s = tape.add(s, f_t)?;
    Ok(tape.add(s, f_p)?)
}
