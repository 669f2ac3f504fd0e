use crate::autodiff::{ParamSet, Tape, Var};
use crate::world::vocab::TOKEN_STOP;
use crate::world::{Action, EpisodeState, Scene};

use super::tokens::TokenBundle;
use super::{names, PlannerConfig, PlannerError};

/// Ordered action set: local moves (neighbors in node-id order), then global
/// moves to earlier-visited nodes (first-visit order), then STOP. Each entry
/// doubles as the action-index → node mapping τ.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionSpace {
    pub actions: Vec<Action>,
    pub num_local: usize,
}

impl ActionSpace {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn index_of(&self, action: Action) -> Option<usize> {
        self.actions.iter().position(|&a| a == action)
    }

    pub fn stop_index(&self) -> usize {
        self.actions.len() - 1
    }
}

pub fn action_space(state: &EpisodeState, scene: &Scene) -> ActionSpace {
    let local = scene.neighbors(state.current);
    let mut actions: Vec<Action> = local.iter().map(|&n| Action::Move(n)).collect();
    for n in state.history_nodes() {
        if !local.contains(&n) {
            actions.push(Action::Move(n));
        }
    }
    actions.push(Action::Stop);
    ActionSpace {
        actions,
        num_local: local.len(),
    }
}

/// Per-step outputs of [`forward_step`].
#[derive(Debug, Clone)]
pub struct StepOutput {
    /// Log-probabilities over the action space, 1×|A|.
    pub action_logp: Var,
    /// Log-probabilities over candidate cells, 1×q.
    pub target_logp: Var,
    /// Attention weights per (layer, head), each N×N over the full token sequence.
    pub attention: Vec<Var>,
    /// First row of the history block in the token sequence.
    pub history_offset: usize,
    /// History adjacency used for the mask at this step.
    pub e: Vec<Vec<bool>>,
}

fn mlp_scores(
    tape: &mut Tape,
    params: &ParamSet,
    head: &str,
    tokens: Var,
    g: Var,
) -> Result<Var, PlannerError> {
    let x = tape.mul_row(tokens, g)?;
    let w1 = tape.param(params, &names::head(head, "w1"))?;
    let b1 = tape.param(params, &names::head(head, "b1"))?;
    let w2 = tape.param(params, &names::head(head, "w2"))?;
    let z = tape.matmul(x, w1)?;
    let z = tape.add_row(z, b1)?;
    let z = tape.tanh(z);
    let s = tape.matmul(z, w2)?;
    let n = tape.value(s).rows();
    let s = tape.reshape(s, &[1, n])?;
    Ok(tape.log_softmax_rows(s)?)
}

/// One post-norm transformer block with masked multi-head attention.
fn block(
    tape: &mut Tape,
    params: &ParamSet,
    cfg: &PlannerConfig,
    layer: usize,
    x: Var,
    allowed: &[bool],
    attention: &mut Vec<Var>,
) -> Result<Var, PlannerError> {
    let scale = 1.0 / (cfg.head_dim() as f64).sqrt();
    let mut heads = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let wq = tape.param(params, &names::attn(layer, h, "q"))?;
        let wk = tape.param(params, &names::attn(layer, h, "k"))?;
        let wv = tape.param(params, &names::attn(layer, h, "v"))?;
        let q = tape.matmul(x, wq)?;
        let k = tape.matmul(x, wk)?;
        let v = tape.matmul(x, wv)?;
        let s = tape.matmul_t(q, k)?;
        let s = tape.scale(s, scale);
        let s = tape.add_mask(s, allowed)?;
        let w = tape.softmax_rows(s)?;
        attention.push(w);
        heads.push(tape.matmul(w, v)?);
    }
    let cat = tape.concat_cols(&heads)?;
    let wo = tape.param(params, &names::layer(layer, "o"))?;
    let o = tape.matmul(cat, wo)?;
    let x = tape.add(x, o)?;
    let x = tape.rms_norm_rows(x)?;

    let w1 = tape.param(params, &names::layer(layer, "ff.w1"))?;
    let b1 = tape.param(params, &names::layer(layer, "ff.b1"))?;
    let w2 = tape.param(params, &names::layer(layer, "ff.w2"))?;
    let b2 = tape.param(params, &names::layer(layer, "ff.b2"))?;
    let z = tape.matmul(x, w1)?;
    let z = tape.add_row(z, b1)?;
    let z = tape.tanh(z);
    let z = tape.matmul(z, w2)?;
    let z = tape.add_row(z, b2)?;
    let x = tape.add(x, z)?;
    Ok(tape.rms_norm_rows(x)?)
}

/// Runs the attention stack over `[g, C, H, I, V]`, scores actions and
/// candidate targets, and refreshes `g`, `C` and `H` in `bundle` from the
/// stack output. `vision` holds the current V tokens (one per neighbor, in
/// the order of the local part of `space`).
pub fn forward_step(
    tape: &mut Tape,
    bundle: &mut TokenBundle,
    vision: Var,
    space: &ActionSpace,
    params: &ParamSet,
    cfg: &PlannerConfig,
) -> Result<StepOutput, PlannerError> {
    let q = cfg.num_candidates();
    let nh = bundle.num_history();
    let ni = tape.value(bundle.i).rows();
    let nv = tape.value(vision).rows();
    let h0 = 1 + q;
    let i0 = h0 + nh;
    let v0 = i0 + ni;
    let n = v0 + nv;
    if space.num_local > nv {
        return Err(PlannerError::InvalidConfig(format!(
            "{} local actions but only {nv} vision tokens",
            space.num_local
        )));
    }

    let mut parts = vec![bundle.g, bundle.c];
    parts.extend(bundle.h);
    parts.extend([bundle.i, vision]);
    let mut x = tape.concat_rows(&parts)?;

    let mut allowed = vec![true; n * n];
    for (a, row) in bundle.e.iter().enumerate() {
        for (b, &link) in row.iter().enumerate() {
            allowed[(h0 + a) * n + h0 + b] = link;
        }
    }
    let mut attention = Vec::with_capacity(cfg.layers * cfg.heads);
    for layer in 0..cfg.layers {
        x = block(tape, params, cfg, layer, x, &allowed, &mut attention)?;
    }

    let g = tape.slice_rows(x, 0, 1)?;
    let c = tape.slice_rows(x, 1, q)?;
    let h = if nh > 0 {
        Some(tape.slice_rows(x, h0, nh)?)
    } else {
        None
    };
    let v = tape.slice_rows(x, v0, nv)?;

    let mut tokens = Vec::with_capacity(space.len());
    if space.num_local > 0 {
        tokens.push(tape.slice_rows(v, 0, space.num_local)?);
    }
    for &a in &space.actions[space.num_local..] {
        match a {
            Action::Move(node) => {
                let row = bundle
                    .history_row(node)
                    .expect("global actions target visited nodes");
                tokens.push(tape.slice_rows(h.expect("history present"), row, 1)?);
            }
            Action::Stop => {
                let table = tape.param(params, names::TOKEN)?;
                tokens.push(tape.embedding(table, &[TOKEN_STOP])?);
            }
        }
    }
    let action_tokens = tape.concat_rows(&tokens)?;
    let action_logp = mlp_scores(tape, params, "act", action_tokens, g)?;
    let target_logp = mlp_scores(tape, params, "tgt", c, g)?;
    let step = bundle.num_history();
    if !tape.value(action_logp).all_finite() || !tape.value(target_logp).all_finite() {
        return Err(PlannerError::NonFinite { step });
    }

    bundle.g = g;
    bundle.c = c;
    bundle.h = h;
    Ok(StepOutput {
        action_logp,
        target_logp,
        attention,
        history_offset: h0,
        e: bundle.e.clone(),
    })
}
