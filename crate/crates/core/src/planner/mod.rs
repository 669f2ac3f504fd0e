//! Structured cross-modal planner.
//!
//! Each step attends over five token families — global `g`, candidate
//! targets `C`, history `H`, instruction `I` and current vision `V` — with
//! history-history attention masked by the visit adjacency matrix `E`. The
//! action head scores `MLP(token ⊙ g)` for every legal action and the target
//! head scores `MLP(c ⊙ g)` for every grid cell.

mod forward;
mod rollout;
mod tokens;

pub use forward::{action_space, forward_step, ActionSpace, StepOutput};
pub use rollout::{rollout, Driver, Rollout};
pub use tokens::{
    encode_history, grid_offsets, init_tokens, move_encoding, vision_features, vision_tokens,
    TokenBundle, VISION_FEATURES,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, ParamSet, Tensor};
use crate::rng::{derive_seed, tag};
use crate::world::vocab::VOCAB_SIZE;
use crate::world::WorldError;

/// Positions are divided by this many meters before the positional encoder.
pub const POSITION_SCALE: f64 = 12.0;

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("invalid planner config: {0}")]
    InvalidConfig(String),
    #[error("instruction has {len} tokens, model supports at most {max}")]
    InstructionTooLong { len: usize, max: usize },
    #[error("non-finite logits at step {step}")]
    NonFinite { step: usize },
    #[error("replayed action index {index} out of range at step {step}")]
    BadReplay { step: usize, index: usize },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    World(#[from] WorldError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerConfig {
    /// Token dimension D.
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    /// Hidden width of the feed-forward blocks and both heads.
    pub hidden: usize,
    /// Candidate grid side d (q = d² candidates).
    pub grid: usize,
    /// Distance between adjacent candidate cell centers (m).
    pub spacing: f64,
    /// Episode step limit T.
    pub horizon: usize,
    pub max_instruction_len: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            layers: 2,
            heads: 2,
            hidden: 64,
            grid: 5,
            spacing: 6.0,
            horizon: 20,
            max_instruction_len: 48,
        }
    }
}

impl PlannerConfig {
    pub fn num_candidates(&self) -> usize {
        self.grid * self.grid
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn validate(&self) -> Result<(), PlannerError> {
        let bad = |m: &str| Err(PlannerError::InvalidConfig(m.into()));
        if self.dim == 0 || self.hidden == 0 {
            return bad("dim and hidden must be positive");
        }
        if self.layers == 0 || self.heads == 0 {
            return bad("layers and heads must be positive");
        }
        if !self.dim.is_multiple_of(self.heads) {
            return bad("dim must be divisible by heads");
        }
        if self.grid == 0 || !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return bad("grid must be positive and spacing a positive number");
        }
        if self.horizon == 0 || self.max_instruction_len == 0 {
            return bad("horizon and max_instruction_len must be positive");
        }
        Ok(())
    }
}

/// Parameter names used by the planner.
pub mod names {
    pub const TOKEN: &str = "emb.token";
    pub const INSTR_POS: &str = "emb.instr_pos";
    pub const POS_W: &str = "enc.pos.w";
    pub const POS_B: &str = "enc.pos.b";
    pub const ACT_W: &str = "enc.act.w";
    pub const TIME: &str = "enc.time";
    pub const VIS_W: &str = "enc.vis.w";
    pub const VIS_B: &str = "enc.vis.b";

    pub fn attn(layer: usize, head: usize, which: &str) -> String {
        format!("attn{layer}.h{head}.{which}")
    }

    pub fn layer(layer: usize, which: &str) -> String {
        format!("attn{layer}.{which}")
    }

    pub fn head(head: &str, which: &str) -> String {
        format!("head.{head}.{which}")
    }
}

/// Seeded initialization of every planner parameter, with uniform inner-loop
/// rate `alpha` for all entries.
pub fn init_params(cfg: &PlannerConfig, seed: u64, alpha: f64) -> Result<ParamSet, PlannerError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[tag::INIT]));
    let mut ps = ParamSet::new();
    let mut normal = |rows: usize, cols: usize, std: f64| -> Tensor {
        let dist = Normal::new(0.0, std).expect("finite std");
        let data = (0..rows * cols).map(|_| dist.sample(&mut rng)).collect();
        Tensor::matrix(rows, cols, data).expect("shape matches data")
    };
    let fan = |n: usize| 1.0 / (n as f64).sqrt();
    let (d, f) = (cfg.dim, cfg.hidden);

    let add = |ps: &mut ParamSet, name: &str, t: Tensor| ps.insert(name, t, alpha);
    add(&mut ps, names::TOKEN, normal(VOCAB_SIZE, d, 1.0))?;
    add(
        &mut ps,
        names::INSTR_POS,
        normal(cfg.max_instruction_len, d, 0.5),
    )?;
    add(&mut ps, names::POS_W, normal(2, d, 1.0))?;
    add(&mut ps, names::POS_B, Tensor::zeros(&[1, d]))?;
    add(&mut ps, names::ACT_W, normal(4, d, 0.5))?;
    add(&mut ps, names::TIME, normal(cfg.horizon + 1, d, 0.5))?;
    add(
        &mut ps,
        names::VIS_W,
        normal(VISION_FEATURES, d, fan(VISION_FEATURES)),
    )?;
    add(&mut ps, names::VIS_B, Tensor::zeros(&[1, d]))?;
    let dh = cfg.head_dim();
    for l in 0..cfg.layers {
        for h in 0..cfg.heads {
            for w in ["q", "k", "v"] {
                add(&mut ps, &names::attn(l, h, w), normal(d, dh, fan(d)))?;
            }
        }
        add(&mut ps, &names::layer(l, "o"), normal(d, d, fan(d)))?;
        add(&mut ps, &names::layer(l, "ff.w1"), normal(d, f, fan(d)))?;
        add(&mut ps, &names::layer(l, "ff.b1"), Tensor::zeros(&[1, f]))?;
        add(&mut ps, &names::layer(l, "ff.w2"), normal(f, d, fan(f)))?;
        add(&mut ps, &names::layer(l, "ff.b2"), Tensor::zeros(&[1, d]))?;
    }
    for head in ["act", "tgt"] {
        add(&mut ps, &names::head(head, "w1"), normal(d, f, fan(d)))?;
        add(&mut ps, &names::head(head, "b1"), Tensor::zeros(&[1, f]))?;
        add(&mut ps, &names::head(head, "w2"), normal(f, 1, fan(f)))?;
    }
    Ok(ps)
}

#[cfg(test)]
mod tests;
