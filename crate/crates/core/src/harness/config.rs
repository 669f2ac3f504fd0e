use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::engine::CLConfig;
use crate::losses::LossWeights;
use crate::planner::PlannerConfig;
use crate::world::{SceneConfig, Split, WorldConfig};

/// Version tag every config file must carry.
pub const CONFIG_FORMAT_VERSION: u32 = 1;

/// One experiment, as a flat key/value document. Every key except
/// `format_version` is optional and defaults to the desk benchmark value;
/// unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub format_version: u32,
    /// Master seed for the world, initialization, batching and sampling.
    pub seed: u64,
    /// Output directory; the command line `--out` takes precedence.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,

    pub train_domains: usize,
    pub val_seen_domains: usize,
    pub val_unseen_domains: usize,
    pub tasks_per_domain: usize,
    pub scene_min_nodes: usize,
    pub scene_max_nodes: usize,
    pub scene_area: f64,
    pub scene_min_separation: f64,
    pub scene_max_degree: usize,
    pub scene_edge_density: f64,
    pub scene_link_radius: f64,
    pub scene_style_scale: f64,
    pub scene_noise_scale: f64,

    pub model_dim: usize,
    pub model_layers: usize,
    pub model_heads: usize,
    pub model_hidden: usize,
    pub grid_size: usize,
    pub grid_spacing: f64,
    pub horizon: usize,
    pub max_instruction_len: usize,

    pub loss_il: f64,
    pub loss_rl: f64,
    pub loss_ht: f64,
    pub loss_target: f64,

    /// Adam iterations of base training on the train-seen split.
    pub base_iterations: usize,
    pub base_batch: usize,
    pub base_lr: f64,
    /// Global gradient-norm clip for base training (0 disables).
    pub base_clip: f64,

    /// Split whose domains form the continual-learning stream.
    pub cl_split: Split,
    pub cl_alpha_init: f64,
    pub cl_beta: f64,
    pub cl_replay: usize,
    pub cl_buffer_z: usize,
    pub cl_iterations: usize,
    pub cl_batch_new: usize,
    pub cl_learn_alpha: bool,
    pub cl_alpha_lr: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let scene = SceneConfig::default();
        let planner = PlannerConfig::default();
        let weights = LossWeights::default();
        let cl = CLConfig::default();
        Self {
            format_version: CONFIG_FORMAT_VERSION,
            seed: 7,
            out_dir: None,
            train_domains: 8,
            val_seen_domains: 4,
            val_unseen_domains: 8,
            tasks_per_domain: 50,
            scene_min_nodes: scene.min_nodes,
            scene_max_nodes: scene.max_nodes,
            scene_area: scene.area,
            scene_min_separation: scene.min_separation,
            scene_max_degree: scene.max_degree,
            scene_edge_density: scene.edge_density,
            scene_link_radius: scene.link_radius,
            scene_style_scale: scene.style_scale,
            scene_noise_scale: scene.noise_scale,
            // Desk-scale defaults: a narrow model and short budgets keep a
            // five-seed run of both arms within minutes on one core.
            model_dim: 32,
            model_layers: planner.layers,
            model_heads: planner.heads,
            model_hidden: 32,
            grid_size: planner.grid,
            grid_spacing: planner.spacing,
            horizon: planner.horizon,
            max_instruction_len: planner.max_instruction_len,
            loss_il: weights.il,
            loss_rl: weights.rl,
            loss_ht: weights.ht,
            loss_target: weights.target,
            base_iterations: 2000,
            base_batch: 8,
            base_lr: 1e-3,
            base_clip: 5.0,
            cl_split: Split::ValUnseen,
            // Small inner steps with a slow α adaptation; larger steps
            // overwrite the base policy within one domain.
            cl_alpha_init: 3e-4,
            cl_beta: cl.beta,
            cl_replay: cl.replay,
            cl_buffer_z: cl.buffer_z,
            cl_iterations: 100,
            cl_batch_new: cl.batch_new,
            cl_learn_alpha: cl.learn_alpha,
            cl_alpha_lr: 1e-7,
        }
    }
}

impl ExperimentConfig {
    pub fn world(&self) -> WorldConfig {
        WorldConfig {
            train_domains: self.train_domains,
            val_seen_domains: self.val_seen_domains,
            val_unseen_domains: self.val_unseen_domains,
            tasks_per_domain: self.tasks_per_domain,
            scene: SceneConfig {
                min_nodes: self.scene_min_nodes,
                max_nodes: self.scene_max_nodes,
                area: self.scene_area,
                min_separation: self.scene_min_separation,
                max_degree: self.scene_max_degree,
                edge_density: self.scene_edge_density,
                link_radius: self.scene_link_radius,
                style_scale: self.scene_style_scale,
                noise_scale: self.scene_noise_scale,
            },
        }
    }

    pub fn planner(&self) -> PlannerConfig {
        PlannerConfig {
            dim: self.model_dim,
            layers: self.model_layers,
            heads: self.model_heads,
            hidden: self.model_hidden,
            grid: self.grid_size,
            spacing: self.grid_spacing,
            horizon: self.horizon,
            max_instruction_len: self.max_instruction_len,
        }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            il: self.loss_il,
            rl: self.loss_rl,
            ht: self.loss_ht,
            target: self.loss_target,
        }
    }

    pub fn cl(&self) -> CLConfig {
        CLConfig {
            alpha_init: self.cl_alpha_init,
            beta: self.cl_beta,
            replay: self.cl_replay,
            buffer_z: self.cl_buffer_z,
            iterations: self.cl_iterations,
            batch_new: self.cl_batch_new,
            learn_alpha: self.cl_learn_alpha,
            alpha_lr: self.cl_alpha_lr,
        }
    }

    /// Validates the version and every derived sub-config.
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.format_version != CONFIG_FORMAT_VERSION {
            return Err(HarnessError::Config(format!(
                "unsupported format_version {} (expected {CONFIG_FORMAT_VERSION})",
                self.format_version
            )));
        }
        self.world().validate()?;
        self.planner().validate()?;
        self.weights().validate()?;
        self.cl().validate()?;
        if self.base_batch == 0 {
            return Err(HarnessError::Config("base_batch must be positive".into()));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(HarnessError::Config("base_lr must be positive".into()));
        }
        if !(self.base_clip >= 0.0 && self.base_clip.is_finite()) {
            return Err(HarnessError::Config("base_clip must be nonnegative".into()));
        }
        if self.cl_split == Split::TrainSeen {
            return Err(HarnessError::Config(
                "cl_split must be val_seen or val_unseen".into(),
            ));
        }
        if self.world().domains(self.cl_split) < 2 {
            return Err(HarnessError::Config(format!(
                "cl_split {} needs at least 2 domains",
                self.cl_split
            )));
        }
        Ok(())
    }

    /// Parses and validates a config document; `format_version` is required.
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let table: toml::Table =
            toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        if !table.contains_key("format_version") {
            return Err(HarnessError::Config("missing key `format_version`".into()));
        }
        let cfg: Self = table
            .try_into()
            .map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml_str(&text)
    }
}
