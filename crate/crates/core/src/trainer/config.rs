//! Training configuration, read from TOML. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::{AgentConfig, BinsConfig, CoreKind, RewardInput};
use crate::envs::{make_multitask_suite, SuiteConfig};
use crate::error::{Error, Result};
use crate::objectives::{Dependence, TDConfig, UpdateVariant};
use crate::rollout::{Env, MetaRolloutSpec};

/// Network shape. Input and output sizes come from the environment suite and
/// the TD settings, so they are not configurable here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub encoder_widths: Vec<usize>,
    pub embed_dim: usize,
    pub core: CoreKind,
    pub core_depth: usize,
    pub core_heads: usize,
    pub ff_dim: usize,
    pub context_len: usize,
    pub actor_head_widths: Vec<usize>,
    pub critic_head_widths: Vec<usize>,
    /// Used only when the critic is independent of return scale.
    pub bins: BinsConfig,
    pub reward_input: RewardInput,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder_widths: vec![512, 200],
            embed_dim: 256,
            core: CoreKind::Transformer,
            core_depth: 3,
            core_heads: 8,
            ff_dim: 1024,
            context_len: 600,
            actor_head_widths: vec![256, 256],
            critic_head_widths: vec![256, 256],
            bins: BinsConfig { num_bins: 64, ..BinsConfig::default() },
            reward_input: RewardInput::Symlog,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_variant")]
    pub variant: UpdateVariant,
    #[serde(default)]
    pub td: TDConfig,
    #[serde(default)]
    pub model: ModelConfig,
    pub rollout: MetaRolloutSpec,
    pub env: SuiteConfig,

    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    /// Sequences per gradient step.
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "one")]
    pub grad_clip_norm: f64,
    #[serde(default = "default_wd")]
    pub weight_decay: f64,
    /// Capacity of the trajectory store, in environment steps.
    #[serde(default = "default_capacity")]
    pub replay_capacity: usize,

    pub total_env_steps: u64,
    /// Gradient steps per collected meta-rollout.
    #[serde(default = "one_usize")]
    pub train_steps_per_rollout: usize,
    /// Environment steps between evaluations; 0 disables them.
    #[serde(default)]
    pub eval_interval: u64,
    #[serde(default = "default_eval_rollouts")]
    pub eval_rollouts: usize,
    #[serde(default)]
    pub greedy_eval: bool,
    /// Gradient steps between training records.
    #[serde(default = "default_log_interval")]
    pub log_interval: u64,
    /// Environment steps between checkpoints; 0 writes only the final one.
    #[serde(default)]
    pub checkpoint_interval: u64,
    /// Whether k-shot exploration attempts still train (with zeroed rewards).
    #[serde(default = "yes")]
    pub train_exploration: bool,
    #[serde(default = "one_usize")]
    pub workers: usize,
}

fn default_variant() -> UpdateVariant {
    UpdateVariant::IND_IND
}
fn default_lr() -> f64 {
    1e-4
}
fn default_batch() -> usize {
    24
}
fn one() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}
fn default_wd() -> f64 {
    1e-4
}
fn default_capacity() -> usize {
    1_000_000
}
fn default_eval_rollouts() -> usize {
    100
}
fn default_log_interval() -> u64 {
    100
}
fn yes() -> bool {
    true
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.td.validate()?;
        self.rollout.validate()?;
        let positive_f = [
            ("learning_rate", self.learning_rate),
            ("grad_clip_norm", self.grad_clip_norm),
        ];
        for (name, v) in positive_f {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        let positive = [
            ("batch_size", self.batch_size),
            ("replay_capacity", self.replay_capacity),
            ("train_steps_per_rollout", self.train_steps_per_rollout),
            ("eval_rollouts", self.eval_rollouts),
            ("workers", self.workers),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.log_interval == 0 {
            return Err(Error::Config("log_interval must be positive".into()));
        }
        if self.rollout.horizon > self.replay_capacity {
            return Err(Error::Config("replay capacity cannot hold a single meta-rollout".into()));
        }
        self.agent_config()?.validate()
    }

    /// Full agent shape for this suite and TD setup.
    pub fn agent_config(&self) -> Result<AgentConfig> {
        let desc = make_multitask_suite(&self.env)?.descriptor();
        let m = &self.model;
        Ok(AgentConfig {
            obs_dim: self.rollout.agent_obs_dim(desc.obs_dim),
            action_count: desc.action_count,
            encoder_widths: m.encoder_widths.clone(),
            embed_dim: m.embed_dim,
            core: m.core,
            core_depth: m.core_depth,
            core_heads: m.core_heads,
            ff_dim: m.ff_dim,
            context_len: m.context_len,
            actor_head_widths: m.actor_head_widths.clone(),
            critic_head_widths: m.critic_head_widths.clone(),
            bins: (self.variant.critic == Dependence::Independent).then_some(m.bins),
            ensemble_size: self.td.ensemble_size,
            gamma_count: self.td.gammas.len(),
            reward_input: m.reward_input,
        })
    }
}
