//! Multi-task advantage actor-critic training with an information
//! bottleneck on the recognizer and per-group gradient routing.

mod gae;
mod losses;
mod optim;
mod rollout;
mod trainer;

pub use gae::{compute_gae, compute_gae_masked};
pub use losses::{
    accumulate_gradients, compute_losses, episode_losses, loss_scales, prepare_targets, BatchTargets, EpisodeBatch, GroupGrads,
    LossKind, LossReport, LossScales, LossVars, TaskLoss,
};
pub use optim::{clip_grad_norm, global_norm, Adam};
pub use rollout::{collect_episode, collect_episodes, replay_episode, replay_task_vectors, Episode, EpisodeTrace, RolloutMode};
pub use trainer::{config_hash, train, Checkpoint, MetricsRecord, RunArtifacts, Trainer, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};

use serde::{Deserialize, Serialize};

use crate::envs::{spaces, ActionSpace, EnvId, EnvParams, TaskSets};
use crate::error::{Error, Result};
use crate::evaluation::VariantName;
use crate::nets::ArchConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub id: EnvId,
    /// Defaults to the environment's own limit.
    #[serde(default)]
    pub episode_limit: Option<usize>,
    #[serde(default)]
    pub params: EnvParams,
}

impl EnvConfig {
    pub fn new(id: EnvId) -> Self {
        Self { id, episode_limit: None, params: EnvParams::default() }
    }

    pub fn episode_limit(&self) -> usize {
        self.episode_limit.unwrap_or_else(|| self.id.default_episode_limit())
    }

    pub fn spaces(&self) -> (usize, ActionSpace) {
        spaces(self.id, &self.params)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    /// α1, α2, α3.
    pub lr_policy: f64,
    pub lr_critic: f64,
    pub lr_cpr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// λ, folded into the bottleneck loss.
    pub kl_weight: f64,
    /// η.
    pub entropy_weight: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    /// k.
    pub episodes_per_task: usize,
    pub total_updates: u64,
    /// Stop once this many environment steps have been collected.
    pub max_env_steps: Option<u64>,
    /// Per-group gradient-norm cap.
    pub grad_clip: f64,
    /// Standardize advantages over each update before the policy loss.
    pub normalize_advantages: bool,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr_policy: 7e-4,
            lr_critic: 7e-4,
            lr_cpr: 7e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            kl_weight: 0.01,
            entropy_weight: 0.01,
            gamma: 0.99,
            gae_lambda: 0.95,
            episodes_per_task: 2,
            total_updates: 500,
            max_env_steps: None,
            grad_clip: 5.0,
            normalize_advantages: true,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, why: &str| Err(Error::Config(format!("optim.{key} {why}")));
        for (key, lr) in [("lr_policy", self.lr_policy), ("lr_critic", self.lr_critic), ("lr_cpr", self.lr_cpr)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(key, "must be positive");
            }
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma", "must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda", "must lie in [0, 1]");
        }
        if !(self.kl_weight >= 0.0 && self.kl_weight.is_finite()) {
            return bad("kl_weight", "must be non-negative");
        }
        if !(self.entropy_weight >= 0.0 && self.entropy_weight.is_finite()) {
            return bad("entropy_weight", "must be non-negative");
        }
        if self.episodes_per_task == 0 {
            return bad("episodes_per_task", "must be at least 1");
        }
        if self.grad_clip.is_nan() || self.grad_clip <= 0.0 {
            return bad("grad_clip", "must be positive");
        }
        if !(0.0..1.0).contains(&self.adam_beta1)
            || !(0.0..1.0).contains(&self.adam_beta2)
            || self.adam_eps.is_nan()
            || self.adam_eps < 0.0
        {
            return bad("adam_*", "out of range");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoggingConfig {
    /// Periodic checkpoint interval in updates; 0 keeps only the initial and final ones.
    pub checkpoint_every: u64,
}

impl Default for LoggingConfig {
    fn default() -> Self {
        Self { checkpoint_every: 50 }
    }
}

/// Everything that determines a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_variant")]
    pub variant: VariantName,
    pub env: EnvConfig,
    #[serde(default = "TaskSets::default_sets")]
    pub tasks: TaskSets,
    #[serde(default)]
    pub arch: ArchConfig,
    #[serde(default)]
    pub optim: OptimConfig,
    #[serde(default)]
    pub logging: LoggingConfig,
    /// Counts trained on; `None` means `tasks.train`. Oracle baselines train on adaptation counts.
    #[serde(default)]
    pub train_counts: Option<Vec<usize>>,
}

fn default_variant() -> VariantName {
    VariantName::MetaCpr
}

impl TrainConfig {
    pub fn new(env: EnvId) -> Self {
        Self {
            seed: 0,
            variant: VariantName::MetaCpr,
            env: EnvConfig::new(env),
            tasks: TaskSets::default_sets(),
            arch: ArchConfig::default(),
            optim: OptimConfig::default(),
            logging: LoggingConfig::default(),
            train_counts: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.optim.validate()?;
        if self.env.episode_limit() == 0 {
            return Err(Error::Config("env.episode_limit must be at least 1".into()));
        }
        if let Some(counts) = &self.train_counts {
            if counts.is_empty() || counts.iter().any(|&n| n < 2) {
                return Err(Error::Config("train_counts must be non-empty with every count at least 2".into()));
            }
        }
        Ok(())
    }

    /// Agent counts visited by every update, ascending.
    pub fn training_counts(&self) -> Vec<usize> {
        let mut counts = self.train_counts.clone().unwrap_or_else(|| self.tasks.train().to_vec());
        counts.sort_unstable();
        counts.dedup();
        counts
    }

    /// True when training touches only `tasks.train`, so zero-shot evaluation on `tasks.adapt` is meaningful.
    pub fn is_zero_shot_eligible(&self) -> bool {
        let train = self.tasks.train();
        self.training_counts().iter().all(|n| train.contains(n))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainConfig::new(EnvId::PushBall).validate().unwrap();
    }

    #[test]
    fn invalid_hyperparameters_are_config_errors() {
        let mut c = TrainConfig::new(EnvId::ParticleSystem);
        c.optim.gamma = 1.5;
        assert!(matches!(c.validate(), Err(Error::Config(m)) if m.contains("gamma")));
        let mut c = TrainConfig::new(EnvId::ParticleSystem);
        c.optim.episodes_per_task = 0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::new(EnvId::ParticleSystem);
        c.optim.lr_cpr = 0.0;
        assert!(c.validate().is_err());
    }
}
