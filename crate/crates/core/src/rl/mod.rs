//! Large-timescale service deployment: one Double-DQN agent per edge server.

pub mod agent;
pub mod gru;
pub mod knapsack;
pub mod network;
pub mod replay;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use agent::{random_feasible_action, storage_used, AgentCheckpoint, DeploymentAgent};
pub use knapsack::{exhaustive_select, knapsack_select};
pub use network::{q_value, AgentNetwork, HeadActivation, NetworkWeights, Observation};
pub use replay::{ReplayBuffer, Transition};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub gamma: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Frames between hard target-network copies.
    pub target_sync: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_episodes: usize,
    pub hidden: usize,
    pub gru_layers: usize,
    pub buffer_capacity: usize,
    pub head_activation: HeadActivation,
    /// Divide the frame reward by the slots per frame.
    pub reward_per_slot: bool,
    /// Scale observed counts by `observation_scale` (default: `users_max`).
    pub normalize_observations: bool,
    pub observation_scale: Option<f64>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            gamma: 0.9,
            learning_rate: 0.01,
            batch_size: 64,
            target_sync: 20,
            epsilon_start: 0.5,
            epsilon_end: 0.01,
            epsilon_decay_episodes: 500,
            hidden: 128,
            gru_layers: 1,
            buffer_capacity: 2000,
            head_activation: HeadActivation::Identity,
            reward_per_slot: false,
            normalize_observations: true,
            observation_scale: None,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma {} outside [0, 1)", self.gamma)));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        for (name, eps) in [("epsilon_start", self.epsilon_start), ("epsilon_end", self.epsilon_end)] {
            if !(eps > 0.0 && eps <= 1.0) {
                return Err(Error::Config(format!("{name} {eps} outside (0, 1]")));
            }
        }
        if self.batch_size == 0 || self.hidden == 0 || self.gru_layers == 0 {
            return Err(Error::Config("batch_size, hidden and gru_layers must be >= 1".into()));
        }
        if self.buffer_capacity < self.batch_size {
            return Err(Error::Config(format!(
                "buffer capacity {} is smaller than batch size {}",
                self.buffer_capacity, self.batch_size
            )));
        }
        if let Some(s) = self.observation_scale {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::Config("observation_scale must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Linear decay from `epsilon_start` to `epsilon_end` over
/// `epsilon_decay_episodes`, constant afterwards.
pub fn epsilon_at(episode: usize, cfg: &TrainingConfig) -> f64 {
    if cfg.epsilon_decay_episodes == 0 || episode >= cfg.epsilon_decay_episodes {
        return cfg.epsilon_end;
    }
    let frac = episode as f64 / cfg.epsilon_decay_episodes as f64;
    cfg.epsilon_start + (cfg.epsilon_end - cfg.epsilon_start) * frac
}
