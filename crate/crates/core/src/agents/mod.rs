//! Learning schedulers: the actor-critic agent with K-nearest action
//! retrieval and the single-move DQN baseline.

mod actor_critic;
mod dqn;
mod env;
mod explore;
mod replay;
mod training;

pub use actor_critic::{
    actor_critic_select, actor_objective_gradient, actor_train_step, critic_input,
    critic_train_step, mse_loss, score_actions, td_target, ActorCriticAgent, ActorCriticNets,
    Selection,
};
pub use dqn::{dqn_select, dqn_train_step, DqnAgent, DqnChoice, DqnTransition};
pub use env::{reward_from_measurement, SchedulingEnv, WorkloadSchedule, WorkloadStep};
pub use explore::{explore, EpsilonSchedule};
pub use replay::ReplayBuffer;
pub use training::{
    pretrain_offline, run_online, AgentCheckpoint, Decision, EpisodeLog, EpochRecord,
    FixedScheduleAgent, PretrainReport, SchedulingAgent,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::knn::KnnError;
use crate::nn::{NnError, SgdConfig, DEFAULT_HIDDEN};
use crate::sim::SimError;
use crate::topology::{ScheduleError, ScheduleMatrix, SystemState};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("need {need} samples in the replay buffer, have {have}")]
    InsufficientSamples { have: usize, need: usize },
    #[error("invalid agent config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Knn(#[from] KnnError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub gamma: f64,
    pub tau: f64,
    /// Mini-batch size H.
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub actor_learning_rate: f64,
    pub critic_learning_rate: f64,
    pub epsilon_initial: f64,
    pub epsilon_final: f64,
    /// Epochs over which epsilon decays linearly; `None` means 80% of `epochs`.
    pub epsilon_decay_epochs: Option<usize>,
    /// Number of nearest actions the critic chooses from.
    pub k: usize,
    /// Online decision epochs T.
    pub epochs: usize,
    pub pretrain_samples: usize,
    /// Offline mini-batch steps; `None` means three per pretraining sample.
    pub pretrain_steps: Option<usize>,
    pub hidden: Vec<usize>,
    /// Source rates are divided by this before entering the networks.
    pub rate_scale: f64,
    /// Rewards are divided by this (after centering) before regression.
    pub reward_scale: f64,
    /// Centre and rescale training rewards using the pretraining samples.
    pub fit_reward_scale: bool,
    pub seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 0.01,
            batch_size: 32,
            buffer_capacity: 1000,
            actor_learning_rate: 1e-3,
            critic_learning_rate: 1e-3,
            epsilon_initial: 1.0,
            epsilon_final: 0.05,
            epsilon_decay_epochs: None,
            k: 32,
            epochs: 2000,
            pretrain_samples: 10_000,
            pretrain_steps: None,
            hidden: DEFAULT_HIDDEN.to_vec(),
            rate_scale: 1000.0,
            reward_scale: 1e-3,
            fit_reward_scale: true,
            seed: 0,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: &str| Err(AgentError::InvalidConfig(m.to_string()));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1)");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 {
            return bad("batch_size and buffer_capacity must be positive");
        }
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        if !(self.actor_learning_rate > 0.0 && self.critic_learning_rate > 0.0) {
            return bad("learning rates must be positive");
        }
        let unit = 0.0..=1.0;
        if !(unit.contains(&self.epsilon_initial) && unit.contains(&self.epsilon_final)) {
            return bad("epsilon values must lie in [0, 1]");
        }
        if !(self.rate_scale > 0.0 && self.reward_scale > 0.0) {
            return bad("rate_scale and reward_scale must be positive");
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer sizes must be positive");
        }
        Ok(())
    }

    pub fn epsilon_schedule(&self) -> EpsilonSchedule {
        let decay = self
            .epsilon_decay_epochs
            .unwrap_or_else(|| (self.epochs as f64 * 0.8).round() as usize);
        EpsilonSchedule::linear(self.epsilon_initial, self.epsilon_final, decay)
    }

    pub fn offline_steps(&self) -> usize {
        self.pretrain_steps.unwrap_or(3 * self.pretrain_samples)
    }

    pub(crate) fn actor_sgd(&self) -> SgdConfig {
        SgdConfig {
            learning_rate: self.actor_learning_rate,
            batch_size: self.batch_size,
        }
    }

    pub(crate) fn critic_sgd(&self) -> SgdConfig {
        SgdConfig {
            learning_rate: self.critic_learning_rate,
            batch_size: self.batch_size,
        }
    }
}

/// One `(s, a, r, s')` step; the reward is minus the measured average
/// tuple processing time in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionSample {
    pub state: SystemState,
    pub action: ScheduleMatrix,
    pub reward: f64,
    pub next_state: SystemState,
}

/// Affine map from raw rewards to the scale the critic regresses on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardNormalizer {
    pub shift: f64,
    pub scale: f64,
}

impl RewardNormalizer {
    pub fn new(scale: f64) -> Self {
        Self { shift: 0.0, scale }
    }

    /// Centres on the mean and divides by the standard deviation, keeping
    /// `floor` as the smallest admissible scale.
    pub fn fit(rewards: &[f64], floor: f64) -> Self {
        if rewards.is_empty() {
            return Self::new(floor);
        }
        let n = rewards.len() as f64;
        let mean = rewards.iter().sum::<f64>() / n;
        let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
        Self {
            shift: mean,
            scale: var.sqrt().max(floor * 1e-3).max(f64::MIN_POSITIVE),
        }
    }

    #[inline]
    pub fn apply(&self, reward: f64) -> f64 {
        (reward - self.shift) / self.scale
    }
}
