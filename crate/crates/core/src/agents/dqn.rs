//! DQN over the restricted action space of single-thread moves.
//!
//! Action `i * M + j` moves thread `i` to machine `j`, so there are exactly
//! `N * M` actions and the Q-network has one output per action.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::actor_critic::{argmax_first, mse_loss, td_target};
use super::replay::ReplayBuffer;
use super::{AgentConfig, AgentError, RewardNormalizer, TransitionSample};
use crate::nn::{Activation, DenseNet, Gradients};
use crate::topology::{ScheduleMatrix, SystemState};

#[derive(Debug, Clone, PartialEq)]
pub struct DqnChoice {
    pub index: usize,
    pub thread: usize,
    pub machine: usize,
    /// Q-values of all `N * M` candidate moves.
    pub q_values: Vec<f64>,
    pub explored: bool,
}

impl DqnChoice {
    pub fn apply(&self, schedule: &ScheduleMatrix) -> ScheduleMatrix {
        schedule.with_move(self.thread, self.machine)
    }
}

/// Epsilon-greedy choice among every single-thread move.
pub fn dqn_select<R: Rng + ?Sized>(
    state: &SystemState,
    q_net: &DenseNet,
    epsilon: f64,
    rate_scale: f64,
    rng: &mut R,
) -> Result<DqnChoice, AgentError> {
    let machines = state.schedule.machines();
    let q_values = q_net.forward(&state.encode(rate_scale))?;
    debug_assert_eq!(q_values.len(), state.schedule.threads() * machines);
    let explored = epsilon > 0.0 && rng.random::<f64>() < epsilon;
    let index = if explored {
        rng.random_range(0..q_values.len())
    } else {
        argmax_first(&q_values)
    };
    Ok(DqnChoice {
        index,
        thread: index / machines,
        machine: index % machines,
        q_values,
        explored,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DqnTransition {
    pub sample: TransitionSample,
    pub action_index: usize,
}

/// Regression of `Q(s, a)` onto `r + gamma * max Q'(s', .)`; returns the
/// loss before the update.
pub fn dqn_train_step(
    batch: &[&DqnTransition],
    q_net: &mut DenseNet,
    q_target: &DenseNet,
    config: &AgentConfig,
    normalizer: &RewardNormalizer,
) -> Result<f64, AgentError> {
    if batch.is_empty() {
        return Err(AgentError::InsufficientSamples {
            have: 0,
            need: config.batch_size,
        });
    }
    let h = batch.len() as f64;
    let mut grads = Gradients::zeros_like(q_net);
    let mut targets = Vec::with_capacity(batch.len());
    let mut predictions = Vec::with_capacity(batch.len());
    let mut upstream = vec![0.0; q_net.output_dim()];
    for t in batch {
        let s = &t.sample;
        let max_next = if config.gamma > 0.0 {
            q_target
                .forward(&s.next_state.encode(config.rate_scale))?
                .into_iter()
                .fold(f64::NEG_INFINITY, f64::max)
        } else {
            0.0
        };
        let y = td_target(normalizer.apply(s.reward), config.gamma, max_next);
        let trace = q_net.forward_trace(&s.state.encode(config.rate_scale))?;
        let q = trace.output()[t.action_index];
        upstream.fill(0.0);
        upstream[t.action_index] = 2.0 * (q - y) / h;
        q_net.backward_accumulate(&trace, &upstream, &mut grads)?;
        targets.push(y);
        predictions.push(q);
    }
    q_net.sgd_step(&grads, &config.critic_sgd())?;
    Ok(mse_loss(&targets, &predictions))
}

#[derive(Debug, Clone)]
pub struct DqnAgent {
    pub config: AgentConfig,
    pub q_net: DenseNet,
    pub q_target: DenseNet,
    pub buffer: ReplayBuffer<DqnTransition>,
    pub normalizer: RewardNormalizer,
    pub(crate) rng: ChaCha8Rng,
    threads: usize,
    machines: usize,
}

impl DqnAgent {
    pub fn new(
        config: AgentConfig,
        threads: usize,
        machines: usize,
        sources: usize,
    ) -> Result<Self, AgentError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let q_net = DenseNet::random(
            threads * machines + sources,
            &config.hidden,
            threads * machines,
            Activation::Tanh,
            Activation::Identity,
            &mut rng,
        );
        Ok(Self {
            q_target: q_net.clone(),
            q_net,
            buffer: ReplayBuffer::new(config.buffer_capacity),
            normalizer: RewardNormalizer::new(config.reward_scale),
            rng,
            threads,
            machines,
            config,
        })
    }

    pub fn threads(&self) -> usize {
        self.threads
    }

    pub fn machines(&self) -> usize {
        self.machines
    }

    pub fn select(&mut self, state: &SystemState, epsilon: f64) -> Result<DqnChoice, AgentError> {
        dqn_select(state, &self.q_net, epsilon, self.config.rate_scale, &mut self.rng)
    }

    pub fn train_step(&mut self) -> Result<f64, AgentError> {
        let batch = self.buffer.sample(self.config.batch_size, &mut self.rng)?;
        let loss = dqn_train_step(
            &batch,
            &mut self.q_net,
            &self.q_target,
            &self.config,
            &self.normalizer,
        )?;
        self.q_target.soft_update(&self.q_net, self.config.tau)?;
        Ok(loss)
    }
}
