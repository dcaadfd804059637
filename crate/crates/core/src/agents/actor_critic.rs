//! Actor-critic scheduling with K-nearest action retrieval.
//!
//! The actor maps a state to a continuous proto-action in `[0, 1]^{N x M}`;
//! the K feasible schedules nearest to it (after exploration noise) are
//! scored by the critic and the best one is deployed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::explore::explore;
use super::replay::ReplayBuffer;
use super::{AgentConfig, AgentError, RewardNormalizer, TransitionSample};
use crate::knn::{k_nearest_actions, KnnResult, ProtoAction};
use crate::nn::{dot, Activation, DenseNet, Gradients};
use crate::topology::{ScheduleMatrix, SystemState};

/// Actor, critic and their slowly tracking target copies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorCriticNets {
    pub actor: DenseNet,
    pub critic: DenseNet,
    pub actor_target: DenseNet,
    pub critic_target: DenseNet,
}

impl ActorCriticNets {
    pub fn new<R: Rng + ?Sized>(
        state_len: usize,
        action_len: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Self {
        let actor = DenseNet::random(
            state_len,
            hidden,
            action_len,
            Activation::Tanh,
            Activation::UnitTanh,
            rng,
        );
        let critic = DenseNet::random(
            state_len + action_len,
            hidden,
            1,
            Activation::Tanh,
            Activation::Identity,
            rng,
        );
        Self {
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor,
            critic,
        }
    }

    pub fn soft_update_targets(&mut self, tau: f64) -> Result<(), AgentError> {
        self.critic_target.soft_update(&self.critic, tau)?;
        self.actor_target.soft_update(&self.actor, tau)?;
        Ok(())
    }
}

/// Critic input: encoded state followed by the flattened action.
pub fn critic_input(state: &[f64], action: &[f64]) -> Vec<f64> {
    let mut input = Vec::with_capacity(state.len() + action.len());
    input.extend_from_slice(state);
    input.extend_from_slice(action);
    input
}

/// `Q(s, a)` for each one-hot action.
///
/// The state half of the first layer is shared across candidates and a
/// one-hot action only selects N weight columns, so the first layer costs
/// `O(hidden * (|s| + N * K))` instead of `O(hidden * (|s| + N * M) * K)`.
pub fn score_actions(critic: &DenseNet, state: &[f64], actions: &[ScheduleMatrix]) -> Vec<f64> {
    let first = &critic.layers()[0];
    let s_len = state.len();
    let base: Vec<f64> = (0..first.outputs)
        .map(|o| first.bias[o] + dot(&first.row(o)[..s_len], state))
        .collect();
    actions
        .iter()
        .map(|action| {
            let m = action.machines();
            debug_assert_eq!(s_len + action.threads() * m, first.inputs);
            let z: Vec<f64> = base
                .iter()
                .enumerate()
                .map(|(o, b)| {
                    let row = &first.row(o)[s_len..];
                    b + action
                        .assignment()
                        .iter()
                        .enumerate()
                        .map(|(i, &j)| row[i * m + j])
                        .sum::<f64>()
                })
                .collect();
            critic.forward_from_preactivation(0, z)[0]
        })
        .collect()
}

/// `y = r + gamma * max_a Q'(s', a)`.
pub fn td_target(reward: f64, gamma: f64, max_next_q: f64) -> f64 {
    reward + gamma * max_next_q
}

/// `(1/H) * sum (y_i - q_i)^2`.
pub fn mse_loss(targets: &[f64], predictions: &[f64]) -> f64 {
    assert_eq!(targets.len(), predictions.len());
    let h = targets.len() as f64;
    targets
        .iter()
        .zip(predictions)
        .map(|(y, q)| (y - q).powi(2))
        .sum::<f64>()
        / h
}

/// Outcome of one action selection.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub action: ScheduleMatrix,
    /// Proto-action after exploration noise.
    pub proto: ProtoAction,
    pub candidates: KnnResult,
    pub scores: Vec<f64>,
    pub chosen: usize,
}

/// Proto-action from the actor, exploration, K-NN retrieval, then the
/// candidate with the highest critic score (first on ties).
pub fn actor_critic_select<R: Rng + ?Sized>(
    state: &SystemState,
    actor: &DenseNet,
    critic: &DenseNet,
    k: usize,
    epsilon: f64,
    rate_scale: f64,
    rng: &mut R,
) -> Result<Selection, AgentError> {
    let encoded = state.encode(rate_scale);
    let raw = actor.forward(&encoded)?;
    let proto = ProtoAction::new(state.schedule.threads(), state.schedule.machines(), raw)?;
    let proto = explore(&proto, epsilon, rng);
    let candidates = k_nearest_actions(&proto, k)?;
    let scores = score_actions(critic, &encoded, &candidates.actions);
    let chosen = argmax_first(&scores);
    Ok(Selection {
        action: candidates.actions[chosen].clone(),
        proto,
        candidates,
        scores,
        chosen,
    })
}

pub(crate) fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Bellman regression step on the critic; returns the mini-batch loss
/// before the update.
///
/// Targets use the target actor's proto-action for the next state, its K
/// nearest actions and the target critic's best score among them.
pub fn critic_train_step(
    batch: &[&TransitionSample],
    nets: &mut ActorCriticNets,
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
    let mut grads = Gradients::zeros_like(&nets.critic);
    let mut targets = Vec::with_capacity(batch.len());
    let mut predictions = Vec::with_capacity(batch.len());
    for sample in batch {
        let max_next = if config.gamma > 0.0 {
            let next = sample.next_state.encode(config.rate_scale);
            let proto = ProtoAction::new(
                sample.next_state.schedule.threads(),
                sample.next_state.schedule.machines(),
                nets.actor_target.forward(&next)?,
            )?;
            let knn = k_nearest_actions(&proto, config.k)?;
            score_actions(&nets.critic_target, &next, &knn.actions)
                .into_iter()
                .fold(f64::NEG_INFINITY, f64::max)
        } else {
            0.0
        };
        let y = td_target(normalizer.apply(sample.reward), config.gamma, max_next);
        let input = critic_input(
            &sample.state.encode(config.rate_scale),
            &sample.action.to_flat(),
        );
        let trace = nets.critic.forward_trace(&input)?;
        let q = trace.output()[0];
        nets.critic
            .backward_accumulate(&trace, &[2.0 * (q - y) / h], &mut grads)?;
        targets.push(y);
        predictions.push(q);
    }
    nets.critic.sgd_step(&grads, &config.critic_sgd())?;
    Ok(mse_loss(&targets, &predictions))
}

/// `J = (1/H) * sum_i Q(s_i, f(s_i))` and its gradient with respect to the
/// actor parameters, chaining the critic's action gradient through the actor.
pub fn actor_objective_gradient(
    actor: &DenseNet,
    critic: &DenseNet,
    states: &[Vec<f64>],
) -> Result<(f64, Gradients), AgentError> {
    let h = states.len() as f64;
    let mut grads = Gradients::zeros_like(actor);
    let mut objective = 0.0;
    for s in states {
        let trace = actor.forward_trace(s)?;
        let input = critic_input(s, trace.output());
        let critic_trace = critic.forward_trace(&input)?;
        objective += critic_trace.output()[0];
        let dq_dinput = critic.input_gradient(&critic_trace, &[1.0])?;
        let dq_da: Vec<f64> = dq_dinput[s.len()..].iter().map(|g| g / h).collect();
        actor.backward_accumulate(&trace, &dq_da, &mut grads)?;
    }
    Ok((objective / h, grads))
}

/// Deterministic policy-gradient ascent step on the actor; returns the
/// objective before the update.
pub fn actor_train_step(
    batch: &[&TransitionSample],
    nets: &mut ActorCriticNets,
    config: &AgentConfig,
) -> Result<f64, AgentError> {
    let states: Vec<Vec<f64>> = batch
        .iter()
        .map(|s| s.state.encode(config.rate_scale))
        .collect();
    let (objective, grads) = actor_objective_gradient(&nets.actor, &nets.critic, &states)?;
    nets.actor.ascent_step(&grads, &config.actor_sgd())?;
    Ok(objective)
}

/// The actor-critic scheduler: networks, replay buffer and its own RNG.
#[derive(Debug, Clone)]
pub struct ActorCriticAgent {
    pub config: AgentConfig,
    pub nets: ActorCriticNets,
    pub buffer: ReplayBuffer<TransitionSample>,
    pub normalizer: RewardNormalizer,
    pub(crate) rng: ChaCha8Rng,
    threads: usize,
    machines: usize,
}

impl ActorCriticAgent {
    pub fn new(
        config: AgentConfig,
        threads: usize,
        machines: usize,
        sources: usize,
    ) -> Result<Self, AgentError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let nets = ActorCriticNets::new(
            threads * machines + sources,
            threads * machines,
            &config.hidden,
            &mut rng,
        );
        Ok(Self {
            buffer: ReplayBuffer::new(config.buffer_capacity),
            normalizer: RewardNormalizer::new(config.reward_scale),
            nets,
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

    pub fn select(&mut self, state: &SystemState, epsilon: f64) -> Result<Selection, AgentError> {
        let selection = actor_critic_select(
            state,
            &self.nets.actor,
            &self.nets.critic,
            self.config.k,
            epsilon,
            self.config.rate_scale,
            &mut self.rng,
        )?;
        debug_assert!(selection
            .scores
            .iter()
            .all(|s| *s <= selection.scores[selection.chosen]));
        Ok(selection)
    }

    /// One mini-batch update: critic, then actor, then both targets.
    /// Returns the critic loss.
    pub fn train_step(&mut self) -> Result<f64, AgentError> {
        let batch = self.buffer.sample(self.config.batch_size, &mut self.rng)?;
        let loss = critic_train_step(&batch, &mut self.nets, &self.config, &self.normalizer)?;
        actor_train_step(&batch, &mut self.nets, &self.config)?;
        self.nets.soft_update_targets(self.config.tau)?;
        Ok(loss)
    }
}
