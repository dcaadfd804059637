//! Offline pretraining and the online decision-epoch loop shared by every
//! scheduler.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::actor_critic::{ActorCriticAgent, ActorCriticNets};
use super::dqn::{DqnAgent, DqnTransition};
use super::env::{reward_from_measurement, SchedulingEnv, WorkloadSchedule};
use super::{AgentConfig, AgentError, RewardNormalizer, TransitionSample};
use crate::baseline::random_schedule;
use crate::nn::{Checkpoint, DenseNet};
use crate::topology::{round_robin_schedule, schedule_diff, ScheduleMatrix, SystemState};

/// A schedule to deploy, plus the restricted-action index for DQN.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub schedule: ScheduleMatrix,
    pub action_index: Option<usize>,
}

impl Decision {
    pub fn schedule(schedule: ScheduleMatrix) -> Self {
        Self {
            schedule,
            action_index: None,
        }
    }
}

pub trait SchedulingAgent {
    fn name(&self) -> &'static str;

    fn config(&self) -> &AgentConfig;

    fn decide(&mut self, state: &SystemState, epsilon: f64) -> Result<Decision, AgentError>;

    /// A uniformly random feasible action, used to collect offline samples.
    fn random_decision(&mut self, state: &SystemState, rng: &mut dyn RngCore) -> Decision;

    fn remember(&mut self, sample: TransitionSample, decision: &Decision);

    fn buffered(&self) -> usize;

    fn set_normalizer(&mut self, normalizer: RewardNormalizer);

    /// One mini-batch update; returns the value-network loss.
    fn train_step(&mut self) -> Result<f64, AgentError>;

    fn checkpoint(&self) -> AgentCheckpoint;

    fn learns(&self) -> bool {
        true
    }
}

impl SchedulingAgent for ActorCriticAgent {
    fn name(&self) -> &'static str {
        "actor-critic"
    }

    fn config(&self) -> &AgentConfig {
        &self.config
    }

    fn decide(&mut self, state: &SystemState, epsilon: f64) -> Result<Decision, AgentError> {
        Ok(Decision::schedule(self.select(state, epsilon)?.action))
    }

    fn random_decision(&mut self, state: &SystemState, rng: &mut dyn RngCore) -> Decision {
        let m = state.schedule.machines();
        let assignment = (0..state.schedule.threads())
            .map(|_| rng.random_range(0..m))
            .collect();
        Decision::schedule(ScheduleMatrix::from_assignment(assignment, m).expect("in range"))
    }

    fn remember(&mut self, sample: TransitionSample, _decision: &Decision) {
        self.buffer.push(sample);
    }

    fn buffered(&self) -> usize {
        self.buffer.len()
    }

    fn set_normalizer(&mut self, normalizer: RewardNormalizer) {
        self.normalizer = normalizer;
    }

    fn train_step(&mut self) -> Result<f64, AgentError> {
        ActorCriticAgent::train_step(self)
    }

    fn checkpoint(&self) -> AgentCheckpoint {
        let nets = [
            ("actor", &self.nets.actor),
            ("critic", &self.nets.critic),
            ("actor_target", &self.nets.actor_target),
            ("critic_target", &self.nets.critic_target),
        ];
        let nm = self.threads() * self.machines();
        let dims = (self.threads(), self.machines(), self.nets.actor.input_dim() - nm);
        AgentCheckpoint::new(self.name(), &self.config, dims, self.normalizer, &nets)
    }
}

impl SchedulingAgent for DqnAgent {
    fn name(&self) -> &'static str {
        "dqn"
    }

    fn config(&self) -> &AgentConfig {
        &self.config
    }

    fn decide(&mut self, state: &SystemState, epsilon: f64) -> Result<Decision, AgentError> {
        let choice = self.select(state, epsilon)?;
        Ok(Decision {
            schedule: choice.apply(&state.schedule),
            action_index: Some(choice.index),
        })
    }

    fn random_decision(&mut self, state: &SystemState, rng: &mut dyn RngCore) -> Decision {
        let m = state.schedule.machines();
        let index = rng.random_range(0..state.schedule.threads() * m);
        Decision {
            schedule: state.schedule.with_move(index / m, index % m),
            action_index: Some(index),
        }
    }

    fn remember(&mut self, sample: TransitionSample, decision: &Decision) {
        let action_index = decision
            .action_index
            .expect("DQN decisions carry an action index");
        self.buffer.push(DqnTransition {
            sample,
            action_index,
        });
    }

    fn buffered(&self) -> usize {
        self.buffer.len()
    }

    fn set_normalizer(&mut self, normalizer: RewardNormalizer) {
        self.normalizer = normalizer;
    }

    fn train_step(&mut self) -> Result<f64, AgentError> {
        DqnAgent::train_step(self)
    }

    fn checkpoint(&self) -> AgentCheckpoint {
        let nets = [("q", &self.q_net), ("q_target", &self.q_target)];
        let nm = self.threads() * self.machines();
        let dims = (self.threads(), self.machines(), self.q_net.input_dim() - nm);
        AgentCheckpoint::new(self.name(), &self.config, dims, self.normalizer, &nets)
    }
}

/// Non-learning scheduler that keeps deploying one schedule.
#[derive(Debug, Clone)]
pub struct FixedScheduleAgent {
    name: &'static str,
    schedule: ScheduleMatrix,
    config: AgentConfig,
}

impl FixedScheduleAgent {
    pub fn new(name: &'static str, schedule: ScheduleMatrix, config: AgentConfig) -> Self {
        Self {
            name,
            schedule,
            config,
        }
    }
}

impl SchedulingAgent for FixedScheduleAgent {
    fn name(&self) -> &'static str {
        self.name
    }

    fn config(&self) -> &AgentConfig {
        &self.config
    }

    fn decide(&mut self, _state: &SystemState, _epsilon: f64) -> Result<Decision, AgentError> {
        Ok(Decision::schedule(self.schedule.clone()))
    }

    fn random_decision(&mut self, _state: &SystemState, _rng: &mut dyn RngCore) -> Decision {
        Decision::schedule(self.schedule.clone())
    }

    fn remember(&mut self, _sample: TransitionSample, _decision: &Decision) {}

    fn buffered(&self) -> usize {
        0
    }

    fn set_normalizer(&mut self, _normalizer: RewardNormalizer) {}

    fn train_step(&mut self) -> Result<f64, AgentError> {
        Ok(0.0)
    }

    fn checkpoint(&self) -> AgentCheckpoint {
        let dims = (self.schedule.threads(), self.schedule.machines(), 0);
        AgentCheckpoint::new(self.name, &self.config, dims, RewardNormalizer::new(1.0), &[])
    }

    fn learns(&self) -> bool {
        false
    }
}

/// Every network of an agent plus the configuration it was trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentCheckpoint {
    pub agent: String,
    pub config: AgentConfig,
    pub threads: usize,
    pub machines: usize,
    pub sources: usize,
    pub normalizer: RewardNormalizer,
    pub nets: BTreeMap<String, Checkpoint>,
}

impl AgentCheckpoint {
    fn new(
        agent: &str,
        config: &AgentConfig,
        dims: (usize, usize, usize),
        normalizer: RewardNormalizer,
        nets: &[(&str, &DenseNet)],
    ) -> Self {
        Self {
            agent: agent.to_string(),
            config: config.clone(),
            threads: dims.0,
            machines: dims.1,
            sources: dims.2,
            normalizer,
            nets: nets
                .iter()
                .map(|(k, n)| (k.to_string(), n.to_checkpoint()))
                .collect(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), AgentError> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, AgentError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    fn net(&self, name: &str) -> Result<DenseNet, AgentError> {
        let checkpoint = self.nets.get(name).cloned().ok_or_else(|| {
            crate::nn::NnError::CorruptCheckpoint(format!("missing network `{name}`"))
        })?;
        Ok(DenseNet::from_checkpoint(checkpoint)?)
    }

    /// Rebuilds an actor-critic agent; its replay buffer starts empty.
    pub fn into_actor_critic(self) -> Result<ActorCriticAgent, AgentError> {
        let nets = ActorCriticNets {
            actor: self.net("actor")?,
            critic: self.net("critic")?,
            actor_target: self.net("actor_target")?,
            critic_target: self.net("critic_target")?,
        };
        let mut agent = ActorCriticAgent::new(self.config, self.threads, self.machines, self.sources)?;
        if !nets.actor.same_architecture(&agent.nets.actor)
            || !nets.critic.same_architecture(&agent.nets.critic)
        {
            return Err(crate::nn::NnError::ArchitectureMismatch("checkpoint does not match its recorded dimensions".into()).into());
        }
        agent.nets = nets;
        agent.normalizer = self.normalizer;
        Ok(agent)
    }

    /// Rebuilds a DQN agent; its replay buffer starts empty.
    pub fn into_dqn(self) -> Result<DqnAgent, AgentError> {
        let q_net = self.net("q")?;
        let q_target = self.net("q_target")?;
        let mut agent = DqnAgent::new(self.config, self.threads, self.machines, self.sources)?;
        if !q_net.same_architecture(&agent.q_net) {
            return Err(crate::nn::NnError::ArchitectureMismatch("checkpoint does not match its recorded dimensions".into()).into());
        }
        agent.q_net = q_net;
        agent.q_target = q_target;
        agent.normalizer = self.normalizer;
        Ok(agent)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub reward: f64,
    pub epsilon: f64,
    pub moved_threads: usize,
    pub avg_time_seconds: f64,
    pub workload_multiplier: f64,
    pub loss: Option<f64>,
    pub action: ScheduleMatrix,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub records: Vec<EpochRecord>,
}

impl EpisodeLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.reward).collect()
    }

    pub fn avg_times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.avg_time_seconds).collect()
    }

    /// CSV with columns `epoch,reward,epsilon,moved_threads,avg_time_seconds`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["epoch", "reward", "epsilon", "moved_threads", "avg_time_seconds"])?;
        for r in &self.records {
            w.write_record([
                r.epoch.to_string(),
                r.reward.to_string(),
                r.epsilon.to_string(),
                r.moved_threads.to_string(),
                r.avg_time_seconds.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub samples: usize,
    pub steps: usize,
    pub final_loss: Option<f64>,
}

/// Collects `samples` transitions with uniformly random actions from random
/// starting schedules, then runs the configured number of offline
/// mini-batch updates.
pub fn pretrain_offline<A: SchedulingAgent + ?Sized, R: Rng>(
    env: &mut SchedulingEnv,
    agent: &mut A,
    samples: usize,
    rng: &mut R,
) -> Result<PretrainReport, AgentError> {
    if !agent.learns() {
        return Ok(PretrainReport {
            samples: 0,
            steps: 0,
            final_loss: None,
        });
    }
    let workload = env.base_workload();
    let mut rewards = Vec::with_capacity(samples);
    for _ in 0..samples {
        let start = random_schedule(&env.spec, &env.cluster, rng);
        let state = SystemState::new(start, workload.clone());
        let decision = agent.random_decision(&state, rng);
        let measured = env.measure(&decision.schedule, &workload)?;
        let reward = reward_from_measurement(&measured);
        rewards.push(reward);
        let sample = TransitionSample {
            next_state: SystemState::new(decision.schedule.clone(), workload.clone()),
            action: decision.schedule.clone(),
            state,
            reward,
        };
        agent.remember(sample, &decision);
    }
    let config = agent.config().clone();
    if config.fit_reward_scale && !rewards.is_empty() {
        agent.set_normalizer(RewardNormalizer::fit(&rewards, config.reward_scale));
    }
    let mut steps = 0;
    let mut final_loss = None;
    if agent.buffered() >= config.batch_size {
        for _ in 0..config.offline_steps() {
            final_loss = Some(agent.train_step()?);
            steps += 1;
        }
    }
    log::debug!("pretrained {} on {samples} samples, {steps} steps", agent.name());
    Ok(PretrainReport {
        samples,
        steps,
        final_loss,
    })
}

/// Runs `epochs` decision epochs starting from the round-robin schedule.
pub fn run_online<A: SchedulingAgent + ?Sized>(
    env: &mut SchedulingEnv,
    agent: &mut A,
    epochs: usize,
    workload: &WorkloadSchedule,
) -> Result<EpisodeLog, AgentError> {
    let base = env.base_workload();
    let epsilon = agent.config().epsilon_schedule();
    let batch = agent.config().batch_size;
    let mut state = SystemState::new(
        round_robin_schedule(&env.spec, &env.cluster),
        workload.workload(&base, 0),
    );
    let mut log = EpisodeLog::default();
    for t in 0..epochs {
        let eps = epsilon.value(t);
        let decision = agent.decide(&state, eps)?;
        let measured = env.measure(&decision.schedule, &state.workload)?;
        let reward = reward_from_measurement(&measured);
        let next_state = SystemState::new(decision.schedule.clone(), workload.workload(&base, t + 1));
        let moved = schedule_diff(&state.schedule, &decision.schedule)?.len();
        agent.remember(
            TransitionSample {
                state: state.clone(),
                action: decision.schedule.clone(),
                reward,
                next_state: next_state.clone(),
            },
            &decision,
        );
        let loss = if agent.learns() && agent.buffered() >= batch {
            Some(agent.train_step()?)
        } else {
            None
        };
        log.records.push(EpochRecord {
            epoch: t,
            reward,
            epsilon: eps,
            moved_threads: moved,
            avg_time_seconds: measured.avg_tuple_processing_time,
            workload_multiplier: workload.multiplier(t),
            loss,
            action: decision.schedule,
        });
        state = next_state;
    }
    Ok(log)
}
