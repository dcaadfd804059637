mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use streamsched::agents::{
    actor_critic_select, actor_objective_gradient, critic_train_step, dqn_select, pretrain_offline,
    run_online, ActorCriticAgent, ActorCriticNets, AgentConfig, DqnAgent, ReplayBuffer,
    RewardNormalizer, SchedulingAgent, SchedulingEnv, TransitionSample, WorkloadSchedule,
};
use streamsched::knn::{k_nearest_actions, nearest_action, ProtoAction};
use streamsched::nn::{Activation, DenseNet, Layer};
use streamsched::topology::{round_robin_schedule, Grouping, ScheduleMatrix, SystemState};

use common::{chain, cluster, mean, stochastic};

fn linear(inputs: usize, outputs: usize, weights: Vec<f64>, bias: Vec<f64>) -> DenseNet {
    let mut layer = Layer::zeros(inputs, outputs, Activation::Identity);
    layer.weights = weights;
    layer.bias = bias;
    DenseNet::from_layers(vec![layer]).unwrap()
}

fn params(net: &DenseNet) -> Vec<f64> {
    net.layers()
        .iter()
        .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
        .collect()
}

fn param_mut(net: &mut DenseNet, mut idx: usize) -> &mut f64 {
    for layer in net.layers_mut() {
        let w = layer.weights.len();
        if idx < w {
            return &mut layer.weights[idx];
        }
        idx -= w;
        if idx < layer.bias.len() {
            return &mut layer.bias[idx];
        }
        idx -= layer.bias.len();
    }
    panic!("parameter index out of range")
}

fn objective(actor: &DenseNet, critic: &DenseNet, states: &[Vec<f64>]) -> f64 {
    let total: f64 = states
        .iter()
        .map(|s| {
            let mut input = s.clone();
            input.extend(actor.forward(s).unwrap());
            critic.forward(&input).unwrap()[0]
        })
        .sum();
    total / states.len() as f64
}

fn small_env(seed: u64) -> SchedulingEnv {
    let spec = chain(200.0, &[(1, 0.0005), (3, 0.003), (2, 0.001)], Grouping::Shuffle);
    SchedulingEnv::new(spec, cluster(2, 0.002, 4.0), stochastic(seed, 0.2, 0.5, 1))
}

fn quick_config(seed: u64) -> AgentConfig {
    AgentConfig {
        batch_size: 4,
        buffer_capacity: 50,
        k: 4,
        hidden: vec![8],
        gamma: 0.5,
        seed,
        ..AgentConfig::default()
    }
}

#[test]
fn actor_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let s_dim = rng.random_range(1..5);
        let a_dim = rng.random_range(1..5);
        let hidden = vec![rng.random_range(1..6)];
        let actor = DenseNet::random(s_dim, &hidden, a_dim, Activation::Tanh, Activation::UnitTanh, &mut rng);
        let critic = DenseNet::random(s_dim + a_dim, &hidden, 1, Activation::Tanh, Activation::Identity, &mut rng);
        let states: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..s_dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let (j, grads) = actor_objective_gradient(&actor, &critic, &states).unwrap();
        assert!((j - objective(&actor, &critic, &states)).abs() < 1e-12);
        let analytic: Vec<f64> = grads
            .weights
            .iter()
            .zip(&grads.bias)
            .flat_map(|(w, b)| w.iter().chain(b).copied())
            .collect();
        for (i, g) in analytic.iter().enumerate() {
            let mut plus = actor.clone();
            *param_mut(&mut plus, i) += h;
            let mut minus = actor.clone();
            *param_mut(&mut minus, i) -= h;
            let fd = (objective(&plus, &critic, &states) - objective(&minus, &critic, &states)) / (2.0 * h);
            let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    assert!(worst <= 1e-4, "worst relative error {worst}");
}

#[test]
fn scalar_actor_update_is_product_of_derivatives() {
    // a = w s + b, Q = c1 s + c2 a + d, so dJ/dw = c2 mean(s) and dJ/db = c2.
    let (w, b, c1, c2, d) = (0.7, -0.2, 0.3, -1.5, 0.4);
    let actor = linear(1, 1, vec![w], vec![b]);
    let critic = linear(2, 1, vec![c1, c2], vec![d]);
    let states = vec![vec![0.5], vec![-1.0], vec![2.0]];
    let mean_s = (0.5 - 1.0 + 2.0) / 3.0;
    let (j, grads) = actor_objective_gradient(&actor, &critic, &states).unwrap();
    let expected_j = c1 * mean_s + c2 * (w * mean_s + b) + d;
    assert!((j - expected_j).abs() < 1e-12);
    assert!((grads.weights[0][0] - c2 * mean_s).abs() < 1e-12);
    assert!((grads.bias[0][0] - c2).abs() < 1e-12);

    let lr = 0.1;
    let mut updated = actor.clone();
    updated
        .ascent_step(&grads, &streamsched::nn::SgdConfig { learning_rate: lr, batch_size: 3 })
        .unwrap();
    assert!((updated.layers()[0].weights[0] - (w + lr * c2 * mean_s)).abs() < 1e-12);
    assert!((updated.layers()[0].bias[0] - (b + lr * c2)).abs() < 1e-12);
}

#[test]
fn flat_critic_leaves_actor_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let actor = DenseNet::random(3, &[4], 2, Activation::Tanh, Activation::UnitTanh, &mut rng);
    // Critic weights on the action inputs are zero.
    let critic = linear(5, 1, vec![0.4, -0.3, 0.9, 0.0, 0.0], vec![0.1]);
    let states = vec![vec![0.1, 0.2, 0.3], vec![-0.5, 0.0, 0.5]];
    let (_, grads) = actor_objective_gradient(&actor, &critic, &states).unwrap();
    assert_eq!(grads.max_abs(), 0.0);
    let mut updated = actor.clone();
    updated
        .ascent_step(&grads, &streamsched::nn::SgdConfig { learning_rate: 0.5, batch_size: 2 })
        .unwrap();
    assert_eq!(updated, actor);
}

#[test]
fn soft_update_moves_targets_by_at_most_tau() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let online = DenseNet::random(5, &[7, 3], 2, Activation::Tanh, Activation::Identity, &mut rng);
        let old = DenseNet::random(5, &[7, 3], 2, Activation::Tanh, Activation::Identity, &mut rng);
        let mut target = old.clone();
        target.soft_update(&online, 0.01).unwrap();
        let moved = params(&target)
            .iter()
            .zip(params(&old))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let gap = params(&online)
            .iter()
            .zip(params(&old))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(moved <= 0.01 * gap + 1e-15);
    }
}

#[test]
fn replay_draws_are_uniform() {
    let mut buffer = ReplayBuffer::new(100);
    for i in 0..100usize {
        buffer.push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let draws = 10_000;
    let mut counts = [0usize; 100];
    for _ in 0..draws {
        let batch = buffer.sample(10, &mut rng).unwrap();
        for &&i in &batch {
            counts[i] += 1;
        }
    }
    let p = 0.1;
    let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
    for c in counts {
        assert!((c as f64 - draws as f64 * p).abs() <= 3.0 * sigma, "count {c}");
    }
}

#[test]
fn myopic_critic_regresses_on_immediate_rewards() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut nets = ActorCriticNets::new(5, 4, &[3], &mut rng);
    // Zero critic output makes the loss the mean squared target.
    for layer in nets.critic.layers_mut() {
        layer.weights.fill(0.0);
        layer.bias.fill(0.0);
    }
    let config = AgentConfig {
        gamma: 0.0,
        batch_size: 2,
        ..AgentConfig::default()
    };
    let schedule = ScheduleMatrix::from_assignment(vec![0, 1], 2).unwrap();
    let state = SystemState::new(schedule.clone(), vec![100.0]);
    let sample = |reward| TransitionSample {
        state: state.clone(),
        action: schedule.clone(),
        reward,
        next_state: state.clone(),
    };
    let a = sample(-2.0);
    let b = sample(-0.5);
    let normalizer = RewardNormalizer { shift: 0.0, scale: 1.0 };
    let loss = critic_train_step(&[&a, &b], &mut nets, &config, &normalizer).unwrap();
    assert!((loss - (4.0 + 0.25) / 2.0).abs() < 1e-12);
}

fn two_by_two_state() -> SystemState {
    SystemState::new(ScheduleMatrix::from_assignment(vec![0, 1], 2).unwrap(), vec![0.0])
}

/// Actor whose output is the fixed proto-action `proto`, whatever the state.
fn constant_actor(state_len: usize, proto: &[f64]) -> DenseNet {
    linear(state_len, proto.len(), vec![0.0; state_len * proto.len()], proto.to_vec())
}

#[test]
fn scripted_critic_picks_second_candidate() {
    let state = two_by_two_state();
    let proto_entries = [0.9, 0.1, 0.7, 0.2];
    let actor = constant_actor(5, &proto_entries);
    let knn = k_nearest_actions(&ProtoAction::new(2, 2, proto_entries.to_vec()).unwrap(), 3).unwrap();
    let preferred = knn.actions[1].to_flat();
    let mut weights = vec![0.0; 5];
    weights.extend(&preferred);
    let critic = linear(9, 1, weights, vec![0.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let sel = actor_critic_select(&state, &actor, &critic, 3, 0.0, 1.0, &mut rng).unwrap();
    assert_eq!(sel.chosen, 1);
    assert_eq!(sel.action, knn.actions[1]);

    let flat = linear(9, 1, vec![0.0; 9], vec![0.3]);
    let sel = actor_critic_select(&state, &actor, &flat, 3, 0.0, 1.0, &mut rng).unwrap();
    assert_eq!(sel.chosen, 0);
    assert_eq!(sel.action, knn.actions[0]);
}

#[test]
fn single_candidate_is_nearest_action() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let state = SystemState::new(
        ScheduleMatrix::from_assignment(vec![0, 2, 1, 1], 3).unwrap(),
        vec![250.0],
    );
    for _ in 0..20 {
        let nets = ActorCriticNets::new(13, 12, &[6], &mut rng);
        let proto = ProtoAction::new(4, 3, nets.actor.forward(&state.encode(1000.0)).unwrap()).unwrap();
        let sel = actor_critic_select(&state, &nets.actor, &nets.critic, 1, 0.0, 1000.0, &mut rng).unwrap();
        assert_eq!(sel.action, nearest_action(&proto));
    }
}

#[test]
fn selection_dominates_every_candidate() {
    let mut agent = ActorCriticAgent::new(quick_config(3), 6, 2, 1).unwrap();
    let state = SystemState::new(
        ScheduleMatrix::from_assignment(vec![0, 1, 0, 1, 0, 1], 2).unwrap(),
        vec![200.0],
    );
    for t in 0..50 {
        let sel = agent.select(&state, (t % 5) as f64 / 4.0).unwrap();
        assert_eq!(sel.scores.len(), 4);
        assert!(sel.scores.iter().all(|s| *s <= sel.scores[sel.chosen]));
    }
}

#[test]
fn dqn_scores_every_single_move() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let assignment: Vec<usize> = (0..10).map(|i| i % 4).collect();
    let schedule = ScheduleMatrix::from_assignment(assignment, 4).unwrap();
    let state = SystemState::new(schedule.clone(), vec![100.0]);
    let agent = DqnAgent::new(AgentConfig::default(), 10, 4, 1).unwrap();
    let choice = dqn_select(&state, &agent.q_net, 0.0, 1000.0, &mut rng).unwrap();
    assert_eq!(choice.q_values.len(), 40);
    let mut explored = [0usize; 40];
    for _ in 0..8000 {
        let c = dqn_select(&state, &agent.q_net, 1.0, 1000.0, &mut rng).unwrap();
        assert!(c.explored);
        assert_eq!(c.index, c.thread * 4 + c.machine);
        let next = c.apply(&schedule);
        let changed = (0..10)
            .filter(|&i| next.machine_of(i) != schedule.machine_of(i))
            .count();
        assert!(changed <= 1);
        assert_eq!(next.machine_of(c.thread), c.machine);
        explored[c.index] += 1;
    }
    let sigma = (8000.0 / 40.0 * (1.0 - 1.0 / 40.0_f64)).sqrt();
    assert!(explored.iter().all(|&c| (c as f64 - 200.0).abs() <= 4.0 * sigma));
}

#[test]
fn empty_pretraining_changes_nothing() {
    let mut env = small_env(1);
    let mut agent = ActorCriticAgent::new(quick_config(1), env.threads(), env.machines(), 1).unwrap();
    let before = agent.nets.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let report = pretrain_offline(&mut env, &mut agent, 0, &mut rng).unwrap();
    assert_eq!(report.steps, 0);
    assert_eq!(agent.buffer.len(), 0);
    assert_eq!(agent.nets.actor, before.actor);
    assert_eq!(agent.nets.critic, before.critic);
    assert_eq!(env.measurements(), 0);
}

#[test]
fn pretraining_actions_are_feasible() {
    let mut env = small_env(2);
    let mut agent = ActorCriticAgent::new(quick_config(2), env.threads(), env.machines(), 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let report = pretrain_offline(&mut env, &mut agent, 12, &mut rng).unwrap();
    assert_eq!(report.samples, 12);
    assert_eq!(agent.buffer.len(), 12);
    for s in agent.buffer.iter() {
        assert!(s.action.to_rows().iter().all(|r| r.iter().map(|&x| x as u32).sum::<u32>() == 1));
        assert!(s.reward <= 0.0);
    }
}

#[test]
fn zero_epochs_give_empty_log() {
    let mut env = small_env(3);
    let mut agent = ActorCriticAgent::new(quick_config(3), env.threads(), env.machines(), 1).unwrap();
    let log = run_online(&mut env, &mut agent, 0, &WorkloadSchedule::constant()).unwrap();
    assert!(log.is_empty());
}

#[test]
fn online_run_records_workload_step_and_nonpositive_rewards() {
    let mut env = small_env(4);
    let mut agent = DqnAgent::new(quick_config(4), env.threads(), env.machines(), 1).unwrap();
    let log = run_online(&mut env, &mut agent, 12, &WorkloadSchedule::step_at(6, 1.5)).unwrap();
    assert_eq!(log.len(), 12);
    for r in &log.records {
        assert!(r.reward <= 0.0);
        assert_eq!(r.reward, -r.avg_time_seconds);
        let expected = if r.epoch < 6 { 1.0 } else { 1.5 };
        assert_eq!(r.workload_multiplier, expected);
        assert!(r.moved_threads <= 1);
    }
    assert!(log.records[0].loss.is_none());
    assert!(log.records[11].loss.is_some());
    let start = round_robin_schedule(&env.spec, &env.cluster);
    assert!(log.records[0].action.assignment().iter().zip(start.assignment()).filter(|(a, b)| a != b).count() <= 1);
}

#[test]
fn checkpoint_restores_agent() {
    let dir = tempfile::tempdir().unwrap();
    let agent = ActorCriticAgent::new(quick_config(9), 6, 2, 1).unwrap();
    let path = dir.path().join("agent.json");
    agent.checkpoint().save(&path).unwrap();
    let restored = streamsched::agents::AgentCheckpoint::load(&path)
        .unwrap()
        .into_actor_critic()
        .unwrap();
    assert_eq!(restored.nets.actor, agent.nets.actor);
    assert_eq!(restored.nets.critic_target, agent.nets.critic_target);
    assert_eq!(restored.config, agent.config);
    assert!(streamsched::agents::AgentCheckpoint::load(&path)
        .unwrap()
        .into_dqn()
        .is_err());
}

/// Late rewards beat early ones once exploration has decayed, in most seeds.
#[test]
fn actor_critic_learns_on_a_small_scenario() {
    let mut wins = 0;
    for seed in 1..=5 {
        let spec = chain(300.0, &[(1, 0.0005), (4, 0.003), (3, 0.001)], Grouping::Shuffle);
        let mut env = SchedulingEnv::new(spec, cluster(3, 0.002, 4.0), stochastic(seed, 0.2, 1.0, 1));
        let config = AgentConfig {
            gamma: 0.1,
            batch_size: 16,
            buffer_capacity: 300,
            k: 8,
            hidden: vec![16],
            actor_learning_rate: 0.01,
            critic_learning_rate: 0.03,
            seed,
            ..AgentConfig::default()
        };
        let mut agent = ActorCriticAgent::new(config, env.threads(), env.machines(), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        pretrain_offline(&mut env, &mut agent, 150, &mut rng).unwrap();
        let epochs = 200;
        agent.config.epochs = epochs;
        let log = run_online(&mut env, &mut agent, epochs, &WorkloadSchedule::constant()).unwrap();
        let rewards = log.rewards();
        let tenth = epochs / 10;
        if mean(&rewards[epochs - tenth..]) > mean(&rewards[..tenth]) {
            wins += 1;
        }
    }
    assert!(wins >= 3, "{wins}/5 seeds improved");
}
