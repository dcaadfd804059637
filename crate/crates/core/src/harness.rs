//! Experiment runner: scenario catalog, per-seed runs, metrics files and the
//! reporting transforms applied to reward traces.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{
    pretrain_offline, run_online, ActorCriticAgent, AgentConfig, AgentError, DqnAgent,
    EpisodeLog, FixedScheduleAgent, PretrainReport, SchedulingAgent, SchedulingEnv,
    WorkloadSchedule,
};
use crate::baseline::{baseline_schedule, BaselineError};
use crate::sim::SimConfig;
use crate::topology::{ClusterSpec, TopologyError, TopologySpec};

/// Fraction of an episode, counted from the end, whose mean is reported as
/// the stabilized value.
pub const STABILIZED_TAIL: f64 = 0.25;

const CATALOG: [(&str, &str); 5] = [
    (
        "continuous-queries-small",
        include_str!("../scenarios/continuous-queries-small.json"),
    ),
    (
        "continuous-queries-medium",
        include_str!("../scenarios/continuous-queries-medium.json"),
    ),
    (
        "continuous-queries-large",
        include_str!("../scenarios/continuous-queries-large.json"),
    ),
    ("log-stream", include_str!("../scenarios/log-stream.json")),
    ("word-count", include_str!("../scenarios/word-count.json")),
];

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("unknown scenario `{0}`: not in the catalog and no such file")]
    UnknownScenario(String),
    #[error("invalid scenario: {0}")]
    Topology(#[from] TopologyError),
    #[error("smoothing window {window} must be odd and between 1 and the series length {len}")]
    BadWindow { window: usize, len: usize },
    #[error("runs are not comparable: {0}")]
    ScenarioMismatch(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    /// Errors caused by the request itself rather than by running it.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            HarnessError::Config(_)
                | HarnessError::UnknownScenario(_)
                | HarnessError::Topology(_)
                | HarnessError::BadWindow { .. }
                | HarnessError::Agent(AgentError::InvalidConfig(_))
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub topology: TopologySpec,
    pub cluster: ClusterSpec,
    #[serde(default)]
    pub sim: SimConfig,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), HarnessError> {
        self.topology.validate()?;
        self.cluster.validate()?;
        self.sim
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn threads(&self) -> usize {
        self.topology.total_executors()
    }

    pub fn machines(&self) -> usize {
        self.cluster.machine_count
    }
}

pub fn catalog_names() -> Vec<&'static str> {
    CATALOG.iter().map(|(n, _)| *n).collect()
}

/// Resolves a catalog name or a path to a scenario JSON file.
pub fn load_scenario(name_or_path: &str) -> Result<Scenario, HarnessError> {
    let text = match CATALOG.iter().find(|(n, _)| *n == name_or_path) {
        Some((_, json)) => json.to_string(),
        None if Path::new(name_or_path).is_file() => std::fs::read_to_string(name_or_path)?,
        None => return Err(HarnessError::UnknownScenario(name_or_path.to_string())),
    };
    let scenario: Scenario = serde_json::from_str(&text)
        .map_err(|e| HarnessError::Config(format!("scenario `{name_or_path}`: {e}")))?;
    scenario.validate()?;
    Ok(scenario)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchedulerKind {
    RoundRobin,
    Random,
    Dqn,
    ActorCritic,
}

impl SchedulerKind {
    pub fn name(self) -> &'static str {
        match self {
            SchedulerKind::RoundRobin => "round-robin",
            SchedulerKind::Random => "random",
            SchedulerKind::Dqn => "dqn",
            SchedulerKind::ActorCritic => "actor-critic",
        }
    }

    pub fn is_learning(self) -> bool {
        matches!(self, SchedulerKind::Dqn | SchedulerKind::ActorCritic)
    }
}

impl std::str::FromStr for SchedulerKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "round-robin" => Ok(SchedulerKind::RoundRobin),
            "random" => Ok(SchedulerKind::Random),
            "dqn" => Ok(SchedulerKind::Dqn),
            "actor-critic" => Ok(SchedulerKind::ActorCritic),
            other => Err(HarnessError::Config(format!(
                "unknown scheduler `{other}` (expected round-robin, random, dqn or actor-critic)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Catalog name or path to a scenario JSON file.
    pub scenario: String,
    pub scheduler: SchedulerKind,
    pub agent: AgentConfig,
    /// Overrides the scenario's own simulator settings.
    pub sim: Option<SimConfig>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub smoothing_window: usize,
    pub workload: WorkloadSchedule,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: "continuous-queries-small".to_string(),
            scheduler: SchedulerKind::RoundRobin,
            agent: AgentConfig::default(),
            sim: None,
            seeds: vec![0],
            output_dir: PathBuf::from("runs"),
            smoothing_window: 5,
            workload: WorkloadSchedule::constant(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
    }

    /// Checks the config and resolves its scenario.
    pub fn validate(&self) -> Result<Scenario, HarnessError> {
        if self.seeds.is_empty() {
            return Err(HarnessError::Config("seeds must not be empty".into()));
        }
        if self.smoothing_window == 0 || self.smoothing_window.is_multiple_of(2) {
            return Err(HarnessError::Config(
                "smoothing_window must be a positive odd integer".into(),
            ));
        }
        if self.agent.epochs == 0 {
            return Err(HarnessError::Config("epochs must be at least 1".into()));
        }
        if self.workload.steps.iter().any(|s| !(s.multiplier > 0.0)) {
            return Err(HarnessError::Config(
                "workload multipliers must be positive".into(),
            ));
        }
        self.agent.validate()?;
        let mut scenario = load_scenario(&self.scenario)?;
        if let Some(sim) = &self.sim {
            sim.validate()
                .map_err(|e| HarnessError::Config(e.to_string()))?;
            scenario.sim = sim.clone();
        }
        Ok(scenario)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    /// Mean of the last quarter of the episode's measurements, in seconds.
    pub stabilized_avg_time: f64,
    pub stabilized_reward: f64,
    pub epochs: usize,
    pub measurements: u64,
    pub pretrain: Option<PretrainReport>,
    pub episode_csv: String,
    pub checkpoint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub scenario: String,
    pub scheduler: SchedulerKind,
    pub threads: usize,
    pub machines: usize,
    pub sim: SimConfig,
    pub workload: WorkloadSchedule,
    pub smoothing_window: usize,
    /// How the stabilized values were taken.
    pub stabilized_definition: String,
    pub runs: Vec<SeedSummary>,
    /// Mean over seeds of the stabilized average tuple processing time.
    pub stabilized_avg_time: f64,
}

impl ExperimentSummary {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Mean of the last quarter (at least one element) of `series`.
pub fn stabilized_mean(series: &[f64]) -> Option<f64> {
    if series.is_empty() {
        return None;
    }
    let tail = ((series.len() as f64 * STABILIZED_TAIL).ceil() as usize).max(1);
    let slice = &series[series.len() - tail..];
    Some(slice.iter().sum::<f64>() / slice.len() as f64)
}

/// One seed: pretrain (for learning agents) then the online episode.
pub fn run_seed(
    scenario: &Scenario,
    scheduler: SchedulerKind,
    agent_config: &AgentConfig,
    workload: &WorkloadSchedule,
    seed: u64,
) -> Result<(EpisodeLog, Box<dyn SchedulingAgent>, Option<PretrainReport>, u64), HarnessError>
{
    let mut env = SchedulingEnv::new(
        scenario.topology.clone(),
        scenario.cluster.clone(),
        scenario.sim.with_seed(seed),
    );
    let config = AgentConfig {
        seed,
        ..agent_config.clone()
    };
    let (n, m) = (scenario.threads(), scenario.machines());
    let sources = scenario.topology.sources().len();
    let mut agent: Box<dyn SchedulingAgent> = match scheduler {
        SchedulerKind::ActorCritic => Box::new(ActorCriticAgent::new(config, n, m, sources)?),
        SchedulerKind::Dqn => Box::new(DqnAgent::new(config, n, m, sources)?),
        SchedulerKind::RoundRobin | SchedulerKind::Random => {
            let schedule =
                baseline_schedule(scheduler.name(), &scenario.topology, &scenario.cluster, seed)?;
            Box::new(FixedScheduleAgent::new(scheduler.name(), schedule, config))
        }
    };
    let pretrain = if scheduler.is_learning() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0FF1_1E5A_3B1E_0000);
        let samples = agent.config().pretrain_samples;
        Some(pretrain_offline(&mut env, agent.as_mut(), samples, &mut rng)?)
    } else {
        None
    };
    let epochs = agent.config().epochs;
    let log = run_online(&mut env, agent.as_mut(), epochs, workload)?;
    Ok((log, agent, pretrain, env.measurements()))
}

/// Runs every seed and writes `episode_seed<S>.csv`,
/// `checkpoint_seed<S>.json` and `summary.json` into the output directory.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentSummary, HarnessError> {
    let scenario = config.validate()?;
    std::fs::create_dir_all(&config.output_dir)?;
    let mut runs = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let (log, agent, pretrain, measurements) = run_seed(
            &scenario,
            config.scheduler,
            &config.agent,
            &config.workload,
            seed,
        )?;
        let episode_csv = format!("episode_seed{seed}.csv");
        log.write_csv(BufWriter::new(File::create(
            config.output_dir.join(&episode_csv),
        )?))?;
        let checkpoint = format!("checkpoint_seed{seed}.json");
        agent.checkpoint().save(config.output_dir.join(&checkpoint))?;
        let stabilized_avg_time = stabilized_mean(&log.avg_times()).unwrap_or(f64::NAN);
        log::info!(
            "{} on {} seed {seed}: stabilized {:.4} ms",
            config.scheduler.name(),
            scenario.name,
            stabilized_avg_time * 1e3
        );
        runs.push(SeedSummary {
            seed,
            stabilized_avg_time,
            stabilized_reward: stabilized_mean(&log.rewards()).unwrap_or(f64::NAN),
            epochs: log.len(),
            measurements,
            pretrain,
            episode_csv,
            checkpoint,
        });
    }
    let mean = runs.iter().map(|r| r.stabilized_avg_time).sum::<f64>() / runs.len() as f64;
    let summary = ExperimentSummary {
        scenario: scenario.name.clone(),
        scheduler: config.scheduler,
        threads: scenario.threads(),
        machines: scenario.machines(),
        sim: scenario.sim.clone(),
        workload: config.workload.clone(),
        smoothing_window: config.smoothing_window,
        stabilized_definition: format!(
            "mean of the last {:.0}% of online epochs",
            STABILIZED_TAIL * 100.0
        ),
        runs,
        stabilized_avg_time: mean,
    };
    std::fs::write(
        config.output_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedSeries {
    pub values: Vec<f64>,
    /// The series was constant, so every value was mapped to zero.
    pub degenerate: bool,
}

/// Min-max scaling into [0, 1]. A constant series maps to zeros.
pub fn normalize_rewards(series: &[f64]) -> NormalizedSeries {
    let lo = series.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = series.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if series.is_empty() || !(hi > lo) {
        if !series.is_empty() {
            log::warn!("reward series has a degenerate range; normalized to zeros");
        }
        return NormalizedSeries {
            values: vec![0.0; series.len()],
            degenerate: !series.is_empty(),
        };
    }
    let span = hi - lo;
    NormalizedSeries {
        values: series
            .iter()
            .map(|r| ((r - lo) / span).clamp(0.0, 1.0))
            .collect(),
        degenerate: false,
    }
}

/// Moving average of width `window` run forward and then backward, so the
/// result has no phase shift. Ends are mirror-padded by `window - 1`.
pub fn smooth_zero_phase(series: &[f64], window: usize) -> Result<Vec<f64>, HarnessError> {
    let len = series.len();
    if window == 0 || window.is_multiple_of(2) || window > len {
        return Err(HarnessError::BadWindow { window, len });
    }
    if window == 1 {
        return Ok(series.to_vec());
    }
    let pad = window - 1;
    let mirror = |i: isize| -> f64 {
        let n = len as isize;
        let j = if i < 0 {
            -i
        } else if i >= n {
            2 * (n - 1) - i
        } else {
            i
        };
        series[j as usize]
    };
    let padded: Vec<f64> = (-(pad as isize)..(len + pad) as isize)
        .map(mirror)
        .collect();
    let w = window as f64;
    let forward: Vec<f64> = (0..padded.len())
        .map(|i| {
            let lo = i.saturating_sub(window - 1);
            padded[lo..=i].iter().sum::<f64>() / w
        })
        .collect();
    let backward: Vec<f64> = (0..padded.len())
        .map(|i| {
            let hi = (i + window).min(padded.len());
            forward[i..hi].iter().sum::<f64>() / w
        })
        .collect();
    Ok(backward[pad..pad + len].to_vec())
}

/// Relative reduction of `time_a` against `time_b`.
pub fn improvement(time_a: f64, time_b: f64) -> f64 {
    (time_b - time_a) / time_b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub scenario: String,
    pub scheduler_a: SchedulerKind,
    pub scheduler_b: SchedulerKind,
    pub time_a: f64,
    pub time_b: f64,
    /// `(time_b - time_a) / time_b`; positive when run A is faster.
    pub improvement: f64,
}

pub fn compare_report(
    a: &ExperimentSummary,
    b: &ExperimentSummary,
) -> Result<Comparison, HarnessError> {
    if a.scenario != b.scenario {
        return Err(HarnessError::ScenarioMismatch(format!(
            "scenario `{}` vs `{}`",
            a.scenario, b.scenario
        )));
    }
    if a.sim != b.sim {
        return Err(HarnessError::ScenarioMismatch(
            "simulator settings differ".into(),
        ));
    }
    if a.workload != b.workload {
        return Err(HarnessError::ScenarioMismatch(
            "workload schedules differ".into(),
        ));
    }
    Ok(Comparison {
        scenario: a.scenario.clone(),
        scheduler_a: a.scheduler,
        scheduler_b: b.scheduler,
        time_a: a.stabilized_avg_time,
        time_b: b.stabilized_avg_time,
        improvement: improvement(a.stabilized_avg_time, b.stabilized_avg_time),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub epoch: usize,
    pub reward: f64,
    pub normalized: f64,
    pub smoothed: f64,
}

/// Normalized and smoothed reward trace of one episode CSV. The window is
/// shrunk to the largest odd value that fits short episodes.
pub fn report_episode(
    episode_csv: impl AsRef<Path>,
    window: usize,
) -> Result<Vec<ReportRow>, HarnessError> {
    let mut reader = csv::Reader::from_path(episode_csv)?;
    let mut epochs = Vec::new();
    let mut rewards = Vec::new();
    for row in reader.deserialize() {
        let row: EpisodeRow = row?;
        epochs.push(row.epoch);
        rewards.push(row.reward);
    }
    if rewards.is_empty() {
        return Ok(Vec::new());
    }
    let normalized = normalize_rewards(&rewards).values;
    let mut w = window.min(rewards.len());
    if w % 2 == 0 {
        w -= 1;
    }
    let smoothed = smooth_zero_phase(&normalized, w)?;
    Ok((0..rewards.len())
        .map(|i| ReportRow {
            epoch: epochs[i],
            reward: rewards[i],
            normalized: normalized[i],
            smoothed: smoothed[i],
        })
        .collect())
}

/// Writes `report_seed<S>.csv` next to each episode of a finished run.
pub fn write_reports(dir: impl AsRef<Path>) -> Result<ExperimentSummary, HarnessError> {
    let dir = dir.as_ref();
    let summary = ExperimentSummary::load(dir.join("summary.json"))?;
    for run in &summary.runs {
        let rows = report_episode(dir.join(&run.episode_csv), summary.smoothing_window)?;
        let mut w = csv::Writer::from_path(dir.join(format!("report_seed{}.csv", run.seed)))?;
        for row in rows {
            w.serialize(row)?;
        }
        w.flush()?;
    }
    Ok(summary)
}

#[derive(Debug, Deserialize)]
struct EpisodeRow {
    epoch: usize,
    reward: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_scenarios_load() {
        for name in catalog_names() {
            let s = load_scenario(name).unwrap();
            assert_eq!(s.name, name);
        }
        let large = load_scenario("continuous-queries-large").unwrap();
        assert_eq!((large.threads(), large.machines()), (100, 10));
        let small = load_scenario("continuous-queries-small").unwrap();
        assert_eq!((small.threads(), small.machines()), (20, 4));
    }

    #[test]
    fn unknown_scenario() {
        assert!(matches!(
            load_scenario("no-such-scenario"),
            Err(HarnessError::UnknownScenario(_))
        ));
    }

    #[test]
    fn normalize_formula() {
        let n = normalize_rewards(&[-4.0, -2.0, -1.0]);
        assert_eq!(n.values[0], 0.0);
        assert!((n.values[1] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(n.values[2], 1.0);
        assert!(!n.degenerate);
    }

    #[test]
    fn normalize_constant() {
        let n = normalize_rewards(&[3.0; 4]);
        assert_eq!(n.values, vec![0.0; 4]);
        assert!(n.degenerate);
    }

    #[test]
    fn smoothing_windows() {
        let x = [1.0, 5.0, 2.0, 8.0];
        assert_eq!(smooth_zero_phase(&x, 1).unwrap(), x.to_vec());
        assert!(matches!(smooth_zero_phase(&x, 2), Err(HarnessError::BadWindow { .. })));
        assert!(matches!(smooth_zero_phase(&x, 5), Err(HarnessError::BadWindow { .. })));
        assert!(matches!(smooth_zero_phase(&x, 0), Err(HarnessError::BadWindow { .. })));
        let c = smooth_zero_phase(&[2.5; 9], 3).unwrap();
        assert!(c.iter().all(|v| (v - 2.5).abs() < 1e-15));
    }

    #[test]
    fn improvement_arithmetic() {
        assert!((improvement(1.33, 1.96) - 0.3214).abs() < 1e-4);
        assert_eq!(improvement(2.0, 2.0), 0.0);
    }

    #[test]
    fn stabilized_tail() {
        assert_eq!(stabilized_mean(&[9.0, 9.0, 9.0, 1.0]), Some(1.0));
        assert_eq!(stabilized_mean(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]), Some(7.5));
        assert_eq!(stabilized_mean(&[]), None);
    }

    #[test]
    fn scheduler_names_round_trip() {
        for kind in [
            SchedulerKind::RoundRobin,
            SchedulerKind::Random,
            SchedulerKind::Dqn,
            SchedulerKind::ActorCritic,
        ] {
            assert_eq!(kind.name().parse::<SchedulerKind>().unwrap(), kind);
        }
        assert!("t-storm".parse::<SchedulerKind>().is_err());
    }
}
