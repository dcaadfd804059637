//! Non-learning comparators: round-robin and uniform-random placement.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::{measure_after_stabilization, SimConfig, SimError};
use crate::topology::{round_robin_schedule, ClusterSpec, ScheduleMatrix, TopologySpec};

pub const BASELINE_SCHEDULERS: [&str; 2] = ["round-robin", "random"];

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("unknown scheduler `{0}` (expected one of: round-robin, random)")]
    UnknownScheduler(String),
    #[error("no repetitions requested")]
    NoRepetitions,
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Places every thread on a machine drawn uniformly at random.
pub fn random_schedule<R: Rng + ?Sized>(
    spec: &TopologySpec,
    cluster: &ClusterSpec,
    rng: &mut R,
) -> ScheduleMatrix {
    let m = cluster.machine_count;
    let assignment = (0..spec.total_executors())
        .map(|_| rng.random_range(0..m))
        .collect();
    ScheduleMatrix::from_assignment(assignment, m).expect("machine index in range")
}

/// Schedule produced by a named baseline for one repetition seed.
pub fn baseline_schedule(
    name: &str,
    spec: &TopologySpec,
    cluster: &ClusterSpec,
    seed: u64,
) -> Result<ScheduleMatrix, BaselineError> {
    match name {
        "round-robin" => Ok(round_robin_schedule(spec, cluster)),
        "random" => Ok(random_schedule(
            spec,
            cluster,
            &mut ChaCha8Rng::seed_from_u64(seed),
        )),
        other => Err(BaselineError::UnknownScheduler(other.to_string())),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulerSummary {
    pub scheduler: String,
    pub seeds: Vec<u64>,
    /// Average tuple processing time per repetition, in seconds.
    pub samples: Vec<f64>,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    /// Population variance of `samples`.
    pub variance: f64,
}

impl SchedulerSummary {
    pub fn from_samples(scheduler: &str, seeds: Vec<u64>, samples: Vec<f64>) -> Self {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let variance = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
        Self {
            scheduler: scheduler.to_string(),
            min: samples.iter().copied().fold(f64::INFINITY, f64::min),
            max: samples.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            seeds,
            samples,
            mean,
            variance,
        }
    }
}

/// Deploys the named baseline once per seed and measures it; the seed drives
/// both the schedule (for `random`) and the simulator.
pub fn evaluate_scheduler(
    name: &str,
    spec: &TopologySpec,
    cluster: &ClusterSpec,
    sim_config: &SimConfig,
    seeds: &[u64],
) -> Result<SchedulerSummary, BaselineError> {
    if !BASELINE_SCHEDULERS.contains(&name) {
        return Err(BaselineError::UnknownScheduler(name.to_string()));
    }
    if seeds.is_empty() {
        return Err(BaselineError::NoRepetitions);
    }
    let mut samples = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let schedule = baseline_schedule(name, spec, cluster, seed)?;
        let result = measure_after_stabilization(spec, cluster, &schedule, &sim_config.with_seed(seed))?;
        samples.push(result.avg_tuple_processing_time);
    }
    Ok(SchedulerSummary::from_samples(name, seeds.to_vec(), samples))
}
