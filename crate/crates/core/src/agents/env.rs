use serde::{Deserialize, Serialize};

use crate::sim::{measure_after_stabilization, SimConfig, SimError, SimResult};
use crate::topology::{ClusterSpec, ScheduleMatrix, TopologySpec};

/// Reward for one deployment: minus the average tuple processing time, in
/// seconds.
pub fn reward_from_measurement(result: &SimResult) -> f64 {
    -result.avg_tuple_processing_time
}

/// The simulated cluster an agent controls. Every measurement draws a fresh
/// simulator seed from `sim.seed` and a running counter, so a sequence of
/// deployments is reproducible.
#[derive(Debug, Clone)]
pub struct SchedulingEnv {
    pub spec: TopologySpec,
    pub cluster: ClusterSpec,
    pub sim: SimConfig,
    measurements: u64,
}

impl SchedulingEnv {
    pub fn new(spec: TopologySpec, cluster: ClusterSpec, sim: SimConfig) -> Self {
        Self {
            spec,
            cluster,
            sim,
            measurements: 0,
        }
    }

    pub fn threads(&self) -> usize {
        self.spec.total_executors()
    }

    pub fn machines(&self) -> usize {
        self.cluster.machine_count
    }

    pub fn base_workload(&self) -> Vec<f64> {
        self.spec.workload()
    }

    pub fn measurements(&self) -> u64 {
        self.measurements
    }

    /// Deploys `schedule` under `workload` and measures it once stable.
    pub fn measure(
        &mut self,
        schedule: &ScheduleMatrix,
        workload: &[f64],
    ) -> Result<SimResult, SimError> {
        self.measurements += 1;
        let seed = self
            .sim
            .seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(self.measurements);
        let spec = self.spec.with_workload(workload);
        measure_after_stabilization(&spec, &self.cluster, schedule, &self.sim.with_seed(seed))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkloadStep {
    /// First epoch at which the multiplier applies.
    pub epoch: usize,
    pub multiplier: f64,
}

/// Piecewise-constant scaling of the base source rates over epochs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSchedule {
    pub steps: Vec<WorkloadStep>,
}

impl WorkloadSchedule {
    pub fn constant() -> Self {
        Self::default()
    }

    /// Multiply every source rate by `multiplier` from `epoch` on.
    pub fn step_at(epoch: usize, multiplier: f64) -> Self {
        Self {
            steps: vec![WorkloadStep { epoch, multiplier }],
        }
    }

    pub fn multiplier(&self, epoch: usize) -> f64 {
        self.steps
            .iter()
            .filter(|s| s.epoch <= epoch)
            .max_by_key(|s| s.epoch)
            .map_or(1.0, |s| s.multiplier)
    }

    pub fn workload(&self, base: &[f64], epoch: usize) -> Vec<f64> {
        let m = self.multiplier(epoch);
        base.iter().map(|w| w * m).collect()
    }
}
