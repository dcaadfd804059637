#![allow(dead_code)]

use std::collections::BTreeMap;

use streamsched::sim::{ArrivalProcess, ServiceDistribution, SimConfig};
use streamsched::topology::{
    ClusterSpec, Component, ComponentKind, Edge, Grouping, TopologySpec,
};

/// Linear chain `c0 -> c1 -> ...`; `c0` is the source. Each stage is
/// `(executors, mean service seconds)`.
pub fn chain(rate: f64, stages: &[(usize, f64)], grouping: Grouping) -> TopologySpec {
    let components: Vec<Component> = stages
        .iter()
        .enumerate()
        .map(|(i, &(n, s))| Component {
            id: format!("c{i}"),
            kind: if i == 0 {
                ComponentKind::Source
            } else {
                ComponentKind::ProcessingUnit
            },
            executor_count: n,
            service_time_mean: s,
        })
        .collect();
    let edges = (1..stages.len())
        .map(|i| Edge {
            from: format!("c{}", i - 1),
            to: format!("c{i}"),
            grouping,
        })
        .collect();
    TopologySpec {
        components,
        edges,
        source_rates: BTreeMap::from([("c0".to_string(), rate)]),
    }
}

pub fn cluster(machines: usize, delay: f64, capacity: f64) -> ClusterSpec {
    ClusterSpec {
        machine_count: machines,
        slots_per_machine: 10,
        intra_machine_delay: 0.0,
        inter_machine_delay: delay,
        machine_capacity: capacity,
        max_threads_per_process: None,
    }
}

pub fn deterministic(warmup: f64, duration: f64, samples: usize) -> SimConfig {
    SimConfig {
        seed: 1,
        warmup_duration: warmup,
        measure_duration: duration,
        measurement_samples: samples,
        sample_interval: duration,
        service_time_distribution: ServiceDistribution::Deterministic,
        arrival_process: ArrivalProcess::Periodic,
        ..SimConfig::default()
    }
}

pub fn stochastic(seed: u64, warmup: f64, duration: f64, samples: usize) -> SimConfig {
    SimConfig {
        seed,
        warmup_duration: warmup,
        measure_duration: duration,
        measurement_samples: samples,
        sample_interval: duration,
        service_time_distribution: ServiceDistribution::Exponential,
        arrival_process: ArrivalProcess::Poisson,
        ..SimConfig::default()
    }
}

/// Every assignment of `threads` threads to `machines` machines.
pub fn all_assignments(threads: usize, machines: usize) -> Vec<Vec<usize>> {
    let total = machines.pow(threads as u32);
    (0..total)
        .map(|mut code| {
            (0..threads)
                .map(|_| {
                    let m = code % machines;
                    code /= machines;
                    m
                })
                .collect::<Vec<_>>()
                .into_iter()
                .rev()
                .collect()
        })
        .collect()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64
}
