//! Discrete-event simulation of a topology deployed on a cluster.
//!
//! Every executor is a FIFO server. Executors on the same machine share
//! the machine's capacity: up to `machine_capacity` busy executors run at
//! full speed, beyond that each busy executor progresses at
//! `machine_capacity / busy` (processor sharing). Tuples crossing machines
//! pay `inter_machine_delay`; executors of one topology on one machine live
//! in a single worker process, so co-located hops are free.
//!
//! A root tuple is complete once every tuple derived from it has been
//! processed. Its end-to-end time counts from emission at the source to that
//! point.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::{
    ClusterSpec, ComponentKind, Grouping, ScheduleError, ScheduleMatrix, TopologyError,
    TopologySpec,
};

pub const DEFAULT_QUEUE_CAP: usize = 100_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    DimensionMismatch(#[from] ScheduleError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("unstable system: executor {executor} queue reached {queue_len} tuples at t={time:.3}s")]
    UnstableSystem {
        executor: usize,
        queue_len: usize,
        time: f64,
    },
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("no tuples were emitted inside the measurement window")]
    NoTuplesMeasured,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ServiceDistribution {
    Deterministic,
    #[default]
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalProcess {
    #[default]
    Poisson,
    Periodic,
}

fn default_queue_cap() -> usize {
    DEFAULT_QUEUE_CAP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    /// Simulated seconds discarded before the first measurement.
    pub warmup_duration: f64,
    /// Length of one measurement, in simulated seconds.
    pub measure_duration: f64,
    pub measurement_samples: usize,
    /// Spacing between the starts of consecutive measurements.
    pub sample_interval: f64,
    pub service_time_distribution: ServiceDistribution,
    #[serde(default)]
    pub arrival_process: ArrivalProcess,
    /// Any executor queue longer than this aborts the run as unstable.
    #[serde(default = "default_queue_cap")]
    pub queue_cap: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            warmup_duration: 60.0,
            measure_duration: 10.0,
            measurement_samples: 5,
            sample_interval: 10.0,
            service_time_distribution: ServiceDistribution::Exponential,
            arrival_process: ArrivalProcess::Poisson,
            queue_cap: DEFAULT_QUEUE_CAP,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_string()));
        if !(self.warmup_duration.is_finite() && self.warmup_duration >= 0.0) {
            return bad("warmup_duration must be >= 0");
        }
        if !(self.measure_duration.is_finite() && self.measure_duration > 0.0) {
            return bad("measure_duration must be > 0");
        }
        if self.measurement_samples == 0 {
            return bad("measurement_samples must be >= 1");
        }
        if !(self.sample_interval.is_finite() && self.sample_interval >= 0.0) {
            return bad("sample_interval must be >= 0");
        }
        if self.queue_cap == 0 {
            return bad("queue_cap must be >= 1");
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> SimConfig {
        SimConfig {
            seed,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    /// Seconds; mean of `per_sample_averages`.
    pub avg_tuple_processing_time: f64,
    pub per_sample_averages: Vec<f64>,
    pub tuples_completed: u64,
    pub per_machine_utilization: Vec<f64>,
}

/// Runs one measurement window of `measure_duration` seconds after warmup.
pub fn simulate(
    spec: &TopologySpec,
    cluster: &ClusterSpec,
    schedule: &ScheduleMatrix,
    config: &SimConfig,
) -> Result<SimResult, SimError> {
    config.validate()?;
    let start = config.warmup_duration;
    Engine::new(spec, cluster, schedule, config)?.run(&[(start, start + config.measure_duration)])
}

/// Waits out the warmup, then takes `measurement_samples` measurements
/// spaced `sample_interval` apart and averages them.
pub fn measure_after_stabilization(
    spec: &TopologySpec,
    cluster: &ClusterSpec,
    schedule: &ScheduleMatrix,
    config: &SimConfig,
) -> Result<SimResult, SimError> {
    config.validate()?;
    let windows: Vec<(f64, f64)> = (0..config.measurement_samples)
        .map(|k| {
            let start = config.warmup_duration + k as f64 * config.sample_interval;
            (start, start + config.measure_duration)
        })
        .collect();
    Engine::new(spec, cluster, schedule, config)?.run(&windows)
}

#[derive(Debug, Clone, Copy)]
enum EventKind {
    Emit { executor: usize },
    Arrive { executor: usize, job: Job },
    Finish { machine: usize, version: u64, executor: usize },
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    // Reversed: BinaryHeap is a max-heap and we want the earliest event.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

const UNTRACKED: u32 = u32::MAX;

#[derive(Debug, Clone, Copy)]
struct Job {
    root: u32,
    key: u64,
}

#[derive(Debug)]
struct Root {
    emitted: f64,
    pending: u32,
}

#[derive(Debug, Default)]
struct Executor {
    queue: VecDeque<Job>,
    in_service: Option<Job>,
    remaining: f64,
}

#[derive(Debug, Default)]
struct Machine {
    busy: Vec<usize>,
    last_update: f64,
    version: u64,
    busy_integral: f64,
}

#[derive(Debug, Clone, Copy)]
struct Route {
    target: usize,
    grouping: Grouping,
    salt: u64,
}

struct Engine<'a> {
    cluster: &'a ClusterSpec,
    config: &'a SimConfig,
    rng: ChaCha8Rng,
    component_of: Vec<usize>,
    machine_of: Vec<usize>,
    offsets: Vec<usize>,
    counts: Vec<usize>,
    service_mean: Vec<f64>,
    routes: Vec<Vec<Route>>,
    emit_interval: Vec<f64>,
    executors: Vec<Executor>,
    machines: Vec<Machine>,
    roots: Vec<Root>,
    heap: BinaryHeap<Event>,
    seq: u64,
    now: f64,
    span: (f64, f64),
}

impl<'a> Engine<'a> {
    fn new(
        spec: &TopologySpec,
        cluster: &'a ClusterSpec,
        schedule: &ScheduleMatrix,
        config: &'a SimConfig,
    ) -> Result<Self, SimError> {
        spec.validate()?;
        cluster.validate()?;
        schedule.check_dimensions(spec.total_executors(), cluster.machine_count)?;

        let component_of = spec.thread_components();
        let routes = spec
            .components
            .iter()
            .map(|c| {
                spec.edges
                    .iter()
                    .enumerate()
                    .filter(|(_, e)| e.from == c.id)
                    .map(|(i, e)| Route {
                        target: spec.component_index(&e.to).expect("validated"),
                        grouping: e.grouping,
                        salt: splitmix64(i as u64 + 1),
                    })
                    .collect()
            })
            .collect();
        let emit_interval = component_of
            .iter()
            .map(|&c| {
                let comp = &spec.components[c];
                if comp.kind != ComponentKind::Source {
                    return f64::INFINITY;
                }
                let rate = spec.source_rates.get(&comp.id).copied().unwrap_or(0.0);
                if rate > 0.0 {
                    comp.executor_count as f64 / rate
                } else {
                    f64::INFINITY
                }
            })
            .collect();
        let n = component_of.len();
        Ok(Self {
            cluster,
            config,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            machine_of: schedule.assignment().to_vec(),
            component_of,
            offsets: spec.thread_offsets(),
            counts: spec.components.iter().map(|c| c.executor_count).collect(),
            service_mean: spec.components.iter().map(|c| c.service_time_mean).collect(),
            routes,
            emit_interval,
            executors: (0..n).map(|_| Executor::default()).collect(),
            machines: (0..cluster.machine_count).map(|_| Machine::default()).collect(),
            roots: Vec::new(),
            heap: BinaryHeap::new(),
            seq: 0,
            now: 0.0,
            span: (0.0, 0.0),
        })
    }

    fn push(&mut self, time: f64, kind: EventKind) {
        self.seq += 1;
        self.heap.push(Event {
            time,
            seq: self.seq,
            kind,
        });
    }

    fn next_gap(&mut self, executor: usize) -> f64 {
        let mean = self.emit_interval[executor];
        match self.config.arrival_process {
            ArrivalProcess::Periodic => mean,
            ArrivalProcess::Poisson => Exp::new(1.0 / mean).expect("positive rate").sample(&mut self.rng),
        }
    }

    fn service_work(&mut self, executor: usize) -> f64 {
        let mean = self.service_mean[self.component_of[executor]];
        match self.config.service_time_distribution {
            ServiceDistribution::Deterministic => mean,
            ServiceDistribution::Exponential if mean > 0.0 => {
                Exp::new(1.0 / mean).expect("positive rate").sample(&mut self.rng)
            }
            ServiceDistribution::Exponential => 0.0,
        }
    }

    fn speed(&self, machine: usize) -> f64 {
        let busy = self.machines[machine].busy.len() as f64;
        if busy <= self.cluster.machine_capacity {
            1.0
        } else {
            self.cluster.machine_capacity / busy
        }
    }

    /// Brings every busy executor on `machine` forward to `self.now`.
    fn advance(&mut self, machine: usize) {
        let speed = self.speed(machine);
        let cap = self.cluster.machine_capacity;
        let now = self.now;
        let (lo, hi) = self.span;
        let m = &mut self.machines[machine];
        let dt = now - m.last_update;
        if dt > 0.0 {
            for &e in &m.busy {
                let ex = &mut self.executors[e];
                ex.remaining = (ex.remaining - dt * speed).max(0.0);
            }
            let overlap = now.min(hi) - m.last_update.max(lo);
            if overlap > 0.0 {
                m.busy_integral += overlap * (m.busy.len() as f64).min(cap) / cap;
            }
        }
        m.last_update = now;
    }

    fn reschedule(&mut self, machine: usize) {
        let speed = self.speed(machine);
        let m = &mut self.machines[machine];
        m.version += 1;
        let version = m.version;
        let next = m
            .busy
            .iter()
            .map(|&e| (e, self.executors[e].remaining))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        if let Some((executor, remaining)) = next {
            let time = self.now + remaining / speed;
            self.push(
                time,
                EventKind::Finish {
                    machine,
                    version,
                    executor,
                },
            );
        }
    }

    fn enqueue(&mut self, executor: usize, job: Job) -> Result<(), SimError> {
        if self.executors[executor].in_service.is_none() {
            let machine = self.machine_of[executor];
            self.advance(machine);
            let work = self.service_work(executor);
            let ex = &mut self.executors[executor];
            ex.in_service = Some(job);
            ex.remaining = work;
            self.machines[machine].busy.push(executor);
            self.reschedule(machine);
            return Ok(());
        }
        let ex = &mut self.executors[executor];
        ex.queue.push_back(job);
        if ex.queue.len() > self.config.queue_cap {
            return Err(SimError::UnstableSystem {
                executor,
                queue_len: ex.queue.len(),
                time: self.now,
            });
        }
        Ok(())
    }

    fn targets(&mut self, route: Route, key: u64, out: &mut Vec<usize>) {
        let base = self.offsets[route.target];
        let count = self.counts[route.target];
        match route.grouping {
            Grouping::Shuffle => out.push(base + self.rng.random_range(0..count)),
            Grouping::Fields => {
                out.push(base + (splitmix64(key ^ route.salt) % count as u64) as usize)
            }
            Grouping::All => out.extend(base..base + count),
            Grouping::Global => out.push(base),
        }
    }

    fn run(mut self, windows: &[(f64, f64)]) -> Result<SimResult, SimError> {
        let first = windows.iter().map(|w| w.0).fold(f64::INFINITY, f64::min);
        let last = windows.iter().map(|w| w.1).fold(0.0, f64::max);
        self.span = (first, last);
        for e in 0..self.executors.len() {
            let interval = self.emit_interval[e];
            if interval.is_finite() {
                let start = match self.config.arrival_process {
                    // Stagger executors of one source across the period.
                    ArrivalProcess::Periodic => {
                        let c = self.component_of[e];
                        interval * ((e - self.offsets[c]) as f64 + 1.0) / self.counts[c] as f64
                    }
                    ArrivalProcess::Poisson => self.next_gap(e),
                };
                self.push(start, EventKind::Emit { executor: e });
            }
        }

        let mut sums = vec![0.0; windows.len()];
        let mut counts = vec![0u64; windows.len()];
        let mut completed = 0u64;
        let mut outstanding = 0usize;
        let mut scratch = Vec::new();

        while let Some(event) = self.heap.pop() {
            if event.time > last && outstanding == 0 {
                break;
            }
            self.now = event.time;
            match event.kind {
                EventKind::Emit { executor } => {
                    let gap = self.next_gap(executor);
                    self.push(self.now + gap, EventKind::Emit { executor });
                    let in_window = windows.iter().any(|&(s, e)| self.now >= s && self.now < e);
                    let root = if in_window {
                        outstanding += 1;
                        self.roots.push(Root {
                            emitted: self.now,
                            pending: 1,
                        });
                        (self.roots.len() - 1) as u32
                    } else {
                        UNTRACKED
                    };
                    let key = self.rng.random();
                    self.enqueue(executor, Job { root, key })?;
                }
                EventKind::Arrive { executor, job } => self.enqueue(executor, job)?,
                EventKind::Finish {
                    machine,
                    version,
                    executor,
                } => {
                    if version != self.machines[machine].version {
                        continue;
                    }
                    self.advance(machine);
                    let job = self.executors[executor]
                        .in_service
                        .take()
                        .expect("finishing executor is busy");
                    self.executors[executor].remaining = 0.0;
                    self.machines[machine].busy.retain(|&e| e != executor);

                    let component = self.component_of[executor];
                    scratch.clear();
                    for r in 0..self.routes[component].len() {
                        let route = self.routes[component][r];
                        self.targets(route, job.key, &mut scratch);
                    }
                    if job.root != UNTRACKED {
                        let root = &mut self.roots[job.root as usize];
                        root.pending = root.pending + scratch.len() as u32 - 1;
                        if root.pending == 0 {
                            let emitted = root.emitted;
                            let latency = self.now - emitted;
                            for (w, &(s, e)) in windows.iter().enumerate() {
                                if emitted >= s && emitted < e {
                                    sums[w] += latency;
                                    counts[w] += 1;
                                }
                            }
                            completed += 1;
                            outstanding -= 1;
                        }
                    }

                    if let Some(next) = self.executors[executor].queue.pop_front() {
                        let work = self.service_work(executor);
                        let ex = &mut self.executors[executor];
                        ex.in_service = Some(next);
                        ex.remaining = work;
                        self.machines[machine].busy.push(executor);
                    }
                    self.reschedule(machine);

                    let delay = self.cluster.inter_machine_delay;
                    for i in 0..scratch.len() {
                        let target = scratch[i];
                        let child = Job {
                            root: job.root,
                            key: job.key,
                        };
                        if self.machine_of[target] == machine {
                            self.enqueue(target, child)?;
                        } else {
                            self.push(
                                self.now + delay,
                                EventKind::Arrive {
                                    executor: target,
                                    job: child,
                                },
                            );
                        }
                    }
                }
            }
        }

        if counts.contains(&0) {
            return Err(SimError::NoTuplesMeasured);
        }
        // Close the utilization integrals at the end of the measured span.
        self.now = self.now.max(last);
        for m in 0..self.machines.len() {
            self.advance(m);
        }
        let span = (last - first).max(f64::MIN_POSITIVE);
        let per_sample_averages: Vec<f64> = sums
            .iter()
            .zip(&counts)
            .map(|(s, &c)| s / c as f64)
            .collect();
        let avg = per_sample_averages.iter().sum::<f64>() / per_sample_averages.len() as f64;
        Ok(SimResult {
            avg_tuple_processing_time: avg,
            per_sample_averages,
            tuples_completed: completed,
            per_machine_utilization: self
                .machines
                .iter()
                .map(|m| (m.busy_integral / span).clamp(0.0, 1.0))
                .collect(),
        })
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
