//! Applications, clusters and scheduling solutions.
//!
//! A [`TopologySpec`] is the directed application graph (sources feeding
//! processing units), a [`ClusterSpec`] describes the machines, and a
//! [`ScheduleMatrix`] places every executor thread on exactly one machine.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("cycle detected through component `{component}`")]
    CycleDetected { component: String },
    #[error("edge {from} -> {to} references an unknown component")]
    DanglingEdge { from: String, to: String },
    #[error("component `{component}` has zero executors")]
    ZeroExecutors { component: String },
    #[error("duplicate component id `{0}`")]
    DuplicateComponent(String),
    #[error("source `{component}` has an incoming edge from `{from}`")]
    SourceHasIncoming { component: String, from: String },
    #[error("component `{0}` is not reachable from any source")]
    Unreachable(String),
    #[error("topology has no source component")]
    NoSources,
    #[error("source rate for `{0}` is missing, negative or not finite")]
    BadSourceRate(String),
    #[error("source rate given for `{0}`, which is not a source")]
    RateForNonSource(String),
    #[error("component `{0}` has a negative or non-finite service time")]
    BadServiceTime(String),
    #[error("invalid cluster: {0}")]
    InvalidCluster(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("dimension mismatch: expected {expected_rows}x{expected_cols}, got {rows}x{cols}")]
    DimensionMismatch {
        expected_rows: usize,
        expected_cols: usize,
        rows: usize,
        cols: usize,
    },
    #[error("row {row} is not one-hot")]
    NotOneHot { row: usize },
    #[error("thread {thread} assigned to machine {machine}, cluster has {machines}")]
    MachineOutOfRange {
        thread: usize,
        machine: usize,
        machines: usize,
    },
    #[error("machine {machine} hosts {threads} threads, limit is {limit}")]
    SlotsExceeded {
        machine: usize,
        threads: usize,
        limit: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentKind {
    Source,
    ProcessingUnit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub id: String,
    pub kind: ComponentKind,
    pub executor_count: usize,
    /// Mean service time in seconds per tuple.
    pub service_time_mean: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    Shuffle,
    Fields,
    All,
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: String,
    pub to: String,
    pub grouping: Grouping,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologySpec {
    pub components: Vec<Component>,
    pub edges: Vec<Edge>,
    /// Tuples per second emitted by each source component (the workload).
    pub source_rates: BTreeMap<String, f64>,
}

impl TopologySpec {
    pub fn total_executors(&self) -> usize {
        self.components.iter().map(|c| c.executor_count).sum()
    }

    pub fn component_index(&self, id: &str) -> Option<usize> {
        self.components.iter().position(|c| c.id == id)
    }

    /// Indices of source components, in declaration order.
    pub fn sources(&self) -> Vec<usize> {
        self.components
            .iter()
            .enumerate()
            .filter(|(_, c)| c.kind == ComponentKind::Source)
            .map(|(i, _)| i)
            .collect()
    }

    /// First thread id of every component; threads are numbered in
    /// component declaration order.
    pub fn thread_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.components.len());
        let mut next = 0;
        for c in &self.components {
            offsets.push(next);
            next += c.executor_count;
        }
        offsets
    }

    /// Component index of every thread.
    pub fn thread_components(&self) -> Vec<usize> {
        self.components
            .iter()
            .enumerate()
            .flat_map(|(i, c)| std::iter::repeat_n(i, c.executor_count))
            .collect()
    }

    /// Workload vector: one rate per source, in source declaration order.
    pub fn workload(&self) -> Vec<f64> {
        self.sources()
            .into_iter()
            .map(|i| {
                self.source_rates
                    .get(&self.components[i].id)
                    .copied()
                    .unwrap_or(0.0)
            })
            .collect()
    }

    /// Copy of this spec with the source rates replaced by `workload`
    /// (one entry per source, declaration order).
    pub fn with_workload(&self, workload: &[f64]) -> TopologySpec {
        let mut spec = self.clone();
        for (src, rate) in self.sources().into_iter().zip(workload) {
            spec.source_rates
                .insert(self.components[src].id.clone(), *rate);
        }
        spec
    }

    pub fn validate(&self) -> Result<(), TopologyError> {
        validate_topology(self)
    }
}

/// Checks every structural invariant of a topology.
pub fn validate_topology(spec: &TopologySpec) -> Result<(), TopologyError> {
    let mut ids = BTreeMap::new();
    for (i, c) in spec.components.iter().enumerate() {
        if ids.insert(c.id.as_str(), i).is_some() {
            return Err(TopologyError::DuplicateComponent(c.id.clone()));
        }
        if c.executor_count == 0 {
            return Err(TopologyError::ZeroExecutors {
                component: c.id.clone(),
            });
        }
        if !(c.service_time_mean.is_finite() && c.service_time_mean >= 0.0) {
            return Err(TopologyError::BadServiceTime(c.id.clone()));
        }
    }

    let n = spec.components.len();
    let mut adjacency = vec![Vec::new(); n];
    let mut indegree = vec![0usize; n];
    for e in &spec.edges {
        let (Some(&from), Some(&to)) = (ids.get(e.from.as_str()), ids.get(e.to.as_str())) else {
            return Err(TopologyError::DanglingEdge {
                from: e.from.clone(),
                to: e.to.clone(),
            });
        };
        if from == to {
            return Err(TopologyError::CycleDetected {
                component: e.from.clone(),
            });
        }
        if spec.components[to].kind == ComponentKind::Source {
            return Err(TopologyError::SourceHasIncoming {
                component: e.to.clone(),
                from: e.from.clone(),
            });
        }
        adjacency[from].push(to);
        indegree[to] += 1;
    }

    // Kahn's algorithm; anything left over sits on a cycle.
    let mut remaining = indegree.clone();
    let mut queue: VecDeque<usize> = (0..n).filter(|&i| remaining[i] == 0).collect();
    let mut visited = 0;
    while let Some(v) = queue.pop_front() {
        visited += 1;
        for &w in &adjacency[v] {
            remaining[w] -= 1;
            if remaining[w] == 0 {
                queue.push_back(w);
            }
        }
    }
    if visited < n {
        let stuck = (0..n).find(|&i| remaining[i] > 0).unwrap_or(0);
        return Err(TopologyError::CycleDetected {
            component: spec.components[stuck].id.clone(),
        });
    }

    let sources = spec.sources();
    if sources.is_empty() {
        return Err(TopologyError::NoSources);
    }
    let mut reached = vec![false; n];
    let mut stack = sources.clone();
    while let Some(v) = stack.pop() {
        if std::mem::replace(&mut reached[v], true) {
            continue;
        }
        stack.extend(adjacency[v].iter().copied());
    }
    if let Some(i) = reached.iter().position(|r| !r) {
        return Err(TopologyError::Unreachable(spec.components[i].id.clone()));
    }

    for &s in &sources {
        let id = &spec.components[s].id;
        match spec.source_rates.get(id) {
            Some(r) if r.is_finite() && *r >= 0.0 => {}
            _ => return Err(TopologyError::BadSourceRate(id.clone())),
        }
    }
    for id in spec.source_rates.keys() {
        match ids.get(id.as_str()) {
            Some(&i) if spec.components[i].kind == ComponentKind::Source => {}
            _ => return Err(TopologyError::RateForNonSource(id.clone())),
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub machine_count: usize,
    pub slots_per_machine: usize,
    /// Seconds between two processes on the same machine.
    pub intra_machine_delay: f64,
    /// Seconds between machines.
    pub inter_machine_delay: f64,
    /// Number of executors a machine serves at full speed at once; beyond
    /// that its capacity is shared evenly among busy executors.
    pub machine_capacity: f64,
    /// Optional cap on threads per worker process. Slots bound processes,
    /// so without this no per-machine thread limit applies.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_threads_per_process: Option<usize>,
}

impl ClusterSpec {
    pub fn validate(&self) -> Result<(), TopologyError> {
        let bad = |m: &str| Err(TopologyError::InvalidCluster(m.to_string()));
        if self.machine_count == 0 {
            return bad("machine_count must be at least 1");
        }
        if self.slots_per_machine == 0 {
            return bad("slots_per_machine must be at least 1");
        }
        if !(self.intra_machine_delay.is_finite() && self.intra_machine_delay >= 0.0) {
            return bad("intra_machine_delay must be finite and non-negative");
        }
        if !(self.inter_machine_delay.is_finite()
            && self.inter_machine_delay >= self.intra_machine_delay)
        {
            return bad("inter_machine_delay must be finite and at least intra_machine_delay");
        }
        if !(self.machine_capacity.is_finite() && self.machine_capacity > 0.0) {
            return bad("machine_capacity must be positive");
        }
        if self.max_threads_per_process == Some(0) {
            return bad("max_threads_per_process must be at least 1");
        }
        Ok(())
    }

    /// Per-machine thread limit, if any.
    pub fn thread_limit(&self) -> Option<usize> {
        self.max_threads_per_process
            .map(|m| m.saturating_mul(self.slots_per_machine))
    }
}

/// Binary thread-to-machine assignment with exactly one machine per thread.
///
/// Stored as the chosen column of every row, so the one-hot row invariant
/// holds by construction.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ScheduleMatrix {
    assignment: Vec<usize>,
    machines: usize,
}

impl ScheduleMatrix {
    pub fn from_assignment(
        assignment: Vec<usize>,
        machines: usize,
    ) -> Result<Self, ScheduleError> {
        if let Some((thread, &machine)) = assignment.iter().enumerate().find(|(_, &m)| m >= machines)
        {
            return Err(ScheduleError::MachineOutOfRange {
                thread,
                machine,
                machines,
            });
        }
        Ok(Self {
            assignment,
            machines,
        })
    }

    /// Builds a schedule from explicit 0/1 rows.
    pub fn from_rows(rows: &[Vec<u8>], machines: usize) -> Result<Self, ScheduleError> {
        let mut assignment = Vec::with_capacity(rows.len());
        for (i, row) in rows.iter().enumerate() {
            if row.len() != machines {
                return Err(ScheduleError::DimensionMismatch {
                    expected_rows: rows.len(),
                    expected_cols: machines,
                    rows: rows.len(),
                    cols: row.len(),
                });
            }
            let mut ones = row.iter().enumerate().filter(|(_, &v)| v != 0);
            match (ones.next(), ones.next()) {
                (Some((j, &1)), None) => assignment.push(j),
                _ => return Err(ScheduleError::NotOneHot { row: i }),
            }
        }
        Ok(Self {
            assignment,
            machines,
        })
    }

    pub fn threads(&self) -> usize {
        self.assignment.len()
    }

    pub fn machines(&self) -> usize {
        self.machines
    }

    pub fn machine_of(&self, thread: usize) -> usize {
        self.assignment[thread]
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn get(&self, thread: usize, machine: usize) -> u8 {
        u8::from(self.assignment[thread] == machine)
    }

    /// Threads per machine.
    pub fn loads(&self) -> Vec<usize> {
        let mut loads = vec![0; self.machines];
        for &m in &self.assignment {
            loads[m] += 1;
        }
        loads
    }

    /// Row-major 0/1 entries.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = vec![0.0; self.assignment.len() * self.machines];
        self.write_flat(&mut flat);
        flat
    }

    pub(crate) fn write_flat(&self, out: &mut [f64]) {
        out.fill(0.0);
        for (i, &m) in self.assignment.iter().enumerate() {
            out[i * self.machines + m] = 1.0;
        }
    }

    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        self.assignment
            .iter()
            .map(|&m| (0..self.machines).map(|j| u8::from(j == m)).collect())
            .collect()
    }

    /// Copy with thread `thread` moved to `machine`.
    pub fn with_move(&self, thread: usize, machine: usize) -> ScheduleMatrix {
        let mut next = self.clone();
        next.assignment[thread] = machine;
        next
    }

    pub fn check_dimensions(&self, threads: usize, machines: usize) -> Result<(), ScheduleError> {
        if self.threads() != threads || self.machines != machines {
            return Err(ScheduleError::DimensionMismatch {
                expected_rows: threads,
                expected_cols: machines,
                rows: self.threads(),
                cols: self.machines,
            });
        }
        Ok(())
    }

    /// Rejects schedules exceeding the cluster's per-machine thread limit.
    pub fn check_capacity(&self, cluster: &ClusterSpec) -> Result<(), ScheduleError> {
        if let Some(limit) = cluster.thread_limit() {
            for (machine, threads) in self.loads().into_iter().enumerate() {
                if threads > limit {
                    return Err(ScheduleError::SlotsExceeded {
                        machine,
                        threads,
                        limit,
                    });
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for ScheduleMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.assignment.iter().map(|m| m.to_string()).collect();
        write!(f, "[{}]", parts.join(" "))
    }
}

/// A scheduling solution paired with the current workload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub schedule: ScheduleMatrix,
    pub workload: Vec<f64>,
}

impl SystemState {
    pub fn new(schedule: ScheduleMatrix, workload: Vec<f64>) -> Self {
        debug_assert!(workload.iter().all(|w| *w >= 0.0));
        Self { schedule, workload }
    }

    pub fn encoded_len(&self) -> usize {
        self.schedule.threads() * self.schedule.machines() + self.workload.len()
    }

    /// Network input: flattened schedule followed by workload / `rate_scale`.
    pub fn encode(&self, rate_scale: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.encoded_len()];
        self.encode_into(rate_scale, &mut out);
        out
    }

    pub(crate) fn encode_into(&self, rate_scale: f64, out: &mut [f64]) {
        let cells = self.schedule.threads() * self.schedule.machines();
        self.schedule.write_flat(&mut out[..cells]);
        for (o, w) in out[cells..].iter_mut().zip(&self.workload) {
            *o = w / rate_scale;
        }
    }
}

/// Storm's default placement: threads in component order, dealt to machines
/// cyclically.
pub fn round_robin_schedule(spec: &TopologySpec, cluster: &ClusterSpec) -> ScheduleMatrix {
    let m = cluster.machine_count;
    let assignment = (0..spec.total_executors()).map(|t| t % m).collect();
    ScheduleMatrix {
        assignment,
        machines: m,
    }
}

/// Threads whose placement differs between two schedules.
pub fn schedule_diff(
    old: &ScheduleMatrix,
    new: &ScheduleMatrix,
) -> Result<BTreeSet<usize>, ScheduleError> {
    new.check_dimensions(old.threads(), old.machines())?;
    Ok(old
        .assignment
        .iter()
        .zip(&new.assignment)
        .enumerate()
        .filter(|(_, (a, b))| a != b)
        .map(|(i, _)| i)
        .collect())
}
