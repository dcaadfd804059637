//! Nearest feasible schedules to a continuous proto-action.
//!
//! A feasible action picks one machine per thread, so the squared distance
//! to the proto-action splits into independent per-row terms
//!
//! ```text
//! ||a - p||^2 = sum_i d_i(j_i),   d_i(j) = sum_k p_ik^2 - 2 p_ij + 1
//! ```
//!
//! The single nearest action takes the per-row minimum. The K nearest are
//! the K smallest sums over the product of per-row sorted delta lists,
//! enumerated best-first with a priority queue: every rank vector has a
//! unique parent obtained by decrementing its last non-zero rank, so each
//! candidate is generated exactly once and children never cost less than
//! their parent.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::ScheduleMatrix;

pub const DEFAULT_BRUTE_FORCE_CAP: usize = 4096;

/// Relative slack used to keep exploring candidates that tie with the K-th.
const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KnnError {
    #[error("K = {k} exceeds the {space} feasible actions")]
    KTooLarge { k: usize, space: String },
    #[error("K must be at least 1")]
    ZeroK,
    #[error("action space of {machines}^{threads} exceeds the enumeration cap {cap}")]
    SpaceTooLarge {
        threads: usize,
        machines: usize,
        cap: usize,
    },
    #[error("proto-action entry ({row}, {col}) is not finite")]
    NonFinite { row: usize, col: usize },
    #[error("proto-action needs {expected} entries, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Continuous relaxation of a schedule: an N x M real matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtoAction {
    threads: usize,
    machines: usize,
    entries: Vec<f64>,
}

impl ProtoAction {
    pub fn new(threads: usize, machines: usize, entries: Vec<f64>) -> Result<Self, KnnError> {
        if entries.len() != threads * machines || machines == 0 {
            return Err(KnnError::DimensionMismatch {
                expected: threads * machines,
                got: entries.len(),
            });
        }
        if let Some(i) = entries.iter().position(|v| !v.is_finite()) {
            return Err(KnnError::NonFinite {
                row: i / machines,
                col: i % machines,
            });
        }
        Ok(Self {
            threads,
            machines,
            entries,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, KnnError> {
        let machines = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != machines) {
            return Err(KnnError::DimensionMismatch {
                expected: rows.len() * machines,
                got: rows.iter().map(Vec::len).sum(),
            });
        }
        Self::new(rows.len(), machines, rows.concat())
    }

    pub fn threads(&self) -> usize {
        self.threads
    }

    pub fn machines(&self) -> usize {
        self.machines
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [f64] {
        &mut self.entries
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.machines..(i + 1) * self.machines]
    }

    /// `d_i(j)` for every machine of row `i`.
    pub fn row_deltas(&self, i: usize) -> Vec<f64> {
        let row = self.row(i);
        let norm: f64 = row.iter().map(|v| v * v).sum();
        row.iter().map(|v| norm - 2.0 * v + 1.0).collect()
    }

    /// `||a - p||^2` computed entry by entry in row-major order.
    pub fn squared_distance(&self, action: &ScheduleMatrix) -> f64 {
        let mut sum = 0.0;
        for i in 0..self.threads {
            let chosen = action.machine_of(i);
            for (j, v) in self.row(i).iter().enumerate() {
                let a = if j == chosen { 1.0 } else { 0.0 };
                sum += (a - v) * (a - v);
            }
        }
        sum
    }
}

/// The K nearest actions in nondecreasing distance order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnResult {
    pub actions: Vec<ScheduleMatrix>,
    pub distances: Vec<f64>,
}

impl KnnResult {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Row-wise argmax of the proto-action, lowest machine index on ties.
pub fn nearest_action(proto: &ProtoAction) -> ScheduleMatrix {
    let assignment = (0..proto.threads)
        .map(|i| {
            let row = proto.row(i);
            let mut best = 0;
            for j in 1..row.len() {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect();
    ScheduleMatrix::from_assignment(assignment, proto.machines).expect("argmax within row")
}

/// `M^N` when it fits in `usize`.
pub fn action_space_size(threads: usize, machines: usize) -> Option<usize> {
    u32::try_from(threads)
        .ok()
        .and_then(|n| machines.checked_pow(n))
}

fn check_k(proto: &ProtoAction, k: usize) -> Result<(), KnnError> {
    if k == 0 {
        return Err(KnnError::ZeroK);
    }
    if let Some(space) = action_space_size(proto.threads, proto.machines) {
        if k > space {
            return Err(KnnError::KTooLarge {
                k,
                space: space.to_string(),
            });
        }
    }
    Ok(())
}

#[derive(Debug, PartialEq, Eq)]
struct Node {
    cost: OrdF64,
    ranks: Vec<u16>,
    /// Last row whose rank was incremented; children only touch rows >= this.
    pivot: usize,
}

impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap on cost, then on ranks for a deterministic pop order.
        other
            .cost
            .cmp(&self.cost)
            .then_with(|| other.ranks.cmp(&self.ranks))
    }
}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct OrdF64(f64);

impl Eq for OrdF64 {}

impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// The exact K nearest feasible actions to `proto`.
///
/// Equal distances are ordered by the lexicographic order of the
/// assignment vectors.
pub fn k_nearest_actions(proto: &ProtoAction, k: usize) -> Result<KnnResult, KnnError> {
    check_k(proto, k)?;
    let n = proto.threads;
    let m = proto.machines;
    assert!(m <= u16::MAX as usize, "machine count fits in u16");

    // Per row: machines sorted by (delta, index) and the matching deltas.
    let mut order: Vec<Vec<usize>> = Vec::with_capacity(n);
    let mut sorted: Vec<Vec<f64>> = Vec::with_capacity(n);
    for i in 0..n {
        let deltas = proto.row_deltas(i);
        let mut idx: Vec<usize> = (0..m).collect();
        idx.sort_by(|&a, &b| deltas[a].total_cmp(&deltas[b]).then(a.cmp(&b)));
        sorted.push(idx.iter().map(|&j| deltas[j]).collect());
        order.push(idx);
    }

    let base: f64 = sorted.iter().map(|row| row[0]).sum();
    let mut heap = BinaryHeap::new();
    heap.push(Node {
        cost: OrdF64(base),
        ranks: vec![0; n],
        pivot: 0,
    });

    let extra_budget = k.max(64);
    let mut popped: Vec<(f64, Vec<u16>)> = Vec::with_capacity(k);
    let mut kth_cost = f64::INFINITY;
    let mut extra = 0;
    while let Some(node) = heap.pop() {
        if popped.len() >= k {
            let slack = TIE_TOLERANCE * kth_cost.abs().max(1.0);
            if node.cost.0 > kth_cost + slack || extra >= extra_budget {
                break;
            }
            extra += 1;
        }
        for p in node.pivot..n {
            let r = node.ranks[p] as usize;
            if r + 1 < m {
                let mut ranks = node.ranks.clone();
                ranks[p] += 1;
                let cost = node.cost.0 - sorted[p][r] + sorted[p][r + 1];
                heap.push(Node {
                    cost: OrdF64(cost),
                    ranks,
                    pivot: p,
                });
            }
        }
        popped.push((node.cost.0, node.ranks));
        if popped.len() == k {
            kth_cost = popped[k - 1].0;
        }
    }

    let mut candidates: Vec<(f64, ScheduleMatrix)> = popped
        .into_iter()
        .map(|(_, ranks)| {
            let assignment = ranks
                .iter()
                .enumerate()
                .map(|(i, &r)| order[i][r as usize])
                .collect();
            let action = ScheduleMatrix::from_assignment(assignment, m).expect("valid machine");
            (proto.squared_distance(&action), action)
        })
        .collect();
    sort_candidates(&mut candidates);
    candidates.truncate(k);
    Ok(unzip(candidates))
}

fn sort_candidates(candidates: &mut [(f64, ScheduleMatrix)]) {
    candidates.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then_with(|| a.1.assignment().cmp(b.1.assignment()))
    });
}

fn unzip(candidates: Vec<(f64, ScheduleMatrix)>) -> KnnResult {
    let (distances, actions) = candidates.into_iter().unzip();
    KnnResult { actions, distances }
}

/// Exhaustive K-NN over all `M^N` actions; the test oracle for
/// [`k_nearest_actions`].
pub fn brute_force_knn(proto: &ProtoAction, k: usize, cap: usize) -> Result<KnnResult, KnnError> {
    let n = proto.threads;
    let m = proto.machines;
    let space = match action_space_size(n, m) {
        Some(s) if s <= cap => s,
        _ => {
            return Err(KnnError::SpaceTooLarge {
                threads: n,
                machines: m,
                cap,
            })
        }
    };
    check_k(proto, k)?;
    let mut all = Vec::with_capacity(space);
    let mut assignment = vec![0usize; n];
    for _ in 0..space {
        let action = ScheduleMatrix::from_assignment(assignment.clone(), m).expect("in range");
        all.push((proto.squared_distance(&action), action));
        // Odometer increment, last row fastest.
        for digit in assignment.iter_mut().rev() {
            *digit += 1;
            if *digit < m {
                break;
            }
            *digit = 0;
        }
    }
    sort_candidates(&mut all);
    all.truncate(k);
    Ok(unzip(all))
}
