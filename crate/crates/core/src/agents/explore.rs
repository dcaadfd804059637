use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::knn::ProtoAction;

/// With probability `epsilon`, adds independent `U[0, 1]` noise to every
/// entry of the proto-action; otherwise returns it unchanged.
pub fn explore<R: Rng + ?Sized>(proto: &ProtoAction, epsilon: f64, rng: &mut R) -> ProtoAction {
    let mut out = proto.clone();
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        for v in out.entries_mut() {
            *v += rng.random::<f64>();
        }
    }
    out
}

/// Linear decay from `initial` to `last` over `decay_epochs`, then flat.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub initial: f64,
    pub last: f64,
    pub decay_epochs: usize,
}

impl EpsilonSchedule {
    pub fn linear(initial: f64, last: f64, decay_epochs: usize) -> Self {
        Self {
            initial,
            last,
            decay_epochs,
        }
    }

    pub fn constant(epsilon: f64) -> Self {
        Self::linear(epsilon, epsilon, 0)
    }

    pub fn value(&self, epoch: usize) -> f64 {
        if epoch >= self.decay_epochs {
            return self.last;
        }
        let frac = epoch as f64 / self.decay_epochs as f64;
        self.initial + (self.last - self.initial) * frac
    }
}
