use std::collections::VecDeque;

use rand::Rng;

use super::AgentError;

/// Bounded FIFO experience replay; the oldest sample is evicted when full.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    samples: VecDeque<T>,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay buffer capacity must be positive");
        Self {
            capacity,
            samples: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn push(&mut self, sample: T) {
        if self.samples.len() == self.capacity {
            self.samples.pop_front();
        }
        self.samples.push_back(sample);
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.samples.iter()
    }

    /// `h` distinct samples drawn uniformly without replacement.
    pub fn sample<R: Rng + ?Sized>(&self, h: usize, rng: &mut R) -> Result<Vec<&T>, AgentError> {
        if self.samples.len() < h {
            return Err(AgentError::InsufficientSamples {
                have: self.samples.len(),
                need: h,
            });
        }
        Ok(rand::seq::index::sample(rng, self.samples.len(), h)
            .into_iter()
            .map(|i| &self.samples[i])
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn evicts_oldest() {
        let mut b = ReplayBuffer::new(2);
        b.push('a');
        assert_eq!(b.len(), 1);
        b.push('b');
        b.push('c');
        assert_eq!(b.iter().copied().collect::<Vec<_>>(), vec!['b', 'c']);
    }

    #[test]
    fn exhaustive_and_insufficient_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut b = ReplayBuffer::new(1000);
        for i in 0..31 {
            b.push(i);
        }
        assert!(matches!(
            b.sample(32, &mut rng),
            Err(AgentError::InsufficientSamples { have: 31, need: 32 })
        ));
        b.push(31);
        let mut got: Vec<i32> = b.sample(32, &mut rng).unwrap().into_iter().copied().collect();
        got.sort();
        assert_eq!(got, (0..32).collect::<Vec<_>>());
    }

    #[test]
    fn seeded_draws_repeat() {
        let mut b = ReplayBuffer::new(100);
        for i in 0..100 {
            b.push(i);
        }
        let draw = |seed| -> Vec<i32> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            b.sample(10, &mut rng).unwrap().into_iter().copied().collect()
        };
        assert_eq!(draw(4), draw(4));
        assert_ne!(draw(4), draw(5));
    }
}
