//! Ring-buffer experience pool with uniform sampling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::DoneReason;

/// One stored interaction. Observations are normalized feature vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    /// Set on terminal transitions, with the reason (horizon vs failure).
    pub done: Option<DoneReason>,
}

/// Fixed-capacity ring storage; pushing beyond capacity overwrites the oldest
/// entry. Sampling is uniform with replacement.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplayBuffer<T> {
    data: Vec<T>,
    capacity: usize,
    cursor: usize,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "capacity must be positive");
        ReplayBuffer { data: Vec::new(), capacity, cursor: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn push(&mut self, item: T) {
        if self.data.len() < self.capacity {
            self.data.push(item);
        } else {
            self.data[self.cursor] = item;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    pub fn get(&self, index: usize) -> &T {
        &self.data[index]
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.data.iter()
    }

    pub fn sample<R: Rng>(&self, batch_size: usize, rng: &mut R) -> Vec<&T> {
        assert!(
            self.data.len() >= batch_size,
            "sampling {batch_size} from a buffer holding {}",
            self.data.len()
        );
        (0..batch_size).map(|_| &self.data[rng.random_range(0..self.data.len())]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ring_evicts_oldest() {
        let mut buf = ReplayBuffer::new(2);
        buf.push(1);
        buf.push(2);
        buf.push(3);
        assert_eq!(buf.len(), 2);
        let held: Vec<i32> = buf.iter().copied().collect();
        assert!(held.contains(&2) && held.contains(&3) && !held.contains(&1));
    }

    #[test]
    fn sampling_is_reproducible() {
        let mut buf = ReplayBuffer::new(8);
        for k in 0..8 {
            buf.push(k);
        }
        let a: Vec<i32> =
            buf.sample(4, &mut ChaCha8Rng::seed_from_u64(3)).into_iter().copied().collect();
        let b: Vec<i32> =
            buf.sample(4, &mut ChaCha8Rng::seed_from_u64(3)).into_iter().copied().collect();
        assert_eq!(a, b);
    }

    #[test]
    #[should_panic(expected = "sampling")]
    fn sampling_an_underfilled_buffer_panics() {
        let mut buf = ReplayBuffer::new(8);
        buf.push(1);
        buf.sample(2, &mut ChaCha8Rng::seed_from_u64(0));
    }

    #[test]
    fn sampling_is_close_to_uniform() {
        let mut buf = ReplayBuffer::new(10);
        for k in 0..10 {
            buf.push(k);
        }
        let mut counts = [0usize; 10];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 100_000;
        for _ in 0..draws / 10 {
            for item in buf.sample(10, &mut rng) {
                counts[*item as usize] += 1;
            }
        }
        for &c in &counts {
            let freq = c as f64 / draws as f64;
            assert!((freq - 0.1).abs() < 0.01, "frequency {freq} drifted from uniform");
        }
    }
}
