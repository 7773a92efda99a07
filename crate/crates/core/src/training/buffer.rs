use rand::Rng;

use crate::error::{Error, Result};

/// One joint timestep as stored for replay.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<Vec<f64>>,
    pub next_obs: Vec<Vec<f64>>,
    /// Actions as executed, exploration noise included.
    pub actions: Vec<Vec<f64>>,
    /// Message each agent read before writing; empty for memoryless learners.
    pub memories: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
}

/// Fixed-capacity FIFO replay memory with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay buffer capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            cursor: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    /// Stored transitions from oldest to newest.
    pub fn iter_oldest_first(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.items.len() < self.capacity { 0 } else { self.cursor };
        self.items[split..].iter().chain(&self.items[..split])
    }

    /// Indices drawn uniformly with replacement. Only an empty buffer is
    /// refused; holding fewer than `batch` items just yields repeats.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.items.is_empty() {
            return Err(Error::NotReady {
                have: self.items.len(),
                need: batch.max(1),
            });
        }
        Ok((0..batch).map(|_| rng.random_range(0..self.items.len())).collect())
    }

    pub fn get(&self, idx: usize) -> &Transition {
        &self.items[idx]
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<&Transition>> {
        Ok(self.sample_indices(batch, rng)?.into_iter().map(|i| &self.items[i]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tr(tag: f64) -> Transition {
        Transition {
            obs: vec![vec![tag]],
            next_obs: vec![vec![tag + 1.0]],
            actions: vec![vec![0.0]],
            memories: vec![],
            rewards: vec![tag],
        }
    }

    #[test]
    fn fifo_eviction() {
        let mut b = ReplayBuffer::new(3).unwrap();
        for i in 0..4 {
            b.push(tr(i as f64));
        }
        assert_eq!(b.len(), 3);
        let order: Vec<f64> = b.iter_oldest_first().map(|t| t.rewards[0]).collect();
        assert_eq!(order, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn single_item_sampling_and_not_ready() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut b = ReplayBuffer::new(10).unwrap();
        assert!(matches!(b.sample(4, &mut rng), Err(Error::NotReady { .. })));
        b.push(tr(7.0));
        let s = b.sample(5, &mut rng).unwrap();
        assert_eq!(s.len(), 5);
        assert!(s.iter().all(|t| t.rewards[0] == 7.0));
    }
}
