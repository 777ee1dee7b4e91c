use crate::offline::agent::{Batch, TransitionTable};
use crate::rng::Rng;
use rand::Rng as _;

/// Fixed-capacity ring buffer; once full, each push overwrites the oldest
/// transition.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    table: TransitionTable,
    capacity: usize,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(state_dim: usize, action_dim: usize, capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            table: TransitionTable::new(state_dim, action_dim),
            capacity,
            next: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, state: &[f64], action: &[f64], reward: f64, next_state: &[f64], done: bool) {
        if self.table.len() < self.capacity {
            self.table.push(state, action, reward, next_state, done);
        } else {
            self.table.overwrite(self.next, state, action, reward, next_state, done);
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Stored rewards from oldest to newest.
    pub fn rewards_oldest_first(&self) -> Vec<f64> {
        let n = self.len();
        let start = if n < self.capacity { 0 } else { self.next };
        (0..n).map(|k| self.table.reward((start + k) % n)).collect()
    }

    pub fn sample(&self, batch_size: usize, rng: &mut Rng) -> Batch {
        let idx: Vec<usize> = (0..batch_size).map(|_| rng.random_range(0..self.len())).collect();
        self.table.gather(&idx)
    }
}
