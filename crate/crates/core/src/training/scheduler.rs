use rand::Rng;

use crate::rng;

/// Hands out batch-sets within one epoch: each round picks uniformly among
/// the tasks that still have batches left and grants up to
/// `batch_set_size` of them.
#[derive(Clone, Debug)]
pub struct EpochScheduler {
    remaining: Vec<usize>,
    batch_set_size: usize,
    rng: rng::Rng,
}

impl EpochScheduler {
    pub fn new(batch_set_size: usize, rng: rng::Rng) -> Self {
        assert!(batch_set_size > 0, "batch-set size must be positive");
        EpochScheduler {
            remaining: Vec::new(),
            batch_set_size,
            rng,
        }
    }

    /// Starts an epoch with `batches[t]` batches for task `t`.
    pub fn start_epoch(&mut self, batches: &[usize]) {
        self.remaining = batches.to_vec();
    }

    pub fn remaining(&self) -> &[usize] {
        &self.remaining
    }

    pub fn is_epoch_done(&self) -> bool {
        self.remaining.iter().all(|&r| r == 0)
    }

    /// `(task, batch count)`, or `None` once the epoch is exhausted.
    pub fn schedule_round(&mut self) -> Option<(usize, usize)> {
        let eligible: Vec<usize> = (0..self.remaining.len())
            .filter(|&t| self.remaining[t] > 0)
            .collect();
        if eligible.is_empty() {
            return None;
        }
        let task = eligible[self.rng.random_range(0..eligible.len())];
        let grant = self.remaining[task].min(self.batch_set_size);
        self.remaining[task] -= grant;
        Some((task, grant))
    }
}
