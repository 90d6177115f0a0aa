use rand::seq::SliceRandom;
use rand::Rng;

/// Epoch order over `n` samples, consumed in consecutive blocks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchPlan {
    batch_size: usize,
    order: Vec<usize>,
    cursor: usize,
}

impl BatchPlan {
    pub fn new<R: Rng + ?Sized>(n: usize, batch_size: usize, rng: &mut R) -> Self {
        assert!(batch_size > 0, "batch size must be positive");
        let mut plan = BatchPlan {
            batch_size,
            order: (0..n).collect(),
            cursor: 0,
        };
        plan.order.shuffle(rng);
        plan
    }

    /// Fresh permutation for the next epoch.
    pub fn reshuffle<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.order.sort_unstable();
        self.order.shuffle(rng);
        self.cursor = 0;
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn is_exhausted(&self) -> bool {
        self.cursor >= self.order.len()
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }

    /// Up to `count` batches; fewer only when the epoch runs out.
    pub fn next_batches(&mut self, count: usize) -> Vec<Vec<usize>> {
        let mut out = Vec::with_capacity(count);
        while out.len() < count && !self.is_exhausted() {
            let end = (self.cursor + self.batch_size).min(self.order.len());
            out.push(self.order[self.cursor..end].to_vec());
            self.cursor = end;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    #[test]
    fn short_final_batch() {
        let mut plan = BatchPlan::new(10, 4, &mut rng::stream(0, 0));
        let sizes: Vec<usize> = plan.next_batches(3).iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        assert_eq!(plan.cursor(), 10);
        assert!(plan.next_batches(3).is_empty());
    }

    #[test]
    fn reshuffle_changes_order() {
        let mut r = rng::stream(1, 0);
        let mut plan = BatchPlan::new(50, 8, &mut r);
        let first = plan.order().to_vec();
        plan.next_batches(100);
        plan.reshuffle(&mut r);
        assert_eq!(plan.cursor(), 0);
        assert_ne!(plan.order(), first.as_slice());
    }

    proptest! {
        #[test]
        fn an_epoch_visits_every_index_once(n in 1usize..200, bs in 1usize..17, count in 1usize..5, seed in 0u64..1000) {
            let mut plan = BatchPlan::new(n, bs, &mut rng::stream(seed, 0));
            let mut seen = Vec::new();
            loop {
                let got = plan.next_batches(count);
                if got.is_empty() {
                    break;
                }
                prop_assert!(got.len() <= count);
                seen.extend(got.into_iter().flatten());
            }
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
            prop_assert_eq!(plan.batches_per_epoch(), n.div_ceil(bs));
        }
    }
}
