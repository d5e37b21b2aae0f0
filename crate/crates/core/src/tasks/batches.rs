use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Minibatch indices as a pure function of `(seed, step)`.
///
/// Each epoch is a fresh permutation drawn from its own ChaCha stream, so any
/// step's batch can be regenerated without replaying earlier ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchSchedule {
    pub n: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl BatchSchedule {
    pub fn new(n: usize, batch_size: usize, seed: u64) -> Self {
        assert!(n > 0, "batch schedule over an empty dataset");
        Self {
            n,
            batch_size: batch_size.clamp(1, n),
            seed,
        }
    }

    pub fn batches_per_epoch(&self) -> u64 {
        (self.n / self.batch_size) as u64
    }

    pub fn epoch_permutation(&self, epoch: u64) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(epoch);
        let mut order: Vec<usize> = (0..self.n).collect();
        order.shuffle(&mut rng);
        order
    }

    /// Batch used by 0-based inner step `step`; the incomplete tail of each epoch is dropped.
    pub fn batch(&self, step: u64) -> Vec<usize> {
        let per_epoch = self.batches_per_epoch();
        let epoch = step / per_epoch;
        let k = (step % per_epoch) as usize;
        let order = self.epoch_permutation(epoch);
        order[k * self.batch_size..(k + 1) * self.batch_size].to_vec()
    }
}
