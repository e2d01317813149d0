use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Real, Tensor};

/// Splittable deterministic random source.
///
/// Every consumer of randomness (weight init, batch shuffling, data
/// synthesis) derives its own child stream by label, so draws in one place
/// can never perturb draws in another. The streams are counter-based ChaCha
/// generators; identical seeds give bit-identical sequences across runs.
#[derive(Clone, Debug)]
pub struct SplitRng {
    key: u64,
    stream: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn hash_label(label: &str) -> u64 {
    // FNV-1a; the label space is tiny and fixed, this only needs to separate
    // streams, not resist adversaries.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl SplitRng {
    pub fn new(seed: u64) -> Self {
        let key = splitmix64(seed);
        Self {
            key,
            stream: ChaCha8Rng::seed_from_u64(key),
        }
    }

    /// Child stream derived from this generator's key and a label.
    /// Independent of how much either stream has been consumed.
    pub fn split(&self, label: &str) -> Self {
        SplitRng::new(self.key ^ hash_label(label))
    }

    /// Child stream derived from an index, for per-epoch / per-item streams.
    pub fn split_index(&self, index: u64) -> Self {
        SplitRng::new(self.key ^ splitmix64(index.wrapping_add(0x5851_f42d_4c95_7f2d)))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.stream.random()
    }

    /// Uniform draw in `[0, n)`.
    pub fn index(&mut self, n: usize) -> usize {
        self.stream.random_range(0..n)
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.stream.random_range(lo..hi)
    }

    /// Standard normal draw.
    pub fn normal(&mut self) -> f64 {
        self.stream.sample(StandardNormal)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.stream);
    }

    /// Tensor of i.i.d. normal draws with the given standard deviation.
    pub fn normal_tensor<T: Real>(&mut self, shape: &[usize], std: f64) -> Tensor<T> {
        Tensor::from_fn(shape, |_| T::from_f64(self.normal() * std))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = SplitRng::new(42);
        let mut b = SplitRng::new(42);
        for _ in 0..32 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn splits_are_independent_of_consumption() {
        let mut a = SplitRng::new(7);
        let b = SplitRng::new(7);
        // Consuming from the parent must not shift the child stream.
        let _ = a.next_u64();
        let mut ca = a.split("weights");
        let mut cb = b.split("weights");
        for _ in 0..8 {
            assert_eq!(ca.next_u64(), cb.next_u64());
        }
    }

    #[test]
    fn labeled_splits_differ() {
        let root = SplitRng::new(7);
        let mut w = root.split("weights");
        let mut s = root.split("batches");
        let draws_w: Vec<u64> = (0..4).map(|_| w.next_u64()).collect();
        let draws_s: Vec<u64> = (0..4).map(|_| s.next_u64()).collect();
        assert_ne!(draws_w, draws_s);
    }
}
