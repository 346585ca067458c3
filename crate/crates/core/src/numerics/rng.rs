use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use sha2::{Digest, Sha256};

/// Client id used for streams that belong to the server or to pooled
/// (centralized) training rather than to one client.
pub const SERVER: u64 = u64::MAX;

/// Identifies one independent random stream under a master seed.
///
/// `index` is usually the round number; data generation uses it for the
/// sample index instead.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub client: u64,
    pub index: u64,
    pub tag: String,
}

impl StreamKey {
    pub fn new(client: u64, index: u64, tag: impl Into<String>) -> Self {
        StreamKey {
            client,
            index,
            tag: tag.into(),
        }
    }
}

/// Counter-based random stream: the generator state is a pure function of
/// `(master_seed, key)`, so streams can be created in any order or on any
/// thread and still produce identical draws.
#[derive(Debug, Clone)]
pub struct RngStream {
    master_seed: u64,
    key: StreamKey,
    rng: ChaCha8Rng,
}

/// Derives the stream for `key` under `master_seed`.
pub fn rng_derive(master_seed: u64, key: StreamKey) -> RngStream {
    let mut hasher = Sha256::new();
    hasher.update(b"fedtrade.stream.v1");
    hasher.update(master_seed.to_le_bytes());
    hasher.update(key.client.to_le_bytes());
    hasher.update(key.index.to_le_bytes());
    hasher.update((key.tag.len() as u64).to_le_bytes());
    hasher.update(key.tag.as_bytes());
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(digest.as_slice());
    RngStream {
        master_seed,
        key,
        rng: ChaCha8Rng::from_seed(seed),
    }
}

impl RngStream {
    pub fn new(master_seed: u64, client: u64, index: u64, tag: &str) -> Self {
        rng_derive(master_seed, StreamKey::new(client, index, tag))
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn key(&self) -> &StreamKey {
        &self.key
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Symmetric Beta(alpha, alpha) draw. Panics if `alpha <= 0`.
    pub fn beta(&mut self, alpha: f64) -> f64 {
        Beta::new(alpha, alpha)
            .expect("beta parameter must be positive")
            .sample(&mut self.rng)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Uniform integer in `0..n`. Panics if `n == 0`.
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.rng);
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        self.shuffle(&mut idx);
        idx
    }

    /// Samples an index from unnormalised non-negative weights.
    pub fn categorical(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let mut u = self.uniform() * total;
        for (i, &w) in weights.iter().enumerate() {
            if u < w {
                return i;
            }
            u -= w;
        }
        weights.len() - 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_key_same_draws() {
        let mut a = RngStream::new(42, 1, 0, "init");
        let mut b = RngStream::new(42, 1, 0, "init");
        for _ in 0..100 {
            assert_eq!(a.uniform().to_bits(), b.uniform().to_bits());
        }
    }

    #[test]
    fn different_clients_differ() {
        let mut a = RngStream::new(42, 1, 0, "init");
        let mut b = RngStream::new(42, 2, 0, "init");
        assert_ne!(a.uniform(), b.uniform());
        let mut c = RngStream::new(42, 1, 0, "init2");
        let mut d = RngStream::new(43, 1, 0, "init");
        let first = RngStream::new(42, 1, 0, "init").uniform();
        assert_ne!(first, c.uniform());
        assert_ne!(first, d.uniform());
    }

    #[test]
    fn tag_boundaries_do_not_collide() {
        // Length prefix keeps ("ab", index) and ("a", ...) streams apart.
        let x = RngStream::new(0, 0, 0, "ab").uniform();
        let y = RngStream::new(0, 0, 0, "a").uniform();
        assert_ne!(x, y);
    }

    #[test]
    fn categorical_respects_zero_weights() {
        let mut r = RngStream::new(5, 0, 0, "cat");
        for _ in 0..1000 {
            assert_eq!(r.categorical(&[0.0, 1.0, 0.0]), 1);
        }
    }
}
