//! Splittable deterministic random number generation.
//!
//! Every stochastic site in the crate draws from a [`SplitRng`] forked by a
//! purpose-specific stream id. Forking is a pure function of
//! `(seed, stream_id)` — it never consumes parent state — so the values a
//! stream yields cannot change with call order, worker count, or which
//! optional pipeline stages happen to run.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Seeded generator with deterministic, platform-independent output.
#[derive(Clone, Debug)]
pub struct SplitRng {
    seed: u64,
    inner: ChaCha8Rng,
}

/// splitmix64 finalizer; avalanches (seed, stream) into a child seed.
fn mix(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SplitRng {
    pub fn new(seed: u64) -> Self {
        Self { seed, inner: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Child generator for `stream_id`, independent of parent consumption.
    pub fn fork(&self, stream_id: u64) -> SplitRng {
        SplitRng::new(mix(self.seed, stream_id))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in [0, 1) with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in [0, n). Modulo bias is below n/2^64 and irrelevant
    /// at the pool sizes used here.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        (self.next_u64() % n as u64) as usize
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Standard normal draw (Box-Muller, cosine branch).
    pub fn normal(&mut self) -> f64 {
        let u1 = loop {
            let u = self.uniform();
            if u > 0.0 {
                break u;
            }
        };
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// Free-function alias for the forking operation.
pub fn rng_fork(r: &SplitRng, stream_id: u64) -> SplitRng {
    r.fork(stream_id)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fork_is_pure_in_seed_and_stream() {
        let root = SplitRng::new(7);
        let mut a = root.fork(0);
        let mut b = root.fork(0);
        for _ in 0..64 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn fork_after_consumption_matches_fresh_fork() {
        let mut root = SplitRng::new(7);
        let fresh = root.fork(3);
        root.next_u64();
        root.next_u64();
        let mut later = root.fork(3);
        let mut fresh = fresh;
        assert_eq!(fresh.next_u64(), later.next_u64());
    }

    #[test]
    fn distinct_streams_differ() {
        let root = SplitRng::new(7);
        let mut a = root.fork(0);
        let mut b = root.fork(1);
        assert_ne!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn distinct_seeds_differ() {
        let mut a = SplitRng::new(7).fork(0);
        let mut b = SplitRng::new(8).fork(0);
        assert_ne!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut r = SplitRng::new(42);
        for _ in 0..1000 {
            let u = r.uniform();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn normal_moments_are_sane() {
        let mut r = SplitRng::new(11);
        let n = 20_000;
        let draws: Vec<f64> = (0..n).map(|_| r.normal()).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.03, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }
}
