//! Counter-based random streams.
//!
//! An [`Rng`] is a ChaCha8 keystream keyed by the seed and positioned on a
//! stream id derived from a path of labels. Substreams are derived by value,
//! so handing `rng.substream("class-3")` to a worker gives the same numbers
//! no matter how work is scheduled.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};

use crate::error::{CrustError, Result};

#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn mix_label(stream: u64, label: &[u8]) -> u64 {
    let mut h = FNV_OFFSET ^ stream.rotate_left(17);
    for &b in stream.to_le_bytes().iter().chain(label) {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    // splitmix64 finaliser
    h ^= h >> 30;
    h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Rng {
            seed,
            stream,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream identified by `label`, derived from this stream's identity
    /// (not its current position).
    pub fn substream(&self, label: &str) -> Rng {
        Self::with_stream(self.seed, mix_label(self.stream, label.as_bytes()))
    }

    pub fn substream_indexed(&self, label: &str, index: u64) -> Rng {
        let s = mix_label(self.stream, label.as_bytes());
        Self::with_stream(self.seed, mix_label(s, &index.to_le_bytes()))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..n`, platform independent.
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0, "index range must be nonempty");
        // Lemire's nearly-divisionless method on u64.
        let n = n as u64;
        let mut m = (self.next_u64() as u128) * (n as u128);
        let mut low = m as u64;
        if low < n {
            let threshold = n.wrapping_neg() % n;
            while low < threshold {
                m = (self.next_u64() as u128) * (n as u128);
                low = m as u64;
            }
        }
        (m >> 64) as usize
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }

    /// `count` distinct elements drawn uniformly without replacement, in draw order.
    pub fn sample_without_replacement<T: Copy>(&mut self, pool: &[T], count: usize) -> Vec<T> {
        assert!(count <= pool.len());
        let mut pool = pool.to_vec();
        for i in 0..count {
            let j = i + self.index(pool.len() - i);
            pool.swap(i, j);
        }
        pool.truncate(count);
        pool
    }

    /// Draw from the symmetric Beta(α, α) distribution.
    pub fn beta_sample(&mut self, alpha: f64) -> Result<f64> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(CrustError::InvalidParameter(format!(
                "beta shape must be positive, got {alpha}"
            )));
        }
        let dist = Beta::new(alpha, alpha)
            .map_err(|e| CrustError::InvalidParameter(format!("beta({alpha}): {e}")))?;
        Ok(dist.sample(&mut self.inner).clamp(0.0, 1.0))
    }

    /// Bernoulli draw, used by tests and fault hooks.
    pub fn coin(&mut self, p: f64) -> bool {
        self.inner.random_bool(p.clamp(0.0, 1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::new(5);
        let mut b = Rng::new(5);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn substreams_do_not_depend_on_position() {
        let mut a = Rng::new(5);
        let fresh = a.substream("x").next_u64();
        a.next_u64();
        assert_eq!(a.substream("x").next_u64(), fresh);
        assert_ne!(a.substream("y").next_u64(), fresh);
        assert_ne!(
            a.substream_indexed("c", 0).next_u64(),
            a.substream_indexed("c", 1).next_u64()
        );
    }

    #[test]
    fn beta_rejects_nonpositive() {
        let mut r = Rng::new(1);
        assert!(r.beta_sample(0.0).is_err());
        assert!(r.beta_sample(-1.0).is_err());
    }

    #[test]
    fn index_in_range() {
        let mut r = Rng::new(3);
        let mut seen = [0usize; 7];
        for _ in 0..7000 {
            seen[r.index(7)] += 1;
        }
        assert!(seen.iter().all(|&c| c > 800 && c < 1200));
    }

    #[test]
    fn sampling_without_replacement_is_distinct() {
        let mut r = Rng::new(8);
        let pool: Vec<usize> = (0..20).collect();
        let mut s = r.sample_without_replacement(&pool, 20);
        s.sort();
        assert_eq!(s, pool);
    }
}
