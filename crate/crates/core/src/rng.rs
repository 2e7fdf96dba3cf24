//! Deterministic random streams.
//!
//! Every stochastic component takes a [`Prng`] so that a single `--seed`
//! reproduces the whole pipeline bit for bit. Streams for distinct purposes
//! are derived from the master seed with a label hash, so adding a consumer
//! does not shift the draws of another.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::real::Real;

/// Seeded pseudo-random generator with the distribution helpers this crate
/// needs. Uniform and normal draws are built directly on `next_u64` so the
/// stream is stable across `rand` ecosystem versions.
#[derive(Debug, Clone)]
pub struct Prng {
    inner: ChaCha8Rng,
    /// Cached second output of the Box-Muller pair.
    spare_normal: Option<f64>,
}

impl Prng {
    pub fn seed_from_u64(seed: u64) -> Self {
        Prng {
            inner: ChaCha8Rng::seed_from_u64(seed),
            spare_normal: None,
        }
    }

    /// Derive an independent stream for `label` from `seed`.
    pub fn derive(seed: u64, label: &str) -> Self {
        Self::seed_from_u64(seed ^ fnv1a(label.as_bytes()))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn uniform_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform<T: Real>(&mut self) -> T {
        T::c(self.uniform_f64())
    }

    /// Uniform in [lo, hi).
    pub fn uniform_range<T: Real>(&mut self, lo: T, hi: T) -> T {
        lo + (hi - lo) * self.uniform::<T>()
    }

    /// Uniform integer in [0, n). `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // Modulo bias is negligible for the desk-scale n used here.
        (self.next_u64() % n as u64) as usize
    }

    /// Standard normal draw (Box-Muller).
    pub fn normal_f64(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        loop {
            let u1 = self.uniform_f64();
            if u1 <= f64::MIN_POSITIVE {
                continue;
            }
            let u2 = self.uniform_f64();
            let r = (-2.0 * u1.ln()).sqrt();
            let theta = 2.0 * std::f64::consts::PI * u2;
            self.spare_normal = Some(r * theta.sin());
            return r * theta.cos();
        }
    }

    pub fn normal<T: Real>(&mut self) -> T {
        T::c(self.normal_f64())
    }

    /// Vector of standard normal draws.
    pub fn normal_vec<T: Real>(&mut self, len: usize) -> Vec<T> {
        (0..len).map(|_| self.normal()).collect()
    }

    /// Bernoulli trial with success probability `p`.
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform_f64() < p
    }

    /// Sample `k` distinct indices from [0, n) (partial Fisher-Yates).
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "cannot sample {k} distinct from {n}");
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below(n - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }
}

/// FNV-1a hash, used for stream labels and the token-bag text encoder.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}
