//! Portable seeded random stream.
//!
//! All randomness in the crate flows through [`SeededStream`] so that a seed
//! fully determines every split and every synthetic dataset. The stream is
//! xoshiro256++ seeded through SplitMix64 (the reference seeding procedure),
//! and every derived variate is defined bit-exactly here:
//!
//! * `uniform()`  = `(next_u64() >> 11) * 2^-53`, in `[0, 1)`
//! * `below(n)`   = high 64 bits of `next_u64() * n` (128-bit product)
//! * `normal()`   = Box–Muller, cosine branch only, consuming two uniforms:
//!   `sqrt(-2 ln(1 - u1)) * cos(2π u2)`

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

#[derive(Debug, Clone)]
pub struct SeededStream {
    inner: Xoshiro256PlusPlus,
}

impl SeededStream {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: Xoshiro256PlusPlus::seed_from_u64(seed),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Integer in `0..n`. `n` must be non-zero.
    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// In-place Fisher–Yates shuffle, walking from the back.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}
