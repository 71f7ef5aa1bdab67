use rand_core::{RngCore, SeedableRng};
use rand_xorshift::XorShiftRng;

use super::Matrix;

const STREAM_MIX: u64 = 0x9E37_79B9_7F4A_7C15;

/// Seeded, platform-independent random source.
///
/// The generator is Marsaglia's xorshift128 (`rand_xorshift::XorShiftRng`),
/// seeded from a `u64` by the PCG32 expansion of `rand_core::SeedableRng::seed_from_u64`.
/// Derived quantities use fixed transforms so they can be reproduced elsewhere:
///
/// * `next_u64`: two successive 32-bit outputs, low word first.
/// * `uniform`: `(next_u64 >> 11) · 2⁻⁵³`, in `[0, 1)`.
/// * `gaussian`: Box–Muller cosine branch, `sqrt(-2 ln(1 - u1)) · cos(2π u2)`,
///   one normal per two uniforms (no caching).
#[derive(Clone, Debug)]
pub struct Rng {
    inner: XorShiftRng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            inner: XorShiftRng::seed_from_u64(seed),
        }
    }

    /// Independent stream keyed by `(seed, stream)`.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        Rng::new(seed ^ stream.wrapping_add(1).wrapping_mul(STREAM_MIX))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform index in `0..n` by rejection-free multiply-shift on 64 bits.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn gaussian(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn gaussian_matrix(&mut self, rows: usize, cols: usize, std: f64) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| std * self.gaussian())
    }

    pub fn uniform_matrix(&mut self, rows: usize, cols: usize, bound: f64) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| self.uniform_range(-bound, bound))
    }
}
