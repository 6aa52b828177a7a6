use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Matrix;

/// Seeded, platform-independent random stream (ChaCha8).
///
/// Single-owner: pass `&mut Rng` explicitly. Use [`Rng::fork`] to derive
/// independent child streams before fanning work out to threads.
#[derive(Debug, Clone)]
pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Child stream seeded from this stream's next output.
    pub fn fork(&mut self) -> Rng {
        Rng::new(self.inner.next_u64())
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Standard normal draw (Box–Muller, one value per call).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

/// Kaiming-normal matrix: i.i.d. `N(0, 2/cols)`, i.e. fan-in = input dimension.
pub fn kaiming_init(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    assert!(rows >= 1 && cols >= 1, "kaiming_init needs positive dimensions");
    let std = (2.0 / cols as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| std * rng.normal())
}

/// Matrix of i.i.d. `N(0, std²)` entries.
pub fn normal_matrix(rows: usize, cols: usize, std: f64, rng: &mut Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| std * rng.normal())
}
