use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

/// Seeded random stream.
///
/// Backed by ChaCha20 (a counter-based generator), so a given seed produces
/// the same stream on every platform. Normal deviates come from the ziggurat
/// sampler in `rand_distr`.
///
/// An `Rng` is never shared between tasks. Parallel work derives child
/// streams with [`Rng::child`], whose seeds depend only on the parent seed and
/// the child index, never on scheduling.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha20Rng,
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the `index`-th child of a stream seeded with `parent`.
///
/// `derive_seed(s, i)` is a SplitMix64 hash of the pair; distinct indices give
/// unrelated seeds.
pub fn derive_seed(parent: u64, index: u64) -> u64 {
    splitmix64(splitmix64(parent) ^ index.wrapping_mul(GOLDEN_GAMMA).rotate_left(17))
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha20Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn child(&self, index: u64) -> Rng {
        Rng::new(derive_seed(self.seed, index))
    }

    /// Standard normal deviate.
    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// `dim` i.i.d. `N(0, variance)` entries. `dim = 0` gives an empty vector.
    pub fn gaussian_vector(&mut self, dim: usize, variance: f64) -> Vec<f64> {
        assert!(
            variance > 0.0 && variance.is_finite(),
            "gaussian_vector: variance must be positive and finite, got {variance}"
        );
        let sd = variance.sqrt();
        (0..dim).map(|_| sd * self.normal()).collect()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "Rng::below(0)");
        self.inner.random_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// `+1.0` or `-1.0` with equal probability.
    pub fn sign(&mut self) -> f64 {
        if self.inner.random::<bool>() {
            1.0
        } else {
            -1.0
        }
    }

    /// A draw from any `rand` distribution, using this stream.
    pub fn sample<T, D: Distribution<T>>(&mut self, dist: &D) -> T {
        dist.sample(&mut self.inner)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
