//! Privacy parameters, Gaussian noise calibration and seeded randomness.
//!
//! All randomness in the crate comes from a [`RandomStream`]: a `(seed,
//! stream_index)` token that maps to a ChaCha20 keystream. The same token
//! always yields the same samples, independent of thread count, and tokens are
//! cheap to copy and send across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::SymMatrix;

/// The `(ε, δ, Δ)` triple of a release.
///
/// `sensitivity` is the ℓ2 distance bound between the release targets of
/// adjacent inputs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacyParams {
    epsilon: f64,
    delta: f64,
    sensitivity: f64,
}

impl PrivacyParams {
    pub fn new(epsilon: f64, delta: f64, sensitivity: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::InvalidParams(format!("epsilon must be > 0, got {epsilon}")));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidParams(format!("delta must lie in (0, 1), got {delta}")));
        }
        if !(sensitivity.is_finite() && sensitivity > 0.0) {
            return Err(Error::InvalidParams(format!(
                "sensitivity must be > 0, got {sensitivity}"
            )));
        }
        Ok(PrivacyParams {
            epsilon,
            delta,
            sensitivity,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn sensitivity(&self) -> f64 {
        self.sensitivity
    }

    /// Same `(ε, δ)` with a different sensitivity.
    pub fn with_sensitivity(&self, sensitivity: f64) -> Result<Self> {
        PrivacyParams::new(self.epsilon, self.delta, sensitivity)
    }
}

/// Per-coordinate standard deviation of the additive noise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    sigma: f64,
}

impl NoiseSpec {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::InvalidParams(format!("sigma must be >= 0, got {sigma}")));
        }
        Ok(NoiseSpec { sigma })
    }

    pub fn zero() -> Self {
        NoiseSpec { sigma: 0.0 }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

/// Gaussian mechanism calibration: `σ = Δ·sqrt(2·ln(2/δ))/ε`.
pub fn calibrate_sigma(params: &PrivacyParams) -> NoiseSpec {
    let sigma = params.sensitivity * (2.0 * (2.0 / params.delta).ln()).sqrt() / params.epsilon;
    NoiseSpec { sigma }
}

/// A reproducible source of randomness.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RandomStream {
    pub seed: u64,
    pub stream_index: u64,
}

impl RandomStream {
    pub fn new(seed: u64) -> Self {
        RandomStream {
            seed,
            stream_index: 0,
        }
    }

    pub fn with_index(seed: u64, stream_index: u64) -> Self {
        RandomStream { seed, stream_index }
    }

    /// Fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_index);
        rng
    }

    /// Child stream number `index`. Children of distinct parents, or distinct
    /// children of one parent, never share a `(seed, stream_index)` pair
    /// barring a 64-bit hash collision.
    pub fn substream(&self, index: u64) -> RandomStream {
        RandomStream {
            seed: splitmix64(splitmix64(self.seed) ^ self.stream_index.rotate_left(32) ^ 0xD1B5_4A32_D192_ED03),
            stream_index: index,
        }
    }
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fill_gaussian<R: Rng>(rng: &mut R, len: usize, spec: NoiseSpec) -> Vec<f64> {
    if spec.sigma == 0.0 {
        return vec![0.0; len];
    }
    (0..len)
        .map(|_| spec.sigma * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn fill_symmetric<R: Rng>(rng: &mut R, order: usize, spec: NoiseSpec) -> SymMatrix {
    if spec.sigma == 0.0 {
        return SymMatrix::zeros(order);
    }
    // Row-major over the upper triangle, diagonal included.
    SymMatrix::from_fn(order, |_, _| spec.sigma * rng.sample::<f64, _>(StandardNormal))
}

/// `len` i.i.d. `N(0, σ²)` samples.
pub fn sample_gaussian(len: usize, spec: NoiseSpec, stream: RandomStream) -> Vec<f64> {
    fill_gaussian(&mut stream.rng(), len, spec)
}

/// Symmetric matrix with i.i.d. `N(0, σ²)` entries on and above the diagonal,
/// mirrored below.
pub fn sample_symmetric_gaussian(order: usize, spec: NoiseSpec, stream: RandomStream) -> SymMatrix {
    fill_symmetric(&mut stream.rng(), order, spec)
}

/// Where a release engine gets its single noise draw from.
///
/// Engines take a `NoiseSource` so tests and audits can wrap the default
/// source with [`CountingNoise`].
pub trait NoiseSource {
    fn symmetric(&mut self, order: usize, spec: NoiseSpec) -> SymMatrix;
    fn flat(&mut self, len: usize, spec: NoiseSpec) -> Vec<f64>;
}

/// The default source: consecutive draws continue one ChaCha keystream, so
/// the first draw equals [`sample_symmetric_gaussian`] (or
/// [`sample_gaussian`]) on the same stream.
pub struct StreamNoise {
    rng: ChaCha20Rng,
}

impl StreamNoise {
    pub fn new(stream: RandomStream) -> Self {
        StreamNoise { rng: stream.rng() }
    }
}

impl NoiseSource for StreamNoise {
    fn symmetric(&mut self, order: usize, spec: NoiseSpec) -> SymMatrix {
        fill_symmetric(&mut self.rng, order, spec)
    }

    fn flat(&mut self, len: usize, spec: NoiseSpec) -> Vec<f64> {
        fill_gaussian(&mut self.rng, len, spec)
    }
}

/// Wraps a source and counts draws.
pub struct CountingNoise<N> {
    inner: N,
    draws: usize,
}

impl<N: NoiseSource> CountingNoise<N> {
    pub fn new(inner: N) -> Self {
        CountingNoise { inner, draws: 0 }
    }

    pub fn draws(&self) -> usize {
        self.draws
    }
}

impl<N: NoiseSource> NoiseSource for CountingNoise<N> {
    fn symmetric(&mut self, order: usize, spec: NoiseSpec) -> SymMatrix {
        self.draws += 1;
        self.inner.symmetric(order, spec)
    }

    fn flat(&mut self, len: usize, spec: NoiseSpec) -> Vec<f64> {
        self.draws += 1;
        self.inner.flat(len, spec)
    }
}
