//! Counter-based splittable random number streams.
//!
//! Every random draw in the crate comes from a stream keyed by
//! `(seed, round, path, step, purpose, dim)`. Streams are value-split: two
//! streams with different keys are statistically independent, and a stream's
//! output depends only on its key and the draw counter. Replicated
//! simulations therefore parallelize over paths with no shared state, and a
//! fixed seed reproduces every artifact bit for bit regardless of thread
//! scheduling.

use statrs::function::gamma::ln_gamma;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer; full avalanche on 64 bits.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds one key component into a running hash.
#[inline]
fn fold(h: u64, v: u64) -> u64 {
    mix64(h ^ v.wrapping_mul(GOLDEN))
}

/// What a stream is used for. Separating purposes keeps streams independent:
/// e.g. sign flips never perturb magnitude draws, so variance-reduction
/// experiments stay reproducible.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Purpose {
    /// Inverse-CDF magnitudes shared by intensity estimation and the KL estimator.
    KlMagnitude,
    /// Poisson jump counts.
    JumpCount,
    /// Rejection-sampler proposals.
    Proposal,
    /// Rejection-sampler acceptance uniforms.
    AcceptU,
    /// Conditionally Gaussian jump draws.
    JumpNormal,
    /// Ground-truth jump magnitudes.
    Magnitude,
    /// Ground-truth jump signs.
    Sign,
    /// Observation noise.
    ObsNoise,
    /// Brownian increments (Gaussian baseline).
    Brownian,
    /// Parameter initialization.
    Init,
    /// Forecast boundary-sample resampling.
    Boundary,
}

impl Purpose {
    #[inline]
    fn tag(self) -> u64 {
        match self {
            Purpose::KlMagnitude => 1,
            Purpose::JumpCount => 2,
            Purpose::Proposal => 3,
            Purpose::AcceptU => 4,
            Purpose::JumpNormal => 5,
            Purpose::Magnitude => 6,
            Purpose::Sign => 7,
            Purpose::ObsNoise => 8,
            Purpose::Brownian => 9,
            Purpose::Init => 10,
            Purpose::Boundary => 11,
        }
    }
}

/// Handle for deriving per-(step, purpose, dim) streams of one simulated path.
#[derive(Clone, Copy, Debug)]
pub struct Streams {
    seed: u64,
    round: u64,
    path: u64,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        Streams { seed, round: 0, path: 0 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Sub-keys by training iteration (or any outer replication index).
    pub fn round(self, round: u64) -> Self {
        Streams { round, ..self }
    }

    /// Sub-keys by path index.
    pub fn path(self, path: u64) -> Self {
        Streams { path, ..self }
    }

    pub fn stream(&self, step: u64, purpose: Purpose, dim: usize) -> CounterRng {
        let mut h = fold(0x243f_6a88_85a3_08d3, self.seed);
        h = fold(h, self.round);
        h = fold(h, self.path);
        h = fold(h, step);
        h = fold(h, purpose.tag());
        h = fold(h, dim as u64);
        CounterRng::from_key(h)
    }
}

/// A SplitMix64 generator positioned by a 64-bit stream key.
#[derive(Clone, Debug)]
pub struct CounterRng {
    key: u64,
    ctr: u64,
    normal_cache: Option<f64>,
}

impl CounterRng {
    pub fn from_key(key: u64) -> Self {
        CounterRng { key, ctr: 0, normal_cache: None }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let z = self.key.wrapping_add(self.ctr.wrapping_mul(GOLDEN));
        self.ctr += 1;
        mix64(z)
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    #[inline]
    pub fn u01(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Uniform strictly inside `(0, 1)`.
    #[inline]
    pub fn open01(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Uniform in `[lo, hi)`.
    #[inline]
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.u01()
    }

    /// Standard normal via Box-Muller; the second draw of each pair is cached.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.normal_cache.take() {
            return z;
        }
        let u1 = self.open01();
        let u2 = self.u01();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.normal_cache = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Fair sign flip returning `+1.0` or `-1.0`.
    #[inline]
    pub fn sign(&mut self) -> f64 {
        if self.next_u64() & 1 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Poisson draw. Inversion below mean 30, Hormann's transformed
    /// rejection (PTRS) above; exact at all means with no overflow.
    pub fn poisson(&mut self, mean: f64) -> u64 {
        assert!(mean.is_finite() && mean >= 0.0, "poisson mean must be finite and >= 0");
        if mean == 0.0 {
            return 0;
        }
        if mean < 30.0 {
            self.poisson_inversion(mean)
        } else {
            self.poisson_ptrs(mean)
        }
    }

    fn poisson_inversion(&mut self, mean: f64) -> u64 {
        let mut p = (-mean).exp();
        let mut cum = p;
        let u = self.u01();
        let mut k = 0u64;
        while u > cum {
            k += 1;
            p *= mean / k as f64;
            cum += p;
            // Uniform strictly below 1 and the cumulative tends to 1, so this
            // terminates; the guard covers rounding at extreme quantiles.
            if k > 1000 + (20.0 * mean) as u64 {
                break;
            }
        }
        k
    }

    fn poisson_ptrs(&mut self, mean: f64) -> u64 {
        let b = 0.931 + 2.53 * mean.sqrt();
        let a = -0.059 + 0.024_83 * b;
        let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
        let v_r = 0.9277 - 3.6224 / (b - 2.0);
        let ln_mean = mean.ln();
        loop {
            let u = self.u01() - 0.5;
            let v = self.u01();
            let us = 0.5 - u.abs();
            let kf = ((2.0 * a / us + b) * u + mean + 0.43).floor();
            if us >= 0.07 && v <= v_r {
                return kf as u64;
            }
            if kf < 0.0 || (us < 0.013 && v > us) {
                continue;
            }
            let k = kf;
            let lhs = (v * inv_alpha / (a / (us * us) + b)).ln();
            let rhs = k * ln_mean - mean - ln_gamma(k + 1.0);
            if lhs <= rhs {
                return k as u64;
            }
        }
    }
}
