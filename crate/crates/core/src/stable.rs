//! The untilted truncated symmetric alpha-stable jump law.
//!
//! Jumps smaller than the threshold `tau` are discarded, leaving a finite
//! compound-Poisson process with density `|y|^(-1-alpha)` on `|y| >= tau`
//! and one-sided mass `tau^(-alpha) / alpha`. This module provides tail
//! masses, inverse-CDF magnitude sampling, and the ground-truth Euler
//! simulator used both for synthetic data generation and as an independent
//! oracle for the tilted simulator.

use crate::error::{Error, Result};
use crate::neural::drift::Drift;
use crate::rng::{Purpose, Streams};
use serde::{Deserialize, Serialize};

/// Parameters of the truncated symmetric stable jump law.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StableSpec {
    /// Stability index in `(0, 2)`; smaller means heavier tails.
    pub alpha: f64,
    /// Truncation threshold in state units; jumps below it are discarded.
    pub tau: f64,
    /// Gaussian scale of the variance-mixture representation.
    pub sigma_g: f64,
}

impl StableSpec {
    pub fn new(alpha: f64, tau: f64, sigma_g: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 2.0) {
            return Err(Error::config(format!("alpha must be in (0, 2), got {alpha}")));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::config(format!("tau must be positive, got {tau}")));
        }
        if !(sigma_g > 0.0 && sigma_g.is_finite()) {
            return Err(Error::config(format!("sigma_g must be positive, got {sigma_g}")));
        }
        Ok(StableSpec { alpha, tau, sigma_g })
    }

    /// Mass of the truncated measure on `[tau, inf)`: `tau^(-alpha) / alpha`.
    /// The two-sided mass is twice this.
    pub fn one_sided_mass(&self) -> f64 {
        self.tau.powf(-self.alpha) / self.alpha
    }

    /// Inverse-CDF jump magnitude `tau * (1 - u)^(-1/alpha)`; always `>= tau`.
    pub fn sample_jump_magnitude(&self, u: f64) -> f64 {
        assert!((0.0..1.0).contains(&u), "inverse-CDF argument must be in [0, 1), got {u}");
        self.tau * (1.0 - u).powf(-1.0 / self.alpha)
    }

    /// CDF of the one-sided magnitude law: `1 - (tau/y)^alpha` for `y >= tau`.
    pub fn magnitude_cdf(&self, y: f64) -> f64 {
        if y < self.tau {
            0.0
        } else {
            1.0 - (self.tau / y).powf(self.alpha)
        }
    }
}

/// Configuration for ground-truth compound-Poisson Euler simulation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GroundTruthConfig {
    pub spec: StableSpec,
    pub drift: Drift,
    pub horizon: f64,
    pub n_steps: usize,
    pub x0: Vec<f64>,
    pub seed: u64,
}

impl GroundTruthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0) {
            return Err(Error::config("horizon must be positive"));
        }
        if self.n_steps == 0 {
            return Err(Error::config("n_steps must be at least 1"));
        }
        if self.x0.is_empty() {
            return Err(Error::config("x0 must have at least one dimension"));
        }
        Ok(())
    }
}

/// A simulated trajectory on a time grid, with its per-step jump events.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentPath {
    /// Grid of `n_steps + 1` strictly increasing times.
    pub times: Vec<f64>,
    /// Row-major `(n_steps + 1) x d` state matrix.
    pub states: Vec<f64>,
    pub dim: usize,
    /// Per-step `(dim, jump size)` events, length `n_steps`.
    pub jump_log: Vec<Vec<(usize, f64)>>,
    pub seed: u64,
}

impl LatentPath {
    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn state(&self, node: usize) -> &[f64] {
        &self.states[node * self.dim..(node + 1) * self.dim]
    }

    pub fn final_state(&self) -> &[f64] {
        self.state(self.n_steps())
    }

    pub fn total_jumps(&self) -> usize {
        self.jump_log.iter().map(|s| s.len()).sum()
    }

    /// Replays `x0 + drift * dt + jumps` from the log and reports the largest
    /// deviation from the stored states. Zero up to float reassociation.
    pub fn reconstruction_error(&self, drift: &Drift) -> f64 {
        let d = self.dim;
        let mut x = self.state(0).to_vec();
        let mut f = vec![0.0; d];
        let mut worst = 0.0f64;
        for j in 0..self.n_steps() {
            let dt = self.times[j + 1] - self.times[j];
            drift.eval_into(&x, &mut f);
            for i in 0..d {
                x[i] += f[i] * dt;
            }
            for &(dim, size) in &self.jump_log[j] {
                x[dim] += size;
            }
            for i in 0..d {
                worst = worst.max((x[i] - self.state(j + 1)[i]).abs());
            }
        }
        worst
    }
}

/// Euler scheme for the prior SDE `dX = f(X) dt + dL` on a uniform grid.
///
/// Per step and dimension the jump count is Poisson with mean
/// `2 * one_sided_mass * dt`; magnitudes come from the inverse CDF with an
/// independent fair sign flip. Deterministic given the seed.
pub fn simulate_ground_truth(cfg: &GroundTruthConfig) -> Result<LatentPath> {
    cfg.validate()?;
    let d = cfg.x0.len();
    let n = cfg.n_steps;
    let dt = cfg.horizon / n as f64;
    let per_dim_rate = 2.0 * cfg.spec.one_sided_mass() * dt;
    let streams = Streams::new(cfg.seed);

    let mut times = Vec::with_capacity(n + 1);
    let mut states = Vec::with_capacity((n + 1) * d);
    let mut jump_log = Vec::with_capacity(n);
    let mut x = cfg.x0.clone();
    let mut f = vec![0.0; d];
    times.push(0.0);
    states.extend_from_slice(&x);

    for j in 0..n {
        cfg.drift.eval_into(&x, &mut f);
        let mut events = Vec::new();
        for (i, xi) in x.iter_mut().enumerate() {
            *xi += f[i] * dt;
            let mut count_rng = streams.stream(j as u64, Purpose::JumpCount, i);
            let mut mag_rng = streams.stream(j as u64, Purpose::Magnitude, i);
            let mut sign_rng = streams.stream(j as u64, Purpose::Sign, i);
            let n_jumps = count_rng.poisson(per_dim_rate);
            for _ in 0..n_jumps {
                let y = cfg.spec.sample_jump_magnitude(mag_rng.u01()) * sign_rng.sign();
                *xi += y;
                events.push((i, y));
            }
        }
        jump_log.push(events);
        times.push(dt * (j + 1) as f64);
        states.extend_from_slice(&x);
    }

    Ok(LatentPath { times, states, dim: d, jump_log, seed: cfg.seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad;
    use crate::stats;

    #[test]
    fn spec_construction_rejects_bad_values() {
        assert!(StableSpec::new(0.0, 0.1, 1.0).is_err());
        assert!(StableSpec::new(2.0, 0.1, 1.0).is_err());
        assert!(StableSpec::new(1.5, 0.0, 1.0).is_err());
        assert!(StableSpec::new(1.5, 0.1, -1.0).is_err());
        assert!(StableSpec::new(1.5, 0.1, 1.0).is_ok());
    }

    #[test]
    fn one_sided_mass_known_values() {
        // alpha = 1, tau = 0.01 -> C = 100
        let s = StableSpec::new(1.0, 0.01, 1.0).unwrap();
        assert!((s.one_sided_mass() - 100.0).abs() < 1e-12);
        // integral of y^(-1.5) on [1, inf) = 2
        let s = StableSpec::new(0.5, 1.0, 1.0).unwrap();
        assert!((s.one_sided_mass() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn one_sided_mass_matches_quadrature() {
        // Quadrature on [tau, y_max] plus the analytic power-law remainder.
        let s = StableSpec::new(1.5, 0.01, 1.0).unwrap();
        let y_max = 1e6;
        let body = quad::integrate(|y| y.powf(-1.0 - s.alpha), s.tau, y_max, 1e-10, 0.0)
            .unwrap()
            .value;
        let tail = y_max.powf(-s.alpha) / s.alpha;
        let oracle = body + tail;
        assert!((s.one_sided_mass() - oracle).abs() / oracle < 1e-6);
        assert!(tail / oracle < 1e-10, "remainder not negligible");
    }

    #[test]
    fn one_sided_mass_monotonicity_grid() {
        let taus = [0.01, 0.05, 0.1, 0.5, 0.9];
        let alphas = [0.5, 0.9, 1.3, 1.7, 1.9];
        for &a in &alphas {
            for w in taus.windows(2) {
                let lo = StableSpec::new(a, w[0], 1.0).unwrap().one_sided_mass();
                let hi = StableSpec::new(a, w[1], 1.0).unwrap().one_sided_mass();
                assert!(lo > hi, "mass must decrease in tau");
            }
        }
        // In alpha the sign of d(ln mass)/d(alpha) = ln(1/tau) - 1/alpha
        // flips with tau: heavier tails carry more mass only while the
        // density spike at tau (the tau^(-alpha) factor) does not dominate.
        // The monotone-in-decreasing-alpha regime is tau > e^(-1/alpha).
        for &t in taus.iter().filter(|&&t| t > (-1.0f64 / 1.9).exp()) {
            for w in alphas.windows(2) {
                let lo = StableSpec::new(w[0], t, 1.0).unwrap().one_sided_mass();
                let hi = StableSpec::new(w[1], t, 1.0).unwrap().one_sided_mass();
                assert!(lo > hi, "mass must increase as alpha decreases at tau {t}");
            }
        }
        // and the flip is real: at small tau the order reverses
        let small = StableSpec::new(0.5, 0.01, 1.0).unwrap().one_sided_mass();
        let large = StableSpec::new(1.5, 0.01, 1.0).unwrap().one_sided_mass();
        assert!(large > small);
    }

    #[test]
    fn magnitude_inverse_cdf_values() {
        let s = StableSpec::new(1.0, 0.01, 1.0).unwrap();
        assert_eq!(s.sample_jump_magnitude(0.0), 0.01);
        assert!((s.sample_jump_magnitude(0.5) - 0.02).abs() < 1e-15);
        let s = StableSpec::new(1.5, 0.3, 1.0).unwrap();
        for u in [0.0, 0.1, 0.9, 0.999_999] {
            assert!(s.sample_jump_magnitude(u) >= s.tau);
        }
    }

    #[test]
    fn magnitude_empirical_cdf_matches_analytic() {
        let s = StableSpec::new(1.3, 0.05, 1.0).unwrap();
        let mut rng = Streams::new(42).stream(0, Purpose::Magnitude, 0);
        let draws: Vec<f64> = (0..100_000).map(|_| s.sample_jump_magnitude(rng.u01())).collect();
        let ks = stats::ks_one_sample(&draws, |y| s.magnitude_cdf(y));
        assert!(ks < 0.01, "KS = {ks}");
    }

    #[test]
    fn ground_truth_jump_count_matches_poisson_mean() {
        // Low-activity configuration; total count over replications should
        // match 2 * C * horizon within 3 standard errors.
        let spec = StableSpec::new(1.9, 0.5, 1.0).unwrap();
        let horizon = 1.0;
        let expected = 2.0 * spec.one_sided_mass() * horizon;
        let reps = 1000usize;
        let counts: Vec<f64> = (0..reps)
            .map(|r| {
                let cfg = GroundTruthConfig {
                    spec,
                    drift: Drift::zero(),
                    horizon,
                    n_steps: 64,
                    x0: vec![0.0],
                    seed: 1000 + r as u64,
                };
                simulate_ground_truth(&cfg).unwrap().total_jumps() as f64
            })
            .collect();
        let m = stats::mean(&counts);
        let se = stats::std_error(&counts);
        assert!((m - expected).abs() < 3.0 * se, "mean {m} vs {expected} (se {se})");
    }

    #[test]
    fn zero_jump_mass_limit_reduces_to_euler() {
        // With an enormous tau the jump rate underflows to zero and the path
        // is the deterministic Euler solution of dx = theta (mu - x) dt.
        let spec = StableSpec::new(1.5, 1e300, 1.0).unwrap();
        assert_eq!(spec.one_sided_mass(), 0.0);
        let (theta, mu) = (1.0, 0.0);
        let cfg = GroundTruthConfig {
            spec,
            drift: Drift::Ou { theta, mu },
            horizon: 1.0,
            n_steps: 100,
            x0: vec![2.0],
            seed: 7,
        };
        let path = simulate_ground_truth(&cfg).unwrap();
        assert_eq!(path.total_jumps(), 0);
        let dt = 0.01;
        let mut x = 2.0;
        for j in 0..100 {
            x += theta * (mu - x) * dt;
            assert_eq!(path.state(j + 1)[0], x);
        }
    }

    #[test]
    fn ground_truth_is_bitwise_reproducible() {
        let cfg = GroundTruthConfig {
            spec: StableSpec::new(1.2, 0.05, 1.0).unwrap(),
            drift: Drift::Ou { theta: 0.7, mu: 0.2 },
            horizon: 2.0,
            n_steps: 200,
            x0: vec![0.1, -0.4],
            seed: 99,
        };
        let a = simulate_ground_truth(&cfg).unwrap();
        let b = simulate_ground_truth(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sign_symmetry_of_logged_jumps() {
        let cfg = GroundTruthConfig {
            spec: StableSpec::new(1.1, 0.01, 1.0).unwrap(),
            drift: Drift::zero(),
            horizon: 400.0,
            n_steps: 500,
            x0: vec![0.0],
            seed: 5,
        };
        let path = simulate_ground_truth(&cfg).unwrap();
        let jumps: Vec<f64> =
            path.jump_log.iter().flatten().map(|&(_, y)| y).collect();
        assert!(jumps.len() > 100_000, "want ~1e5 jumps, got {}", jumps.len());
        assert!(jumps.iter().all(|&y| y.abs() >= 0.01));
        let pos = jumps.iter().filter(|&&y| y > 0.0).count() as f64 / jumps.len() as f64;
        assert!((pos - 0.5).abs() < 0.01, "positive fraction {pos}");
    }

    #[test]
    fn reconstruction_from_jump_log_is_exact() {
        let drift = Drift::DoubleWell { theta1: 1.0, theta2: 0.5 };
        let cfg = GroundTruthConfig {
            spec: StableSpec::new(1.4, 0.1, 1.0).unwrap(),
            drift: drift.clone(),
            horizon: 1.0,
            n_steps: 128,
            x0: vec![0.3],
            seed: 21,
        };
        let path = simulate_ground_truth(&cfg).unwrap();
        assert!(path.reconstruction_error(&drift) < 1e-12);
    }
}
