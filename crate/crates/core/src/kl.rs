//! The jump cost of the path-space KL divergence.
//!
//! Per time step and dimension the cost is
//! `I = integral of (f(y) + f(-y)) y^(-1-alpha) dy` over `[tau, inf)` with
//! `f = H ln H - H + 1`, estimated three ways: the Monte Carlo estimator used
//! in training (symmetry-reduced, inverse-CDF samples), an adaptive
//! quadrature oracle, and an incomplete-gamma series expansion that is
//! accurate when `tau` is around one. The latter two exist to check the
//! first and each other; only the Monte Carlo route is differentiated.

use crate::error::{Error, Result};
use crate::quad;
use crate::rng::{Purpose, Streams};
use crate::special::upper_inc_gamma;
use crate::stable::StableSpec;
use crate::tilting::{log_tilt_factor, TiltCoeffs};
use serde::{Deserialize, Serialize};

/// `g(L) = L e^L - e^L + 1`, the KL integrand through `L = ln H`.
///
/// Evaluated as `(L - 1) expm1(L) + L`, with a short series below
/// `|L| = 1e-4` where the subtraction would cancel catastrophically
/// (`g(L) ~ L^2 / 2` there). Nonnegative for all `L`.
#[inline]
pub fn kl_integrand_from_log(l: f64) -> f64 {
    g_from_log_and_exp(l, l.exp())
}

/// [`kl_integrand_from_log`] when `e^L` is already in hand; the simulation
/// loop shares one exponential between the intensity and the KL estimate.
#[inline]
pub fn g_from_log_and_exp(l: f64, el: f64) -> f64 {
    if l.abs() < 1e-4 {
        l * l * (0.5 + l * (1.0 / 3.0) + l * l * 0.125)
    } else {
        (l - 1.0) * (el - 1.0) + l
    }
}

/// `g'(L) = L e^L`, the derivative used by the pathwise gradient.
#[inline]
pub fn kl_integrand_grad_from_log(l: f64) -> f64 {
    l * l.exp()
}

/// `f(y) = H ln H - H + 1` for one dimension at state `x` and jump `y`.
pub fn kl_integrand(coeffs: &TiltCoeffs, dim: usize, x: f64, y: f64) -> f64 {
    kl_integrand_from_log(log_tilt_factor(coeffs, dim, x, y))
}

/// Inverse-CDF jump magnitudes, one stream per dimension, reusable between
/// the intensity estimator and the KL estimator.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JumpSamples {
    pub per_dim: Vec<Vec<f64>>,
}

impl JumpSamples {
    pub fn draw(spec: &StableSpec, dims: usize, k: usize, streams: &Streams, step: u64) -> Self {
        let per_dim = (0..dims)
            .map(|d| {
                let mut rng = streams.stream(step, Purpose::KlMagnitude, d);
                (0..k).map(|_| spec.sample_jump_magnitude(rng.u01())).collect()
            })
            .collect();
        JumpSamples { per_dim }
    }

    pub fn k(&self) -> usize {
        self.per_dim.first().map_or(0, Vec::len)
    }
}

/// Monte Carlo estimate of the per-step KL jump cost.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KlStepEstimate {
    /// Estimate of `I(t, x)`, summed over dimensions. A mean of nonnegative
    /// terms, hence exactly `>= 0`.
    pub value: f64,
    pub std_error: f64,
    pub k_samples: usize,
}

/// Symmetry-reduced Monte Carlo estimator: per dimension draw (or reuse) `k`
/// magnitudes from `p(y) = alpha tau^alpha y^(-1-alpha)` and average
/// `C (f(y) + f(-y))` with `C = tau^(-alpha)/alpha`; dimensions add.
pub fn estimate_kl_step(
    coeffs: &TiltCoeffs,
    x: &[f64],
    spec: &StableSpec,
    k: usize,
    shared_samples: Option<&JumpSamples>,
    streams: &Streams,
    step: u64,
) -> KlStepEstimate {
    assert!(k >= 1, "need at least one sample");
    assert_eq!(coeffs.dim(), x.len(), "state/coefficient dimension mismatch");
    let fresh;
    let samples = match shared_samples {
        Some(s) => {
            assert_eq!(s.per_dim.len(), x.len());
            s
        }
        None => {
            fresh = JumpSamples::draw(spec, x.len(), k, streams, step);
            &fresh
        }
    };
    let c = spec.one_sided_mass();
    let k_used = samples.k();
    let mut total = 0.0;
    let mut var_total = 0.0;
    for dim in 0..x.len() {
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for &y in &samples.per_dim[dim] {
            let term = c
                * (kl_integrand(coeffs, dim, x[dim], y)
                    + kl_integrand(coeffs, dim, x[dim], -y));
            sum += term;
            sum_sq += term * term;
        }
        let mean = sum / k_used as f64;
        total += mean;
        if k_used > 1 {
            let var = (sum_sq / k_used as f64 - mean * mean).max(0.0);
            var_total += var / (k_used - 1) as f64;
        }
    }
    KlStepEstimate { value: total, std_error: var_total.sqrt(), k_samples: k_used }
}

/// Adaptive-quadrature oracle for the per-dimension KL cost, relative
/// tolerance `1e-8`, with the analytic power-law tail remainder added where
/// the tilt factor has decayed to zero (`f -> 1` there).
pub fn kl_quadrature(coeffs: &TiltCoeffs, dim: usize, x: f64, spec: &StableSpec) -> Result<f64> {
    let a = coeffs.a(dim);
    let k1 = coeffs.k1(dim, x);
    let alpha = spec.alpha;
    let tau = spec.tau;
    // Beyond y*, A y^2 + |K1| y <= -45 so |f - 1| < 1e-19 on both branches
    // and the remainder integral is the pure power-law tail 2 Y^(-alpha)/alpha.
    let y_star = (k1.abs() + (k1 * k1 + 180.0 * a.abs()).sqrt()) / (2.0 * a.abs());
    let y_max = y_star.max(8.0 * tau).max(tau + 1.0);
    let integrand = |y: f64| {
        (kl_integrand(coeffs, dim, x, y) + kl_integrand(coeffs, dim, x, -y))
            * y.powf(-1.0 - alpha)
    };
    // Integrate decade by decade; the integrand is nonnegative so per-decade
    // relative tolerances compose.
    let mut lo = tau;
    let mut body = 0.0;
    while lo < y_max {
        let hi = (lo * 10.0).min(y_max);
        body += quad::integrate(&integrand, lo, hi, 1e-9, 1e-300)?.value;
        lo = hi;
    }
    Ok(body + 2.0 * y_max.powf(-alpha) / alpha)
}

/// Incomplete-gamma series evaluation of the per-dimension KL cost.
#[derive(Clone, Copy, Debug)]
pub struct KlSeries {
    pub value: f64,
    /// The four assembled components `[I1, I2, I3, I4]` with signs applied
    /// as `I = I1 + I2 - I3 + I4`, both half-line branches combined.
    pub components: [f64; 4],
    /// False when the terms had not started decaying at the truncation
    /// point, a symptom of the series' small-`tau` instability.
    pub converged: bool,
}

/// Series route for `I`: expand `e^(K1 y)` and integrate termwise against
/// `e^(A y^2) y^(power)`, giving upper incomplete gamma factors
/// `Γ(s, |A| tau^2)`. Combining the `+y` and `-y` branches leaves odd-`n`
/// terms in the linear component and even-`n` terms in the quadratic and
/// plain components. Accurate when `tau` is near one; at small `tau` the
/// components cancel against each other and the route loses precision, which
/// is why training uses the Monte Carlo estimator instead.
pub fn kl_series(
    coeffs: &TiltCoeffs,
    dim: usize,
    x: f64,
    spec: &StableSpec,
    n_terms: usize,
) -> Result<KlSeries> {
    if n_terms == 0 {
        return Err(Error::config("kl_series needs n_terms >= 1"));
    }
    let a = coeffs.a(dim);
    let k1 = coeffs.k1(dim, x);
    let alpha = spec.alpha;
    let tau = spec.tau;
    let z = -a * tau * tau;
    let neg_a = -a;

    // term factor K1^n / n!, updated multiplicatively
    let mut coeff = 1.0f64;
    let (mut i1, mut i2, mut i3) = (0.0f64, 0.0f64, 0.0f64);
    let mut prev_mag = f64::INFINITY;
    let mut last_mag = f64::INFINITY;
    for n in 0..n_terms {
        if n > 0 {
            coeff *= k1 / n as f64;
        }
        let mut mag = 0.0;
        if n % 2 == 1 {
            // linear component, odd terms survive branch combination
            let s = (n as f64 - alpha + 1.0) / 2.0;
            let t = k1 * coeff * neg_a.powf(-s) * upper_inc_gamma(s, z)?;
            i1 += t;
            mag += t.abs();
        } else {
            // quadratic and plain components, even terms survive
            let s2 = (n as f64 - alpha + 2.0) / 2.0;
            let t2 = a * coeff * neg_a.powf(-s2) * upper_inc_gamma(s2, z)?;
            i2 += t2;
            let s3 = (n as f64 - alpha) / 2.0;
            let t3 = coeff * neg_a.powf(-s3) * upper_inc_gamma(s3, z)?;
            i3 += t3;
            mag += t2.abs() + t3.abs();
        }
        prev_mag = last_mag;
        last_mag = mag;
    }
    let i4 = 2.0 * tau.powf(-alpha) / alpha;
    let value = i1 + i2 - i3 + i4;
    let converged = last_mag <= prev_mag;
    Ok(KlSeries { value, components: [i1, i2, -i3, i4], converged })
}
