//! Quadratic exponential tilting of the jump measure.
//!
//! The tilt potential is `phi(x) = A x^2 + B x` per dimension with `A < 0`
//! strictly, so a jump from `x` to `x + y` is reweighted by
//! `H(x, y) = exp(A (2xy + y^2) + B y)`. Under the conditionally Gaussian
//! mixture representation of the stable law, the per-scale normalizer
//! `C(r, t, x)` and the jump-size conditional are available in closed form,
//! and `C` admits the r-free envelope `M = exp(K1^2 / (4|A|))` that makes
//! exact rejection sampling of the mixing scale possible.
//!
//! The global mixing normalizer of the tilted measure is never computed:
//! rejection sampling only needs the ratio `C / M`, which does not involve
//! it.

use crate::error::{Error, Result};
use crate::stable::StableSpec;
use serde::{Deserialize, Serialize};

/// Per-dimension quadratic tilting coefficients at one time point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TiltCoeffs {
    a: Vec<f64>,
    b: Vec<f64>,
}

impl TiltCoeffs {
    /// Construction rejects any `a[i] >= 0`: strict negativity is what makes
    /// the tilted measure integrable.
    pub fn new(a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if a.len() != b.len() || a.is_empty() {
            return Err(Error::config("tilt coefficient vectors must be non-empty and equal length"));
        }
        for (i, &ai) in a.iter().enumerate() {
            if !(ai < 0.0) || !ai.is_finite() {
                return Err(Error::config(format!("tilt coefficient a[{i}] = {ai} must be < 0")));
            }
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("tilt coefficient b must be finite"));
        }
        Ok(TiltCoeffs { a, b })
    }

    pub fn scalar(a: f64, b: f64) -> Result<Self> {
        TiltCoeffs::new(vec![a], vec![b])
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    pub fn a(&self, dim: usize) -> f64 {
        self.a[dim]
    }

    pub fn b(&self, dim: usize) -> f64 {
        self.b[dim]
    }

    /// `K1 = 2 A x + B` for one dimension at state `x`.
    #[inline]
    pub fn k1(&self, dim: usize, x: f64) -> f64 {
        2.0 * self.a[dim] * x + self.b[dim]
    }
}

/// `log H(x, y) = A (2xy + y^2) + B y` for the given dimension.
#[inline]
pub fn log_tilt_factor(coeffs: &TiltCoeffs, dim: usize, x: f64, y: f64) -> f64 {
    coeffs.a(dim) * (2.0 * x * y + y * y) + coeffs.b(dim) * y
}

/// The jump-size law conditional on a mixing scale, plus its normalizer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConditionalGaussian {
    /// Jump-size mean `-K1 / (2 K2)`.
    pub mu_y: f64,
    /// Jump-size variance `-1 / (2 K2)`; always positive since `K2 < 0`.
    pub var_y: f64,
    /// Normalizer `C(r, t, x)`.
    pub c_norm: f64,
    /// `ln C`, kept so acceptance ratios can be formed without overflow.
    pub log_c_norm: f64,
}

/// Closed-form conditional Gaussian for mixing scale `r > 0`.
///
/// With `K1 = 2Ax + B` and `K2 = A - 1/(2 r^2 sigma_G^2)` (negative because
/// `A < 0`), the kernel is `N(mu_y, var_y)` and
/// `C = exp(-K1^2 / (4 K2)) / sqrt(-2 K2 r^2 sigma_G^2)`.
pub fn conditional_gaussian(
    coeffs: &TiltCoeffs,
    dim: usize,
    x: f64,
    r: f64,
    spec: &StableSpec,
) -> ConditionalGaussian {
    debug_assert!(r > 0.0, "mixing scale must be positive");
    let a = coeffs.a(dim);
    let k1 = coeffs.k1(dim, x);
    let r2s2 = r * r * spec.sigma_g * spec.sigma_g;
    let k2 = a - 1.0 / (2.0 * r2s2);
    let mu_y = -k1 / (2.0 * k2);
    let var_y = -1.0 / (2.0 * k2);
    let log_c_norm = -k1 * k1 / (4.0 * k2) - 0.5 * (-2.0 * k2 * r2s2).ln();
    ConditionalGaussian { mu_y, var_y, c_norm: log_c_norm.exp(), log_c_norm }
}

/// `ln M(t, x) = K1^2 / (4 |A|)`: the r-free upper bound on `ln C`.
#[inline]
pub fn log_envelope(coeffs: &TiltCoeffs, dim: usize, x: f64) -> f64 {
    let k1 = coeffs.k1(dim, x);
    k1 * k1 / (4.0 * coeffs.a(dim).abs())
}

/// State-dependent envelope `M = exp(K1^2 / (4 |A|))`, dominating
/// `c_norm(r)` for every `r > 0`.
#[inline]
pub fn envelope(coeffs: &TiltCoeffs, dim: usize, x: f64) -> f64 {
    log_envelope(coeffs, dim, x).exp()
}
