//! Scalar special functions: stable softplus/sigmoid and the upper
//! incomplete gamma function extended to non-positive first arguments.

use crate::error::{Error, Result};
use statrs::function::gamma::gamma_ui;

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`]; defined for `y > 0`.
#[inline]
pub fn inv_softplus(y: f64) -> f64 {
    assert!(y > 0.0, "inv_softplus needs y > 0");
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

/// Logistic sigmoid, the derivative of [`softplus`].
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Upper incomplete gamma `Γ(s, z)` for real `s` and `z > 0`.
///
/// Standard library routines cover `s > 0` only. For `s <= 0` the value is
/// still finite for `z > 0`; for `z >= 1` we evaluate the Legendre continued
/// fraction, which converges for any `s`, and for `z < 1` we recurse down
/// from a positive first argument via
/// `Γ(s, z) = (Γ(s+1, z) - z^s e^(-z)) / s`.
///
/// `s` at (or numerically on top of) a non-positive integer is rejected:
/// the recurrence divides by `s` and the continued fraction has poles there.
pub fn upper_inc_gamma(s: f64, z: f64) -> Result<f64> {
    if !(z > 0.0) {
        return Err(Error::config(format!("upper_inc_gamma needs z > 0, got {z}")));
    }
    if s > 0.0 {
        return Ok(gamma_ui(s, z));
    }
    if (s - s.round()).abs() < 1e-10 {
        return Err(Error::numerical(format!(
            "upper_inc_gamma at non-positive integer s = {s}"
        )));
    }
    if z >= 1.0 {
        return continued_fraction(s, z);
    }
    // Downward recurrence from s + m in (0, 1].
    let m = (-s).floor() as i64 + 1;
    let mut g = gamma_ui(s + m as f64, z);
    let ln_z = z.ln();
    for k in (0..m).rev() {
        let sk = s + k as f64;
        g = (g - (sk * ln_z - z).exp()) / sk;
    }
    if g.is_finite() {
        Ok(g)
    } else {
        Err(Error::numerical(format!("upper_inc_gamma({s}, {z}) not finite")))
    }
}

/// Legendre continued fraction for `Γ(s, z)` (modified Lentz).
fn continued_fraction(s: f64, z: f64) -> Result<f64> {
    const FPMIN: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    let mut b = z + 1.0 - s;
    let mut c = 1.0 / FPMIN;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..=500 {
        let an = -(i as f64) * (i as f64 - s);
        b += 2.0;
        d = an * d + b;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = b + an / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            let v = (s * z.ln() - z).exp() * h;
            return Ok(v);
        }
    }
    Err(Error::numerical(format!(
        "incomplete gamma continued fraction stalled at s={s}, z={z}"
    )))
}
