//! Central finite-difference checking of reverse-mode gradients.

/// Central difference of a scalar function along coordinate `idx`.
pub fn central_diff(f: &mut dyn FnMut(&[f64]) -> f64, params: &[f64], idx: usize, h: f64) -> f64 {
    let mut p = params.to_vec();
    p[idx] += h;
    let up = f(&p);
    p[idx] = params[idx] - h;
    let down = f(&p);
    (up - down) / (2.0 * h)
}

/// One coordinate's comparison between analytic and finite-difference values.
#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

/// Checks `grad` against central differences of `f` on the given
/// coordinates. The relative error is `|fd - g| / max(|fd|, |g|, floor)`;
/// the floor keeps coordinates with (near-)zero true gradient from tripping
/// on finite-difference round-off.
pub fn check_gradient(
    f: &mut dyn FnMut(&[f64]) -> f64,
    params: &[f64],
    grad: &[f64],
    indices: &[usize],
    h: f64,
    floor: f64,
) -> Vec<GradCheck> {
    indices
        .iter()
        .map(|&i| {
            let numeric = central_diff(f, params, i, h);
            let denom = numeric.abs().max(grad[i].abs()).max(floor);
            GradCheck {
                index: i,
                analytic: grad[i],
                numeric,
                rel_error: (numeric - grad[i]).abs() / denom,
            }
        })
        .collect()
}

/// Largest relative error over the checked coordinates.
pub fn max_rel_error(checks: &[GradCheck]) -> f64 {
    checks.iter().map(|c| c.rel_error).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_loss_gradient_is_params() {
        // loss = 0.5 ||p||^2 has gradient p exactly
        let params = vec![0.3, -1.7, 2.4, 0.0];
        let grad = params.clone();
        let mut f = |p: &[f64]| 0.5 * p.iter().map(|v| v * v).sum::<f64>();
        let checks =
            check_gradient(&mut f, &params, &grad, &[0, 1, 2, 3], 1e-5, 1e-8);
        assert!(max_rel_error(&checks) < 1e-8);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let params = vec![1.0, 2.0];
        let grad = vec![0.0, 0.0];
        let mut f = |_: &[f64]| 3.25;
        let checks = check_gradient(&mut f, &params, &grad, &[0, 1], 1e-5, 1e-8);
        assert!(max_rel_error(&checks) == 0.0);
    }

    #[test]
    fn detects_wrong_gradient() {
        let params = vec![0.5];
        let grad = vec![2.0]; // true gradient is 1.0
        let mut f = |p: &[f64]| p[0];
        let checks = check_gradient(&mut f, &params, &grad, &[0], 1e-5, 1e-8);
        assert!(max_rel_error(&checks) > 0.3);
    }
}
