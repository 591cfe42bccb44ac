//! Optimizer protocol: layerwise robust gradient rescaling followed by
//! RMSProp with a constant learning rate.
//!
//! Heavy-tailed jump samples occasionally spike a whole layer's gradient
//! through a handful of coordinates. Rescaling a tensor by
//! `1 / max(1, rms / (q95 + eps))` suppresses those spikes while preserving
//! the relative magnitudes of coordinates, unlike coordinatewise clipping.

use crate::neural::Segment;
use crate::stats::quantile;

pub const RESCALE_EPS: f64 = 1e-12;

/// Rescales each named tensor in place. Never increases a tensor's norm;
/// output is a nonnegative scalar multiple of the input per tensor.
pub fn rescale_gradients(grad: &mut [f64], segments: &[Segment]) {
    for seg in segments {
        let g = &mut grad[seg.offset..seg.offset + seg.len];
        let abs: Vec<f64> = g.iter().map(|v| v.abs()).collect();
        let q = quantile(&abs, 0.95);
        let rms = (g.iter().map(|v| v * v).sum::<f64>() / seg.len as f64).sqrt();
        let factor = 1.0 / (rms / (q + RESCALE_EPS)).max(1.0);
        if factor < 1.0 {
            for v in g.iter_mut() {
                *v *= factor;
            }
        }
    }
}

/// RMSProp second-moment state. No learning-rate decay anywhere.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    /// Per-parameter second-moment accumulator; entries stay nonnegative.
    pub accumulator: Vec<f64>,
    pub iteration: usize,
    pub rho: f64,
    pub epsilon: f64,
}

impl OptimizerState {
    pub fn new(n_params: usize) -> Self {
        OptimizerState { accumulator: vec![0.0; n_params], iteration: 0, rho: 0.9, epsilon: 1e-8 }
    }
}

/// One descent step: `acc <- rho acc + (1-rho) g^2`,
/// `param <- param - lr g / sqrt(acc + eps)`.
pub fn rmsprop_step(state: &mut OptimizerState, params: &mut [f64], grad: &[f64], lr: f64) {
    assert_eq!(params.len(), grad.len());
    assert_eq!(params.len(), state.accumulator.len());
    let one_minus = 1.0 - state.rho;
    for i in 0..params.len() {
        let g = grad[i];
        state.accumulator[i] = state.rho * state.accumulator[i] + one_minus * g * g;
        params[i] -= lr * g / (state.accumulator[i] + state.epsilon).sqrt();
    }
    state.iteration += 1;
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(offset: usize, len: usize) -> Segment {
        Segment { name: format!("t{offset}"), offset, len }
    }

    #[test]
    fn rescale_is_identity_when_rms_below_quantile() {
        // near-uniform magnitudes: rms <= q95, so the no-op branch applies
        let mut g = vec![1.0, -1.0, 1.0, -1.0, 1.0, 1.0];
        let before = g.clone();
        rescale_gradients(&mut g, &[seg(0, 6)]);
        assert_eq!(g, before);
    }

    #[test]
    fn rescale_preserves_direction_and_never_grows() {
        let mut rng = crate::rng::CounterRng::from_key(1);
        for _ in 0..200 {
            let n = 2 + (rng.next_u64() % 64) as usize;
            let g: Vec<f64> = (0..n).map(|_| rng.normal() * 10f64.powf(rng.range(-3.0, 3.0))).collect();
            let mut h = g.clone();
            rescale_gradients(&mut h, &[seg(0, n)]);
            let norm_g: f64 = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            let norm_h: f64 = h.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm_h <= norm_g * (1.0 + 1e-12));
            // h = c g for a single nonnegative c
            if norm_g > 0.0 && norm_h > 0.0 {
                let c = norm_h / norm_g;
                for (a, b) in g.iter().zip(&h) {
                    assert!((b - c * a).abs() <= 1e-9 * norm_g);
                }
            }
        }
    }

    #[test]
    fn rescale_spike_vector_lands_at_quantile_rms() {
        // one huge coordinate among zeros: q95 = 0, so the rescale clamps
        // the tensor rms to exactly q + eps
        let mut g = vec![0.0; 100];
        g[99] = 1e6;
        rescale_gradients(&mut g, &[seg(0, 100)]);
        let rms = (g.iter().map(|v| v * v).sum::<f64>() / 100.0).sqrt();
        assert!((rms - RESCALE_EPS).abs() < 1e-18, "rms {rms}");
        assert!(g[99] > 0.0);
    }

    #[test]
    fn rescale_applies_per_tensor() {
        let mut g = vec![0.0; 8];
        g[0] = 1e6; // first tensor: spiky
        for v in &mut g[4..] {
            *v = 2.0; // second tensor: uniform, untouched
        }
        rescale_gradients(&mut g, &[seg(0, 4), seg(4, 4)]);
        assert!(g[0] < 1.0);
        assert!(g[4..].iter().all(|&v| v == 2.0));
    }

    #[test]
    fn rmsprop_zero_gradient_keeps_params_and_decays_accumulator() {
        let mut state = OptimizerState::new(3);
        state.accumulator = vec![1.0, 4.0, 0.25];
        let mut params = vec![0.5, -0.5, 2.0];
        let before = params.clone();
        rmsprop_step(&mut state, &mut params, &[0.0, 0.0, 0.0], 0.1);
        assert_eq!(params, before);
        assert_eq!(state.accumulator, vec![0.9, 3.6, 0.225]);
    }

    #[test]
    fn rmsprop_single_step_from_zero_accumulator() {
        let mut state = OptimizerState::new(1);
        let mut params = vec![1.0];
        let g = 0.3;
        rmsprop_step(&mut state, &mut params, &[g], 0.01);
        let expected = 1.0 - 0.01 * g / (0.1 * g * g + 1e-8).sqrt();
        assert!((params[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn rmsprop_constant_gradient_step_approaches_lr() {
        let mut state = OptimizerState::new(1);
        let mut params = vec![0.0];
        let g = 0.7;
        let lr = 0.05;
        let mut last = params[0];
        for _ in 0..400 {
            last = params[0];
            rmsprop_step(&mut state, &mut params, &[g], lr);
        }
        // accumulator fixed point is g^2, so the step tends to lr
        let step = last - params[0];
        assert!((step - lr).abs() < 1e-4, "step {step}");
    }

    #[test]
    fn rmsprop_commutes_with_parameter_permutation() {
        let mut rng = crate::rng::CounterRng::from_key(9);
        let n = 16;
        let params: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let grad: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let acc: Vec<f64> = (0..n).map(|_| rng.u01()).collect();
        // permutation: reverse
        let perm = |v: &[f64]| -> Vec<f64> { v.iter().rev().cloned().collect() };

        let mut s1 = OptimizerState::new(n);
        s1.accumulator = acc.clone();
        let mut p1 = params.clone();
        rmsprop_step(&mut s1, &mut p1, &grad, 0.01);

        let mut s2 = OptimizerState::new(n);
        s2.accumulator = perm(&acc);
        let mut p2 = perm(&params);
        rmsprop_step(&mut s2, &mut p2, &perm(&grad), 0.01);

        assert_eq!(perm(&p1), p2);
        assert_eq!(perm(&s1.accumulator), s2.accumulator);
    }
}
