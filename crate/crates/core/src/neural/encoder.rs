//! Adaptive temporal encoding.
//!
//! A query time is embedded as a kernel-weighted average of learnable
//! embedding vectors, `e(t) = sum_i w_i(t) v_i`, where the weights are a
//! softmax over `-s |t - tau_i|` (a Nadaraya-Watson estimator with a
//! Laplacian kernel). Reference times `tau_i`, embeddings `v_i`, and the
//! log-sharpness are all trainable, so the references migrate toward times
//! where the objective is sensitive to the tilt.

use crate::rng::CounterRng;
use serde::{Deserialize, Serialize};

/// Architecture of the encoder. Parameter slice layout:
/// `[ref_times (n_ref) | embeddings (n_ref x embed_dim) | log_sharpness]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderShape {
    pub n_ref: usize,
    pub embed_dim: usize,
}

impl EncoderShape {
    pub fn param_count(&self) -> usize {
        self.n_ref * (1 + self.embed_dim) + 1
    }

    fn ref_times<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[..self.n_ref]
    }

    fn embeddings<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[self.n_ref..self.n_ref * (1 + self.embed_dim)]
    }

    fn log_sharpness(&self, p: &[f64]) -> f64 {
        p[self.param_count() - 1]
    }

    /// Reference times evenly spaced on `[0, horizon]`, small random
    /// embeddings, and a kernel width on the order of the reference spacing.
    pub fn init(&self, params: &mut [f64], horizon: f64, rng: &mut CounterRng) {
        assert_eq!(params.len(), self.param_count());
        let n = self.n_ref;
        for i in 0..n {
            params[i] = if n == 1 { 0.5 * horizon } else { horizon * i as f64 / (n - 1) as f64 };
        }
        let bound = 1.0 / (self.embed_dim as f64).sqrt();
        for p in &mut params[n..n * (1 + self.embed_dim)] {
            *p = rng.range(-bound, bound);
        }
        params[self.param_count() - 1] = (n as f64 / horizon.max(1e-12)).ln();
    }

    /// Softmax weights over `-s |t - tau_i|`, computed with max subtraction
    /// so large sharpness cannot overflow. Entries are nonnegative and sum
    /// to one.
    pub fn weights(&self, params: &[f64], t: f64) -> Vec<f64> {
        let s = self.log_sharpness(params).exp();
        let refs = self.ref_times(params);
        let mut logits: Vec<f64> = refs.iter().map(|&tau| -s * (t - tau).abs()).collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for l in &mut logits {
            *l = (*l - max).exp();
            sum += *l;
        }
        for l in &mut logits {
            *l /= sum;
        }
        logits
    }

    pub fn forward(&self, params: &[f64], t: f64) -> Vec<f64> {
        self.forward_cached(params, t).0
    }

    pub fn forward_cached(&self, params: &[f64], t: f64) -> (Vec<f64>, EncoderCache) {
        let w = self.weights(params, t);
        let emb = self.embeddings(params);
        let de = self.embed_dim;
        let mut e = vec![0.0; de];
        for (i, &wi) in w.iter().enumerate() {
            if wi == 0.0 {
                continue;
            }
            let v = &emb[i * de..(i + 1) * de];
            for (ek, vk) in e.iter_mut().zip(v) {
                *ek += wi * vk;
            }
        }
        (e, EncoderCache { t, w })
    }

    /// Accumulates parameter gradients for one embedded time. The kernel is
    /// non-smooth exactly at `t = tau_i`; there the subgradient with
    /// `sign(0) = 0` is used.
    pub fn backward(
        &self,
        params: &[f64],
        cache: &EncoderCache,
        grad_e: &[f64],
        grad_params: &mut [f64],
    ) {
        let n = self.n_ref;
        let de = self.embed_dim;
        let s = self.log_sharpness(params).exp();
        let refs = self.ref_times(params);
        let emb = self.embeddings(params);
        let w = &cache.w;
        let t = cache.t;

        // u_i = grad_e . v_i, and its weighted mean over the softmax
        let mut u = vec![0.0; n];
        let mut u_bar = 0.0;
        for i in 0..n {
            let v = &emb[i * de..(i + 1) * de];
            let mut dot = 0.0;
            for (g, vk) in grad_e.iter().zip(v) {
                dot += g * vk;
            }
            u[i] = dot;
            u_bar += w[i] * dot;
        }

        let mut grad_log_s = 0.0;
        for i in 0..n {
            let g_phi = w[i] * (u[i] - u_bar);
            let dist = (t - refs[i]).abs();
            let sign = if t > refs[i] {
                1.0
            } else if t < refs[i] {
                -1.0
            } else {
                0.0
            };
            grad_params[i] += g_phi * s * sign;
            grad_log_s += g_phi * (-dist) * s;
            let gv = &mut grad_params[n + i * de..n + (i + 1) * de];
            for (gvk, g) in gv.iter_mut().zip(grad_e) {
                *gvk += w[i] * g;
            }
        }
        grad_params[self.param_count() - 1] += grad_log_s;
    }
}

/// Softmax weights of one forward pass, keyed by the query time.
#[derive(Clone, Debug)]
pub struct EncoderCache {
    t: f64,
    w: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn init_params(shape: &EncoderShape, horizon: f64, seed: u64) -> Vec<f64> {
        let mut rng = CounterRng::from_key(seed);
        let mut p = vec![0.0; shape.param_count()];
        shape.init(&mut p, horizon, &mut rng);
        p
    }

    #[test]
    fn single_reference_returns_its_embedding() {
        let shape = EncoderShape { n_ref: 1, embed_dim: 4 };
        let p = init_params(&shape, 1.0, 3);
        let v = shape.embeddings(&p).to_vec();
        for t in [0.0, 0.3, 0.99, 5.0] {
            assert_eq!(shape.forward(&p, t), v);
        }
    }

    #[test]
    fn weights_form_probability_vector() {
        let shape = EncoderShape { n_ref: 16, embed_dim: 8 };
        let mut p = init_params(&shape, 2.0, 4);
        // include an extreme sharpness
        for (i, t_scale) in [(0usize, 1.0f64), (1, 1e6)].into_iter() {
            *p.last_mut().unwrap() = t_scale.ln();
            let mut rng = CounterRng::from_key(10 + i as u64);
            for _ in 0..1000 {
                let w = shape.weights(&p, rng.range(-0.5, 2.5));
                assert!(w.iter().all(|&x| x >= 0.0));
                let sum: f64 = w.iter().sum();
                assert!((sum - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sharp_kernel_snaps_to_nearest_reference() {
        let shape = EncoderShape { n_ref: 8, embed_dim: 4 };
        let mut p = init_params(&shape, 7.0, 5);
        *p.last_mut().unwrap() = 1000.0f64.ln();
        let t = p[3]; // exactly the fourth reference time
        let w = shape.weights(&p, t);
        assert!(w[3] > 0.999, "w[3] = {}", w[3]);
        let e = shape.forward(&p, t);
        let v = &shape.embeddings(&p)[3 * 4..4 * 4];
        for (a, b) in e.iter().zip(v) {
            assert!((a - b).abs() < 1e-3);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let shape = EncoderShape { n_ref: 6, embed_dim: 3 };
        let p = init_params(&shape, 1.0, 6);
        let coeffs = [0.7, -1.3, 0.4];
        let t = 0.437;
        let loss = |params: &[f64]| -> f64 {
            shape.forward(params, t).iter().zip(&coeffs).map(|(e, c)| e * c).sum()
        };
        let (_, cache) = shape.forward_cached(&p, t);
        let mut grad = vec![0.0; p.len()];
        shape.backward(&p, &cache, &coeffs, &mut grad);
        let h = 1e-6;
        for i in 0..p.len() {
            let mut q = p.clone();
            q[i] += h;
            let up = loss(&q);
            q[i] -= 2.0 * h;
            let dn = loss(&q);
            let fd = (up - dn) / (2.0 * h);
            assert!(
                (fd - grad[i]).abs() <= 1e-4 * (1.0 + fd.abs()),
                "param {i}: fd {fd} vs {}",
                grad[i]
            );
        }
    }
}
