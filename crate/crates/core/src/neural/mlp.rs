//! Dense multi-layer perceptrons stored in flat parameter slices.
//!
//! Layer weights are row-major `(out x in)` followed by the bias vector.
//! Hidden layers default to tanh, the output layer to identity. Forward
//! passes can cache activations so a later backward pass accumulates both
//! parameter gradients and the input adjoint.

use crate::error::{Error, Result};
use crate::rng::CounterRng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the post-activation value.
    #[inline]
    fn grad_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }
}

/// Architecture of an MLP; validates dimension chaining at construction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpShape {
    /// Layer sizes including input and output: `[in, h1, ..., out]`.
    pub sizes: Vec<usize>,
    /// One activation per layer (length `sizes.len() - 1`).
    pub activations: Vec<Activation>,
}

impl MlpShape {
    /// Tanh hidden layers, identity output.
    pub fn new(input: usize, hidden: &[usize], output: usize) -> Result<Self> {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(input);
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        if sizes.iter().any(|&s| s == 0) {
            return Err(Error::config("MLP layer sizes must be positive"));
        }
        let n_layers = sizes.len() - 1;
        let mut activations = vec![Activation::Tanh; n_layers];
        activations[n_layers - 1] = Activation::Identity;
        Ok(MlpShape { sizes, activations })
    }

    pub fn input(&self) -> usize {
        self.sizes[0]
    }

    pub fn output(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn param_count(&self) -> usize {
        (0..self.n_layers()).map(|l| self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1]).sum()
    }

    /// `(weight_offset, bias_offset, in, out)` for layer `l`, relative to the
    /// start of this MLP's parameter slice.
    pub fn layer_offsets(&self, l: usize) -> (usize, usize, usize, usize) {
        let mut off = 0;
        for k in 0..l {
            off += self.sizes[k] * self.sizes[k + 1] + self.sizes[k + 1];
        }
        let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
        (off, off + n_in * n_out, n_in, n_out)
    }

    /// Per-tensor segments (weights and biases separately), for layerwise
    /// gradient rescaling.
    pub fn tensor_segments(&self) -> Vec<(usize, usize)> {
        let mut segs = Vec::new();
        for l in 0..self.n_layers() {
            let (w, b, n_in, n_out) = self.layer_offsets(l);
            segs.push((w, n_in * n_out));
            segs.push((b, n_out));
        }
        segs
    }

    /// Scaled-uniform fan-in init for hidden layers. `zero_output` clears the
    /// final layer's weights and biases so the network starts at zero output.
    pub fn init(&self, params: &mut [f64], rng: &mut CounterRng, zero_output: bool) {
        assert_eq!(params.len(), self.param_count());
        for l in 0..self.n_layers() {
            let (w_off, b_off, n_in, n_out) = self.layer_offsets(l);
            let last = l == self.n_layers() - 1;
            if last && zero_output {
                params[w_off..b_off + n_out].iter_mut().for_each(|p| *p = 0.0);
            } else {
                let bound = 1.0 / (n_in as f64).sqrt();
                for p in &mut params[w_off..b_off] {
                    *p = rng.range(-bound, bound);
                }
                params[b_off..b_off + n_out].iter_mut().for_each(|p| *p = 0.0);
            }
        }
    }

    pub fn forward(&self, params: &[f64], input: &[f64]) -> Vec<f64> {
        self.forward_cached(params, input).0
    }

    /// Forward pass retaining post-activation values for backward.
    pub fn forward_cached(&self, params: &[f64], input: &[f64]) -> (Vec<f64>, MlpCache) {
        assert_eq!(input.len(), self.input(), "MLP input dimension mismatch");
        assert_eq!(params.len(), self.param_count());
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.n_layers() + 1);
        acts.push(input.to_vec());
        for l in 0..self.n_layers() {
            let (w_off, b_off, n_in, n_out) = self.layer_offsets(l);
            let prev = acts.last().unwrap();
            let mut out = Vec::with_capacity(n_out);
            for o in 0..n_out {
                let row = &params[w_off + o * n_in..w_off + (o + 1) * n_in];
                let mut z = params[b_off + o];
                for (w, a) in row.iter().zip(prev.iter()) {
                    z += w * a;
                }
                out.push(self.activations[l].apply(z));
            }
            acts.push(out);
        }
        let out = acts.last().unwrap().clone();
        (out, MlpCache { acts })
    }

    /// Accumulates parameter gradients into `grad_params` (same layout as the
    /// parameter slice) and returns the adjoint of the input.
    pub fn backward(
        &self,
        params: &[f64],
        cache: &MlpCache,
        grad_out: &[f64],
        grad_params: &mut [f64],
    ) -> Vec<f64> {
        assert_eq!(grad_out.len(), self.output());
        assert_eq!(grad_params.len(), self.param_count());
        let mut delta = grad_out.to_vec();
        for l in (0..self.n_layers()).rev() {
            let (w_off, b_off, n_in, n_out) = self.layer_offsets(l);
            let a_out = &cache.acts[l + 1];
            let a_in = &cache.acts[l];
            for o in 0..n_out {
                delta[o] *= self.activations[l].grad_from_output(a_out[o]);
            }
            let mut grad_in = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                grad_params[b_off + o] += d;
                let row = &params[w_off + o * n_in..w_off + (o + 1) * n_in];
                let grow = &mut grad_params[w_off + o * n_in..w_off + (o + 1) * n_in];
                for i in 0..n_in {
                    grow[i] += d * a_in[i];
                    grad_in[i] += d * row[i];
                }
            }
            delta = grad_in;
        }
        delta
    }
}

/// Post-activation values of one forward pass.
#[derive(Clone, Debug)]
pub struct MlpCache {
    acts: Vec<Vec<f64>>,
}
