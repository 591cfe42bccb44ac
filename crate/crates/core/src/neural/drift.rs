//! Drift families: Ornstein-Uhlenbeck, double-well, and a small neural MLP.
//!
//! Two views exist. [`Drift`] holds natural parameter values and is what the
//! simulators evaluate; for ground-truth generation the values are arbitrary
//! reals. The trainable side stores raw coordinates in the flat parameter
//! vector, with positivity of the OU rate and the double-well coefficients
//! enforced through a softplus reparametrization ([`DriftKind::natural`]).

use crate::error::{Error, Result};
use crate::special::{inv_softplus, sigmoid, softplus};
use serde::{Deserialize, Serialize};

use super::mlp::MlpShape;

/// Architecture tag; determines the raw-parameter layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum DriftKind {
    Ou,
    DoubleWell,
    Neural { width: usize },
}

impl DriftKind {
    pub fn param_count(&self, dim: usize) -> usize {
        match self {
            DriftKind::Ou | DriftKind::DoubleWell => 2,
            DriftKind::Neural { .. } => self.mlp_shape(dim).unwrap().param_count(),
        }
    }

    pub fn mlp_shape(&self, dim: usize) -> Option<MlpShape> {
        match self {
            DriftKind::Neural { width } => Some(MlpShape::new(dim, &[*width], dim).unwrap()),
            _ => None,
        }
    }

    /// Raw coordinates -> natural-valued drift.
    pub fn natural(&self, raw: &[f64], dim: usize) -> Drift {
        match self {
            DriftKind::Ou => Drift::Ou { theta: softplus(raw[0]), mu: raw[1] },
            DriftKind::DoubleWell => {
                Drift::DoubleWell { theta1: softplus(raw[0]), theta2: softplus(raw[1]) }
            }
            DriftKind::Neural { .. } => Drift::Neural {
                shape: self.mlp_shape(dim).unwrap(),
                weights: raw.to_vec(),
            },
        }
    }

    /// Raw coordinates that map to the given natural values; used to seed
    /// training at chosen starting points.
    pub fn raw_from_natural(&self, drift: &Drift) -> Result<Vec<f64>> {
        match (self, drift) {
            (DriftKind::Ou, Drift::Ou { theta, mu }) => {
                if *theta <= 0.0 {
                    return Err(Error::config("OU theta must be positive for training"));
                }
                Ok(vec![inv_softplus(*theta), *mu])
            }
            (DriftKind::DoubleWell, Drift::DoubleWell { theta1, theta2 }) => {
                if *theta1 <= 0.0 || *theta2 <= 0.0 {
                    return Err(Error::config("double-well coefficients must be positive"));
                }
                Ok(vec![inv_softplus(*theta1), inv_softplus(*theta2)])
            }
            (DriftKind::Neural { .. }, Drift::Neural { weights, .. }) => Ok(weights.clone()),
            _ => Err(Error::config("drift kind does not match natural drift variant")),
        }
    }
}

/// A drift function with concrete parameter values.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum Drift {
    /// `f(x) = theta * (mu - x)`, elementwise.
    Ou { theta: f64, mu: f64 },
    /// `f(x) = theta1 * x - theta2 * x^3`, elementwise.
    DoubleWell { theta1: f64, theta2: f64 },
    /// `f = MLP(x)`, mapping the full state vector.
    Neural { shape: MlpShape, weights: Vec<f64> },
}

impl Drift {
    /// Zero drift, handy for pure-jump simulations.
    pub fn zero() -> Self {
        Drift::Ou { theta: 0.0, mu: 0.0 }
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Drift::Ou { theta, mu } => {
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = theta * (mu - xi);
                }
            }
            Drift::DoubleWell { theta1, theta2 } => {
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = theta1 * xi - theta2 * xi * xi * xi;
                }
            }
            Drift::Neural { shape, weights } => {
                assert_eq!(x.len(), shape.input(), "neural drift dimension mismatch");
                out.copy_from_slice(&shape.forward(weights, x));
            }
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.eval_into(x, &mut out);
        out
    }

    /// Named natural parameters, for recovery-error reporting.
    pub fn named_params(&self) -> Vec<(String, f64)> {
        match self {
            Drift::Ou { theta, mu } => {
                vec![("theta".into(), *theta), ("mu".into(), *mu)]
            }
            Drift::DoubleWell { theta1, theta2 } => {
                vec![("theta1".into(), *theta1), ("theta2".into(), *theta2)]
            }
            Drift::Neural { weights, .. } => {
                weights.iter().enumerate().map(|(i, w)| (format!("w{i}"), *w)).collect()
            }
        }
    }

    pub fn variant_name(&self) -> &'static str {
        match self {
            Drift::Ou { .. } => "ou",
            Drift::DoubleWell { .. } => "double_well",
            Drift::Neural { .. } => "neural",
        }
    }
}

/// Gradient plumbing for the trainable drift inside the ELBO backward pass.
///
/// Given the adjoint of `f(x)` it accumulates raw-parameter gradients and
/// returns the state adjoint contribution `adj^T (df/dx)`.
pub fn backward(
    kind: &DriftKind,
    raw: &[f64],
    x: &[f64],
    adj_f: &[f64],
    grad_raw: &mut [f64],
) -> Vec<f64> {
    match kind {
        DriftKind::Ou => {
            let theta = softplus(raw[0]);
            let mu = raw[1];
            let dtheta_draw = sigmoid(raw[0]);
            let mut adj_x = vec![0.0; x.len()];
            for i in 0..x.len() {
                grad_raw[0] += adj_f[i] * (mu - x[i]) * dtheta_draw;
                grad_raw[1] += adj_f[i] * theta;
                adj_x[i] = -theta * adj_f[i];
            }
            adj_x
        }
        DriftKind::DoubleWell => {
            let t1 = softplus(raw[0]);
            let t2 = softplus(raw[1]);
            let (s1, s2) = (sigmoid(raw[0]), sigmoid(raw[1]));
            let mut adj_x = vec![0.0; x.len()];
            for i in 0..x.len() {
                let xi = x[i];
                grad_raw[0] += adj_f[i] * xi * s1;
                grad_raw[1] += adj_f[i] * (-xi * xi * xi) * s2;
                adj_x[i] = (t1 - 3.0 * t2 * xi * xi) * adj_f[i];
            }
            adj_x
        }
        DriftKind::Neural { .. } => {
            let shape = kind.mlp_shape(x.len()).unwrap();
            let (_, cache) = shape.forward_cached(raw, x);
            shape.backward(raw, &cache, adj_f, grad_raw)
        }
    }
}
