//! Trainable components: the adaptive temporal encoder, MLP heads producing
//! the tilt coefficients `(A_t, B_t)`, drift parametrizations, and the
//! reverse-mode gradient plumbing with a finite-difference checker.
//!
//! Gradients are exact for everything smooth. Discrete randomness inside the
//! simulation -- Poisson jump counts and accepted mixing scales -- is
//! treated as stopped: it is recorded during the forward pass and enters the
//! backward pass as constants (the pathwise estimator). The ELBO assembly in
//! [`crate::training`] documents where stopped values are captured.

pub mod drift;
pub mod encoder;
pub mod fd;
pub mod mlp;
pub mod params;

pub use drift::{Drift, DriftKind};
pub use encoder::EncoderShape;
pub use mlp::{Activation, MlpShape};
pub use params::{
    Checkpoint, CorrectionCache, Layout, ModelKind, ModelMeta, ModelParams, Segment, SigmaEps,
    TiltCache, CHECKPOINT_VERSION,
};
