//! Deformable adversarial 3-D autoencoder for unsupervised detection and
//! localization of atrophy-like anomalies.
//!
//! An autoencoder trained on healthy volumes produces pseudo-healthy
//! reconstructions. A strongly regularized deformer warps the
//! reconstruction onto the input to give a residual map with fewer false
//! positives; a weakly regularized deformer is allowed to fold space, and
//! its negative Jacobian determinants mark contraction. Their product is the
//! anomaly map.

pub mod autograd;
pub mod deformation;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod networks;
pub mod pipeline;
pub mod render;
pub mod volume;

pub use error::{Error, Result};
