//! Desk-scale flow-matching trainer with batch dispersion regularizers.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`], [`kernels`], [`tape`], [`check`]: a small dense-`f64`
//!   numerics layer with reverse-mode differentiation and a finite-difference
//!   gradient checker.
//! - [`losses`], [`oracle`]: the dispersion regularizer family (InfoNCE with
//!   squared-Euclidean or cosine dissimilarity, hinge, covariance) in both
//!   contrastive and batch-only form, plus slow reference implementations
//!   used to cross-check the fast paths.
//! - [`diffusion`], [`model`], [`optim`]: the linear-interpolant velocity
//!   target, a residual MLP denoiser with hidden-layer taps, and Adam.
//! - [`sampler`], [`metrics`], [`data`]: deterministic ODE and SDE samplers,
//!   kernel two-sample diagnostics, and toy 2-D datasets.
//! - [`harness`]: configuration, the training loop, evaluation, and sweeps.

pub mod check;
pub mod data;
pub mod diffusion;
pub mod error;
pub mod harness;
pub mod kernels;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod oracle;
pub mod properties;
pub mod rng;
pub mod sampler;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
