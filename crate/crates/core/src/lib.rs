//! One-step generative modeling on synthetic data via average velocity.
//!
//! A network u_θ(z, r, t) learns the average velocity of a flow between a
//! data distribution and a standard Gaussian. Training enforces the
//! differential identity u = v − (t−r)·du/dt with a single forward-mode
//! pass per sample, so a trained model can jump from noise to data in one
//! evaluation: x = ε − u_θ(ε, 0, 1).
//!
//! The crate is organized around verifiability on low-dimensional data:
//! - [`tensor`], [`autodiff`]: a small f64 tensor with matching
//!   forward-mode and reverse-mode lanes over one generic network pass.
//! - [`network`]: sinusoidal time embeddings feeding an MLP trunk.
//! - [`flow`]: interpolation paths and the one-step, multi-step, and
//!   Euler baselines.
//! - [`oracle`]: closed-form marginal velocity for Gaussian mixtures, a
//!   brute-force average velocity from integration, and identity-residual
//!   probes that any candidate field can be checked against.
//! - [`training`]: loss construction, time-pair sampling, guidance,
//!   adaptive weighting, and optimization.
//! - [`datagen`], [`eval`]: synthetic datasets, CSV interchange, and
//!   two-sample metrics.
//!
//! Everything is deterministic given a seed; `MF_THREADS` enables
//! order-preserving data parallelism that does not change results.

pub mod autodiff;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod flow;
pub mod network;
pub mod oracle;
pub mod parallel;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{MfError, Result};
pub use tensor::Tensor;
