//! Bounded information-bottleneck autoencoder laboratory.
//!
//! One four-term Lagrangian
//!
//! ```text
//! L = w_a·A − w_b·B − β (w_c·C − w_d·D)
//! A = E_x KL(q(z|x) ‖ p(z))      B = KL(q(z) ‖ p(z))
//! C = E log p(x|z)                D = KL(p_data(x) ‖ p_model(x))
//! ```
//!
//! whose weights and estimator bindings recover VAE, β-VAE, AAE, InfoVAE,
//! GAN, VAE/GAN, rate–distortion autoencoders and generative compression.
//! The [`oracle`] module provides exact enumeration ground truth for every
//! identity and bound the objectives rely on.

pub mod distributions;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod models;
pub mod objectives;
pub mod optim;
pub mod oracle;
pub mod tensor;

pub use error::{Error, Result};
