//! Encoders, decoders and the vector-quantization codebook.
//!
//! Weights use Glorot-uniform initialization with zero biases. Quantization
//! ties resolve to the lowest centroid index.

mod bundle;
mod codebook;
mod encoder;
mod mlp;

pub use bundle::Models;
pub use codebook::{dither, dither_batch, fit_codebook, Codebook, CodebookFit};
pub use encoder::{Encoded, Encoder, EncoderKind};
pub use mlp::{decode, Activation, Linear, Mlp};
