use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{Activation, Mlp};
use crate::distributions::{standard_normal, GaussianPosterior};
use crate::error::{Error, Result};
use crate::tensor::{Module, Parameter, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    /// `z = f(x)`
    Deterministic,
    /// `z = μ(x) + σ(x) ⊙ ε`
    GaussianHead,
    /// `z = f(x + σ_n ε)`
    AdditiveInputNoise,
    /// `z = f([x, ε])`
    ConcatNoise,
}

impl EncoderKind {
    pub const ALL: [EncoderKind; 4] = [
        EncoderKind::Deterministic,
        EncoderKind::GaussianHead,
        EncoderKind::AdditiveInputNoise,
        EncoderKind::ConcatNoise,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EncoderKind::Deterministic => "deterministic",
            EncoderKind::GaussianHead => "gaussian-head",
            EncoderKind::AdditiveInputNoise => "additive-input-noise",
            EncoderKind::ConcatNoise => "concat-noise",
        }
    }

    pub fn is_stochastic(self) -> bool {
        self != EncoderKind::Deterministic
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| Error::UnknownName {
            kind: "encoder kind",
            name: s.into(),
            valid: Self::ALL.map(|k| k.name()).join(", "),
        })
    }
}

/// Encoder output; `posterior` is present only for the Gaussian head.
#[derive(Clone, Copy, Debug)]
pub struct Encoded<'t> {
    pub z: Var<'t>,
    pub posterior: Option<GaussianPosterior<'t>>,
}

#[derive(Clone, Debug)]
pub struct Encoder {
    kind: EncoderKind,
    body: Mlp,
    input_dim: usize,
    latent_dim: usize,
    noise_dim: usize,
    noise_sigma: f64,
    log_sigma_clamp: Option<(f64, f64)>,
}

impl Encoder {
    /// Builds the body with widths `[in, hidden.., out]` where `in` and
    /// `out` follow from the kind.
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        kind: EncoderKind,
        input_dim: usize,
        hidden: &[usize],
        latent_dim: usize,
        activation: Activation,
        noise_dim: usize,
        noise_sigma: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if kind == EncoderKind::ConcatNoise && noise_dim == 0 {
            return Err(Error::invalid("concat-noise encoder needs noise_dim > 0"));
        }
        if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
            return Err(Error::invalid(format!("noise_sigma must be >= 0, got {noise_sigma}")));
        }
        let body_in = input_dim + if kind == EncoderKind::ConcatNoise { noise_dim } else { 0 };
        let body_out = if kind == EncoderKind::GaussianHead { 2 * latent_dim } else { latent_dim };
        let mut widths = vec![body_in];
        widths.extend_from_slice(hidden);
        widths.push(body_out);
        let body = Mlp::new("encoder", &widths, activation, rng)?;
        Ok(Self {
            kind,
            body,
            input_dim,
            latent_dim,
            noise_dim: if kind == EncoderKind::ConcatNoise { noise_dim } else { 0 },
            noise_sigma,
            log_sigma_clamp: None,
        })
    }

    /// Wraps an existing body, checking its widths against the kind.
    pub fn from_body(kind: EncoderKind, body: Mlp, latent_dim: usize, noise_dim: usize, noise_sigma: f64) -> Result<Self> {
        let noise_dim = if kind == EncoderKind::ConcatNoise { noise_dim } else { 0 };
        let want_out = if kind == EncoderKind::GaussianHead { 2 * latent_dim } else { latent_dim };
        if body.out_dim() != want_out || body.in_dim() <= noise_dim {
            return Err(Error::shape("encoder body", &body.widths(), &[want_out]));
        }
        Ok(Self {
            kind,
            input_dim: body.in_dim() - noise_dim,
            body,
            latent_dim,
            noise_dim,
            noise_sigma,
            log_sigma_clamp: None,
        })
    }

    /// Restricts the Gaussian head's `log σ` to `[lo, hi]`.
    pub fn with_log_sigma_clamp(mut self, lo: f64, hi: f64) -> Self {
        self.log_sigma_clamp = Some((lo, hi));
        self
    }

    pub fn kind(&self) -> EncoderKind {
        self.kind
    }

    pub fn body(&self) -> &Mlp {
        &self.body
    }

    pub fn body_mut(&mut self) -> &mut Mlp {
        &mut self.body
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    /// Shape of the standard-normal noise consumed for a batch of `n`, if any.
    pub fn noise_shape(&self, n: usize) -> Option<[usize; 2]> {
        match self.kind {
            EncoderKind::Deterministic => None,
            EncoderKind::GaussianHead => Some([n, self.latent_dim]),
            EncoderKind::AdditiveInputNoise => Some([n, self.input_dim]),
            EncoderKind::ConcatNoise => Some([n, self.noise_dim]),
        }
    }

    /// Draws the kind's noise from `rng` and encodes.
    pub fn encode<'t, R: Rng + ?Sized>(&self, tape: &'t Tape, x: Var<'t>, rng: &mut R) -> Result<Encoded<'t>> {
        let n = x.shape().first().copied().unwrap_or(0);
        let noise = self.noise_shape(n).map(|s| standard_normal(&s, rng));
        self.encode_with_noise(tape, x, noise.as_ref())
    }

    /// Encodes with explicit standard-normal noise (ignored for the
    /// deterministic kind). Passing zeros yields the noiseless map.
    pub fn encode_with_noise<'t>(&self, tape: &'t Tape, x: Var<'t>, noise: Option<&Tensor>) -> Result<Encoded<'t>> {
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.input_dim {
            return Err(Error::shape("encode", &shape, &[0, self.input_dim]));
        }
        let n = shape[0];
        let noise = match (self.noise_shape(n), noise) {
            (None, _) => None,
            (Some(s), Some(t)) if t.shape() == s => Some(t.clone()),
            (Some(s), Some(t)) => return Err(Error::shape("encoder noise", t.shape(), &s)),
            (Some(s), None) => Some(Tensor::zeros(&s)),
        };
        match self.kind {
            EncoderKind::Deterministic => Ok(Encoded {
                z: self.body.forward(tape, x)?,
                posterior: None,
            }),
            EncoderKind::GaussianHead => {
                let out = self.body.forward(tape, x)?;
                let mu = out.slice_cols(0, self.latent_dim)?;
                let mut log_sigma = out.slice_cols(self.latent_dim, 2 * self.latent_dim)?;
                if let Some((lo, hi)) = self.log_sigma_clamp {
                    log_sigma = log_sigma.clamp(lo, hi);
                }
                let posterior = GaussianPosterior { mu, log_sigma };
                let eps = noise.expect("gaussian head has noise");
                Ok(Encoded {
                    z: posterior.sample_reparam(&eps)?,
                    posterior: Some(posterior),
                })
            }
            EncoderKind::AdditiveInputNoise => {
                let eps = noise.expect("additive kind has noise").scale(self.noise_sigma);
                let xn = x.add(tape.constant(eps))?;
                Ok(Encoded {
                    z: self.body.forward(tape, xn)?,
                    posterior: None,
                })
            }
            EncoderKind::ConcatNoise => {
                let eps = noise.expect("concat kind has noise");
                // [x, ε] = x·[I 0] + ε·[0 I], keeping x on the graph.
                let d = self.input_dim;
                let k = self.noise_dim;
                let mut px = Tensor::zeros(&[d, d + k]);
                for i in 0..d {
                    px.data_mut()[i * (d + k) + i] = 1.0;
                }
                let mut pe = Tensor::zeros(&[k, d + k]);
                for i in 0..k {
                    pe.data_mut()[i * (d + k) + d + i] = 1.0;
                }
                let joined = x
                    .matmul(tape.constant(px))?
                    .add(tape.constant(eps.matmul(&pe)?))?;
                Ok(Encoded {
                    z: self.body.forward(tape, joined)?,
                    posterior: None,
                })
            }
        }
    }

    /// Noise-free latent codes (μ for the Gaussian head), values only.
    pub fn encode_mean(&self, x: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let enc = self.encode_with_noise(&tape, tape.constant(x.clone()), None)?;
        Ok(match enc.posterior {
            Some(p) => p.mu.value(),
            None => enc.z.value(),
        })
    }
}

impl Module for Encoder {
    fn parameters(&self) -> Vec<&Parameter> {
        self.body.parameters()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        self.body.parameters_mut()
    }
}
