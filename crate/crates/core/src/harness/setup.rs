use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::Discriminator;
use crate::models::{Activation, Encoder, EncoderKind, Mlp, Models};
use crate::objectives::{EncoderRequirement, PresetSpec, TermB, TermC, TermD};
use crate::tensor::Tensor;

fn default_latent() -> usize {
    2
}

fn default_hidden() -> Vec<usize> {
    vec![32, 32]
}

fn default_activation() -> Activation {
    Activation::Tanh
}

fn default_noise_dim() -> usize {
    2
}

fn default_noise_sigma() -> f64 {
    0.1
}

/// Architecture of every network in a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_latent")]
    pub latent_dim: usize,
    /// Hidden widths of encoder and decoder.
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    /// Encoder kind; `None` picks the one the objective requires.
    #[serde(default)]
    pub encoder: Option<EncoderKind>,
    #[serde(default = "default_noise_dim")]
    pub noise_dim: usize,
    #[serde(default = "default_noise_sigma")]
    pub noise_sigma: f64,
    #[serde(default = "default_hidden")]
    pub disc_hidden: Vec<usize>,
    #[serde(default)]
    pub classifier_hidden: Vec<usize>,
    /// Zero the encoder's output layer so a Gaussian head starts at the prior.
    #[serde(default)]
    pub zero_init_head: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent_dim: default_latent(),
            hidden: default_hidden(),
            activation: default_activation(),
            encoder: None,
            noise_dim: default_noise_dim(),
            noise_sigma: default_noise_sigma(),
            disc_hidden: default_hidden(),
            classifier_hidden: Vec::new(),
            zero_init_head: false,
        }
    }
}

impl ModelConfig {
    /// Encoder kind used for `spec`, or `None` when it needs no encoder.
    pub fn encoder_kind(&self, spec: &PresetSpec) -> Result<Option<EncoderKind>> {
        let default = match spec.encoder {
            EncoderRequirement::None => return Ok(None),
            EncoderRequirement::Deterministic | EncoderRequirement::Quantized => EncoderKind::Deterministic,
            EncoderRequirement::Stochastic => EncoderKind::AdditiveInputNoise,
            EncoderRequirement::GaussianHead | EncoderRequirement::Any => EncoderKind::GaussianHead,
        };
        Ok(Some(self.encoder.unwrap_or(default)))
    }
}

fn widths(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut w = vec![input];
    w.extend_from_slice(hidden);
    w.push(output);
    w
}

/// Builds every network `spec` needs. Initialization draws from one stream
/// seeded by `seed` in the order encoder, decoder, latent discriminator,
/// data discriminator, classifier.
pub fn build_models(
    cfg: &ModelConfig,
    input_dim: usize,
    n_classes: Option<usize>,
    spec: &PresetSpec,
    seed: u64,
) -> Result<Models> {
    if cfg.latent_dim == 0 || input_dim == 0 {
        return Err(Error::invalid("latent_dim and input width must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nz = cfg.latent_dim;
    let encoder = match cfg.encoder_kind(spec)? {
        None => None,
        Some(kind) => {
            let mut e = Encoder::new(
                kind,
                input_dim,
                &cfg.hidden,
                nz,
                cfg.activation,
                cfg.noise_dim,
                cfg.noise_sigma,
                &mut rng,
            )?;
            if cfg.zero_init_head {
                e.body_mut().zero_last_layer();
            }
            Some(e)
        }
    };
    let decoder = Mlp::new("decoder", &widths(nz, &cfg.hidden, input_dim), cfg.activation, &mut rng)?;
    let mut m = Models::new(encoder, decoder);
    if spec.bindings.term_b == TermB::DensityRatio {
        m.disc_z = Some(Discriminator::new("disc_z", nz, &cfg.disc_hidden, cfg.activation, &mut rng)?);
    }
    if spec.bindings.term_d == TermD::DensityRatio {
        m.disc_x = Some(Discriminator::new("disc_x", input_dim, &cfg.disc_hidden, cfg.activation, &mut rng)?);
    }
    if spec.bindings.term_c == TermC::ClassifierLoglik {
        let classes = n_classes.ok_or_else(|| Error::invalid("the supervised objective needs labeled data"))?;
        m.classifier = Some(Mlp::new(
            "classifier",
            &widths(nz, &cfg.classifier_hidden, classes),
            cfg.activation,
            &mut rng,
        )?);
    }
    Ok(m)
}

/// Gaussian-head encoder computing `z = A x + b + diag(√noise_var) ε` with
/// one linear layer; the closed-form counterpart of the linear-Gaussian oracle.
pub fn linear_gaussian_encoder(enc_matrix: &[Vec<f64>], bias: &[f64], noise_var: &[f64]) -> Result<Encoder> {
    let nz = enc_matrix.len();
    let n = enc_matrix.first().map_or(0, |r| r.len());
    if nz == 0 || n == 0 || enc_matrix.iter().any(|r| r.len() != n) {
        return Err(Error::invalid("enc_matrix must be a non-empty rectangular matrix"));
    }
    if bias.len() != nz || noise_var.len() != nz {
        return Err(Error::LengthMismatch(bias.len().min(noise_var.len()), nz));
    }
    if let Some(v) = noise_var.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::invalid(format!("noise variances must be positive, got {v}")));
    }
    let mut body = Mlp::new("encoder", &[n, 2 * nz], Activation::Tanh, &mut ChaCha8Rng::seed_from_u64(0))?;
    let mut w = Tensor::zeros(&[n, 2 * nz]);
    for (k, row) in enc_matrix.iter().enumerate() {
        for (i, a) in row.iter().enumerate() {
            w.data_mut()[i * 2 * nz + k] = *a;
        }
    }
    let b: Vec<f64> = bias.iter().copied().chain(noise_var.iter().map(|v| 0.5 * v.ln())).collect();
    let layer = &mut body.layers_mut()[0];
    layer.weight.value = w;
    layer.bias.value = Tensor::row(&b)?;
    Encoder::from_body(EncoderKind::GaussianHead, body, nz, 0, 0.0)
}

/// `(A, b, noise variances)` of a linear-Gaussian encoder.
pub type LinearGaussianParams = (Vec<Vec<f64>>, Vec<f64>, Vec<f64>);

/// Reads `(A, b, noise variances)` back from an encoder built like
/// [`linear_gaussian_encoder`]: one linear layer whose `log σ` outputs do
/// not depend on `x`.
pub fn analytic_linear_gaussian(enc: &Encoder) -> Option<LinearGaussianParams> {
    if enc.kind() != EncoderKind::GaussianHead || enc.body().layers().len() != 1 {
        return None;
    }
    let nz = enc.latent_dim();
    let layer = &enc.body().layers()[0];
    let n = layer.fan_in();
    let w = layer.weight.value.data();
    if (0..n).any(|i| (nz..2 * nz).any(|k| w[i * 2 * nz + k] != 0.0)) {
        return None;
    }
    let a = (0..nz).map(|k| (0..n).map(|i| w[i * 2 * nz + k]).collect()).collect();
    let b = layer.bias.value.data();
    Some((a, b[..nz].to_vec(), b[nz..].iter().map(|ls| (2.0 * ls).exp()).collect()))
}
