use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::metrics::MetricLog;
use super::setup::{build_models, ModelConfig};
use super::train::{stream, train, TrainConfig};
use crate::error::{Error, Result};
use crate::models::{dither_batch, fit_codebook, Models};
use crate::objectives::{
    Composition, EncoderRequirement, Objective, PresetSpec, TermA, TermB, TermBindings, TermD, TermWeights,
};
use crate::tensor::Tensor;

fn default_iters() -> usize {
    50
}

fn default_codebook() -> usize {
    8
}

/// Settings of the two-phase quantized codec.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantizerConfig {
    #[serde(default = "default_codebook")]
    pub codebook_size: usize,
    #[serde(default = "default_iters")]
    pub kmeans_iters: usize,
    /// Steps of the second phase on quantized latents.
    #[serde(default)]
    pub finetune_steps: usize,
    /// Dither scale; defaults to 0.1 of the mean nearest-centroid distance.
    #[serde(default)]
    pub u_sigma: Option<f64>,
}

impl Default for QuantizerConfig {
    fn default() -> Self {
        Self {
            codebook_size: default_codebook(),
            kmeans_iters: default_iters(),
            finetune_steps: 0,
            u_sigma: None,
        }
    }
}

/// Plain deterministic autoencoder objective `−β C` sharing `obj`'s likelihood.
pub fn autoencoder_objective(obj: &Objective) -> Result<Objective> {
    let spec = PresetSpec {
        preset: None,
        weights: TermWeights::new(0.0, 0.0, 1.0, 0.0, obj.spec.weights.beta)?,
        bindings: TermBindings {
            term_a: TermA::Unavailable,
            term_b: TermB::Off,
            term_c: obj.spec.bindings.term_c,
            term_d: TermD::Off,
        },
        composition: Composition::Canonical,
        encoder: EncoderRequirement::Deterministic,
        dither: false,
    };
    let mut ae = obj.clone();
    ae.spec = spec;
    ae.validate()?;
    Ok(ae)
}

/// Two-phase training for quantized objectives: a deterministic
/// autoencoder, then k-means on its frozen training latents, then
/// `finetune_steps` on the quantized objective (encoder frozen by
/// construction). Returns the merged log and the objective with its dither
/// scale resolved.
pub fn train_quantized(
    models: &mut Models,
    obj: &Objective,
    data: &Dataset,
    cfg: &TrainConfig,
    q: &QuantizerConfig,
) -> Result<(MetricLog, Objective)> {
    if obj.spec.encoder != EncoderRequirement::Quantized {
        return Err(Error::BindingMismatch(format!(
            "two-phase training needs a quantized objective, got encoder requirement {}",
            obj.spec.encoder
        )));
    }
    models.codebook = None;
    let mut log = train(models, &autoencoder_objective(obj)?, data, cfg)?;
    let enc = models
        .encoder
        .as_ref()
        .ok_or_else(|| Error::BindingMismatch("quantized codec needs an encoder".into()))?;
    let z = enc.encode_mean(&data.train)?;
    let cb = fit_codebook(&z, q.codebook_size, q.kmeans_iters, &mut stream(cfg.seed, 3))?.codebook;
    let mut obj = obj.clone();
    if obj.spec.dither {
        obj.u_sigma = q.u_sigma.unwrap_or(0.1 * cb.mean_nearest_centroid_distance());
    }
    models.codebook = Some(cb);
    let fine = TrainConfig {
        steps: q.finetune_steps,
        seed: cfg.seed.wrapping_add(1),
        ..cfg.clone()
    };
    log.extend_shifted(train(models, &obj, data, &fine)?, cfg.steps)?;
    Ok((log, obj))
}

/// One point of a rate–distortion curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RdPoint {
    pub l: usize,
    /// Codeword usage entropy on the training latents, in nats.
    pub rate_nats: f64,
    /// Mean squared ℓ2 reconstruction error on the test set.
    pub distortion: f64,
}

impl RdPoint {
    pub fn rate_bits(&self) -> f64 {
        self.rate_nats / std::f64::consts::LN_2
    }
}

fn mean_sq_error(x: &Tensor, y: &Tensor) -> Result<f64> {
    let d = x.sub(y)?;
    Ok(d.data().iter().map(|v| v * v).sum::<f64>() / x.rows() as f64)
}

/// Trains one deterministic autoencoder from `cfg.seed`, then fits a
/// codebook per `L` on its training latents. Every fit restarts the same
/// k-means++ stream, so the first `L` seeds are shared across sizes.
pub fn rd_curve(
    data: &Dataset,
    model: &ModelConfig,
    ls: &[usize],
    kmeans_iters: usize,
    obj: &Objective,
    cfg: &TrainConfig,
) -> Result<Vec<RdPoint>> {
    if ls.is_empty() || ls[0] == 0 || ls.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid(format!("codebook sizes must be >= 1 and ascending, got {ls:?}")));
    }
    let ae = autoencoder_objective(obj)?;
    let mut mcfg = model.clone();
    mcfg.encoder = Some(crate::models::EncoderKind::Deterministic);
    let mut models = build_models(&mcfg, data.dim(), data.n_classes(), &ae.spec, cfg.seed)?;
    train(&mut models, &ae, data, cfg)?;
    let enc = models.encoder.as_ref().expect("deterministic encoder was built");
    let z_train = enc.encode_mean(&data.train)?;
    let z_test = enc.encode_mean(&data.test)?;
    ls.iter()
        .map(|&l| {
            let cb = fit_codebook(&z_train, l, kmeans_iters, &mut stream(cfg.seed, 3))?.codebook;
            let recon = models.decoder.eval(&cb.lookup(&cb.assign(&z_test)?)?)?;
            Ok(RdPoint {
                l,
                rate_nats: cb.rate()?,
                distortion: mean_sq_error(&data.test, &recon)?,
            })
        })
        .collect()
}

/// [`rd_curve`] for each seed in parallel; results follow `seeds` order.
pub fn rd_sweep(
    data: &Dataset,
    model: &ModelConfig,
    ls: &[usize],
    kmeans_iters: usize,
    obj: &Objective,
    cfg: &TrainConfig,
    seeds: &[u64],
) -> Result<Vec<(u64, Vec<RdPoint>)>> {
    seeds
        .par_iter()
        .map(|&seed| {
            let c = TrainConfig { seed, ..cfg.clone() };
            Ok((seed, rd_curve(data, model, ls, kmeans_iters, obj, &c)?))
        })
        .collect()
}

/// Quantizes `x` through the codec and decodes `n_draws` dithered copies.
pub fn gc_reconstruct<R: Rng + ?Sized>(
    models: &Models,
    x: &Tensor,
    u_sigma: f64,
    n_draws: usize,
    rng: &mut R,
) -> Result<Vec<Tensor>> {
    let enc = models
        .encoder
        .as_ref()
        .ok_or_else(|| Error::BindingMismatch("reconstruction needs an encoder".into()))?;
    let cb = models
        .codebook
        .as_ref()
        .ok_or_else(|| Error::BindingMismatch("reconstruction needs a codebook".into()))?;
    let q = cb.lookup(&cb.assign(&enc.encode_mean(x)?)?)?;
    (0..n_draws)
        .map(|_| models.decoder.eval(&dither_batch(&q, u_sigma, rng)?))
        .collect()
}
