use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::LOGIT_CLAMP;
use crate::models::Models;
use crate::tensor::Tensor;

fn one() -> f64 {
    1.0
}

/// Weights of the two score components.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoveltyWeights {
    #[serde(default = "one")]
    pub disc: f64,
    #[serde(default = "one")]
    pub recon: f64,
}

impl Default for NoveltyWeights {
    fn default() -> Self {
        Self { disc: 1.0, recon: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NoveltyScore {
    /// `−logit` of the data discriminator (clamped like the estimators).
    pub disc: f64,
    /// ℓ1 reconstruction residual through the noise-free encoder.
    pub recon: f64,
    /// `w_disc·disc + w_recon·recon`; higher is more novel.
    pub score: f64,
}

/// Per-row novelty scores. Requires a data discriminator with at least one
/// training step.
pub fn novelty_scores(models: &Models, x: &Tensor, w: NoveltyWeights) -> Result<Vec<NoveltyScore>> {
    let d = models
        .disc_x
        .as_ref()
        .ok_or_else(|| Error::UntrainedDiscriminator("disc_x".into()))?;
    if d.steps_trained() == 0 {
        return Err(Error::UntrainedDiscriminator("disc_x".into()));
    }
    let logits = d.logits(x)?;
    let recon = if w.recon != 0.0 {
        let enc = models
            .encoder
            .as_ref()
            .ok_or_else(|| Error::BindingMismatch("the reconstruction score needs an encoder".into()))?;
        let mut z = enc.encode_mean(x)?;
        if let Some(cb) = &models.codebook {
            z = cb.lookup(&cb.assign(&z)?)?;
        }
        Some(models.decoder.eval(&z)?)
    } else {
        None
    };
    Ok((0..x.rows())
        .map(|i| {
            let disc = -logits.data()[i].clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
            let r = recon.as_ref().map_or(0.0, |g| {
                x.row_slice(i).iter().zip(g.row_slice(i)).map(|(a, b)| (a - b).abs()).sum()
            });
            NoveltyScore {
                disc,
                recon: r,
                score: w.disc * disc + w.recon * r,
            }
        })
        .collect())
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half.
pub fn auroc(negatives: &[f64], positives: &[f64]) -> Result<f64> {
    if negatives.is_empty() || positives.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let mut all: Vec<(f64, bool)> = negatives
        .iter()
        .map(|&v| (v, false))
        .chain(positives.iter().map(|&v| (v, true)))
        .collect();
    if all.iter().any(|(v, _)| v.is_nan()) {
        return Err(Error::Domain {
            op: "auroc",
            detail: "NaN score".into(),
        });
    }
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Mann-Whitney U from midranks.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let mid = (i + j + 1) as f64 / 2.0;
        rank_sum += all[i..j].iter().filter(|(_, p)| *p).count() as f64 * mid;
        i = j;
    }
    let (np, nn) = (positives.len() as f64, negatives.len() as f64);
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}
