use rand::Rng;
use serde::Serialize;

use super::spec::{Composition, EncoderRequirement, PresetSpec, TermA, TermB, TermC, TermD, TermDSource};
use crate::distributions::{standard_normal, LaplacianLikelihood, Likelihood};
use crate::error::{Error, Result};
use crate::estimators::{kl_from_ratio_var, kl_lower_bound_var, mmd_unbiased_var, EstimatorKind, RbfKernel};
use crate::models::{dither_batch, EncoderKind, Models};
use crate::oracle::{decompose_first_term, entropy, DiscreteWorld};
use crate::tensor::{Tape, Tensor, Var};

/// Per-term estimator kinds; `None` marks an inactive term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct TermKinds {
    pub a: Option<EstimatorKind>,
    pub b: Option<EstimatorKind>,
    pub c: Option<EstimatorKind>,
    pub d: Option<EstimatorKind>,
}

/// Values of the four terms and the total. `c` is a log-likelihood, so a
/// better reconstruction means a larger `c`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossReport {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub total: f64,
    pub kinds: TermKinds,
}

impl LossReport {
    /// Recomputes the total from the term values.
    pub fn compose(spec: &PresetSpec, a: f64, b: f64, c: f64, d: f64) -> f64 {
        let w = &spec.weights;
        let sign_b = match spec.composition {
            Composition::Canonical => -1.0,
            Composition::AddB => 1.0,
        };
        w.w_a * a + sign_b * w.w_b * b - w.beta * (w.w_c * c - w.w_d * d)
    }

    /// The first non-finite term, if any.
    pub fn non_finite_term(&self) -> Option<&'static str> {
        [("a", self.a), ("b", self.b), ("c", self.c), ("d", self.d), ("total", self.total)]
            .into_iter()
            .find(|(_, v)| !v.is_finite())
            .map(|(n, _)| n)
    }
}

/// Objective shape plus the settings the estimators need.
#[derive(Clone, Debug, PartialEq)]
pub struct Objective {
    pub spec: PresetSpec,
    /// Decoder likelihood for term C; must agree with `spec.bindings.term_c`.
    pub likelihood: Likelihood,
    /// Fixed MMD kernel; `None` picks the median heuristic per batch.
    pub kernel: Option<RbfKernel>,
    pub term_d_source: TermDSource,
    /// Standard deviation of the dither added to quantized latents.
    pub u_sigma: f64,
}

impl Objective {
    pub fn new(spec: PresetSpec) -> Result<Self> {
        let likelihood = match spec.bindings.term_c {
            TermC::GaussianLoglik => Likelihood::Gaussian(crate::distributions::GaussianLikelihood::new(1.0)?),
            _ => Likelihood::Laplacian(LaplacianLikelihood::new(1.0)?),
        };
        let o = Self {
            spec,
            likelihood,
            kernel: None,
            // Quantized codecs generate by decoding dithered codewords.
            term_d_source: if spec.encoder == EncoderRequirement::Quantized {
                TermDSource::Reconstruction
            } else {
                TermDSource::Prior
            },
            u_sigma: 0.0,
        };
        o.validate()?;
        Ok(o)
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        let ok = matches!(
            (self.spec.bindings.term_c, self.likelihood),
            (TermC::LaplacianLoglik, Likelihood::Laplacian(_))
                | (TermC::GaussianLoglik, Likelihood::Gaussian(_))
                | (TermC::ClassifierLoglik, _)
        );
        if !ok {
            return Err(Error::BindingMismatch(format!(
                "term C binding {} disagrees with the configured likelihood",
                self.spec.bindings.term_c
            )));
        }
        if !(self.u_sigma >= 0.0 && self.u_sigma.is_finite()) {
            return Err(Error::invalid(format!("u_sigma must be >= 0, got {}", self.u_sigma)));
        }
        Ok(())
    }
}

/// A loss on a tape together with the sample batches the discriminators
/// train on.
#[derive(Clone, Debug)]
pub struct LossOutput<'t> {
    pub report: LossReport,
    pub total: Var<'t>,
    /// Latents fed to the decoder (encoded, quantized or prior draws).
    pub latents: Tensor,
    /// Samples compared against data by term D, when it is active.
    pub generated: Option<Tensor>,
}

fn scalar<'t>(tape: &'t Tape, v: f64) -> Var<'t> {
    tape.constant(Tensor::scalar(v))
}

fn check_encoder(spec: &PresetSpec, models: &Models) -> Result<()> {
    let kind = models.encoder.as_ref().map(|e| e.kind());
    let ok = match spec.encoder {
        EncoderRequirement::GaussianHead => kind == Some(EncoderKind::GaussianHead),
        EncoderRequirement::Deterministic => kind == Some(EncoderKind::Deterministic),
        EncoderRequirement::Quantized => kind == Some(EncoderKind::Deterministic) && models.codebook.is_some(),
        EncoderRequirement::Stochastic => kind.is_some_and(EncoderKind::is_stochastic),
        EncoderRequirement::Any => kind.is_some(),
        EncoderRequirement::None => true,
    };
    if !ok {
        let have = kind.map_or("none".to_string(), |k| k.to_string());
        return Err(Error::BindingMismatch(format!(
            "objective requires a {} encoder, model has {have}{}",
            spec.encoder,
            if spec.encoder == EncoderRequirement::Quantized && models.codebook.is_none() {
                " and no codebook"
            } else {
                ""
            }
        )));
    }
    if spec.bindings.term_a == TermA::ClosedFormGaussian && kind != Some(EncoderKind::GaussianHead) {
        return Err(Error::BindingMismatch(
            "term A closed-form-gaussian needs a tractable gaussian-head posterior".into(),
        ));
    }
    Ok(())
}

/// Term B on the graph from encoded latents `z`; draws `n` prior samples.
fn term_b<'t, R: Rng + ?Sized>(
    obj: &Objective,
    models: &Models,
    tape: &'t Tape,
    z: Var<'t>,
    rng: &mut R,
) -> Result<Option<(Var<'t>, EstimatorKind)>> {
    match obj.spec.bindings.term_b {
        TermB::Off => Ok(None),
        TermB::Enumeration => Err(Error::BindingMismatch(
            "term B enumeration is only available on discrete worlds".into(),
        )),
        TermB::GaussianFit => Err(Error::BindingMismatch(
            "term B gaussian-fit is an evaluation estimator, not a training loss".into(),
        )),
        TermB::DensityRatio => {
            let d = models
                .disc_z
                .as_ref()
                .ok_or_else(|| Error::BindingMismatch("term B density-ratio needs a latent discriminator".into()))?;
            Ok(Some((kl_from_ratio_var(d, tape, z)?, EstimatorKind::DensityRatio)))
        }
        TermB::Mmd => {
            let shape = z.shape();
            let prior = standard_normal(&shape, rng);
            let kernel = match &obj.kernel {
                Some(k) => k.clone(),
                None => RbfKernel::median_heuristic(&z.value(), &prior),
            };
            Ok(Some((mmd_unbiased_var(z, tape.constant(prior), &kernel)?, EstimatorKind::Mmd)))
        }
    }
}

fn term_d<'t, R: Rng + ?Sized>(
    obj: &Objective,
    models: &Models,
    tape: &'t Tape,
    x: Var<'t>,
    recon: Var<'t>,
    latent_dim: usize,
    rng: &mut R,
) -> Result<Option<(Var<'t>, Var<'t>)>> {
    match obj.spec.bindings.term_d {
        TermD::Off => Ok(None),
        TermD::Enumeration => Err(Error::BindingMismatch(
            "term D enumeration is only available on discrete worlds".into(),
        )),
        TermD::DensityRatio => {
            let d = models
                .disc_x
                .as_ref()
                .ok_or_else(|| Error::BindingMismatch("term D density-ratio needs a data discriminator".into()))?;
            let generated = match obj.term_d_source {
                TermDSource::Reconstruction => recon,
                TermDSource::Prior => {
                    let n = x.shape()[0];
                    let z = tape.constant(standard_normal(&[n, latent_dim], rng));
                    models.decoder.forward(tape, z)?
                }
            };
            Ok(Some((kl_lower_bound_var(d, tape, x, generated)?, generated)))
        }
    }
}

/// The bounded information-bottleneck Lagrangian on one batch.
///
/// Discriminators enter as constants, so the gradient of `total` reaches
/// encoder and decoder parameters only. Randomness is consumed in a fixed
/// order: encoder noise, dither, term-B prior draw, term-D prior draw (or,
/// without an encoder, the prior latents paired with the batch).
pub fn bib_loss<'t, R: Rng + ?Sized>(
    tape: &'t Tape,
    x: &Tensor,
    models: &Models,
    obj: &Objective,
    rng: &mut R,
) -> Result<LossOutput<'t>> {
    obj.validate()?;
    let spec = &obj.spec;
    if spec.bindings.term_c == TermC::ClassifierLoglik {
        return Err(Error::BindingMismatch(
            "classifier-loglik is evaluated by the supervised loss, not the autoencoder loss".into(),
        ));
    }
    check_encoder(spec, models)?;
    let n = x.rows();
    let xv = tape.constant(x.clone());
    let latent_dim = models.decoder.in_dim();

    let mut kinds = TermKinds::default();
    let mut a_var = None;
    let mut b_var = None;
    let decoder_in: Var<'t>;

    match (&models.encoder, spec.encoder) {
        (_, EncoderRequirement::None) => {
            // Latents drawn from the prior and paired with the batch at random.
            decoder_in = tape.constant(standard_normal(&[n, latent_dim], rng));
        }
        (Some(enc), req) => {
            let encoded = enc.encode(tape, xv, rng)?;
            if req == EncoderRequirement::Quantized {
                let cb = models.codebook.as_ref().expect("checked by check_encoder");
                let idx = cb.assign(&encoded.z.value())?;
                let mut q = cb.lookup(&idx)?;
                if spec.dither {
                    q = dither_batch(&q, obj.u_sigma, rng)?;
                }
                decoder_in = tape.constant(q);
                if spec.bindings.term_a == TermA::CodebookRate {
                    let mut counts = vec![0.0; cb.len()];
                    for &j in &idx {
                        counts[j] += 1.0;
                    }
                    let probs: Vec<f64> = counts.iter().map(|c| c / n as f64).collect();
                    a_var = Some(scalar(tape, entropy(&probs)));
                    kinds.a = Some(EstimatorKind::MonteCarlo);
                }
            } else {
                decoder_in = encoded.z;
                if spec.bindings.term_a == TermA::ClosedFormGaussian {
                    let post = encoded.posterior.expect("checked by check_encoder");
                    a_var = Some(post.mean_kl_to_std_normal()?);
                    kinds.a = Some(EstimatorKind::ClosedForm);
                }
            }
            if let Some((b, kind)) = term_b(obj, models, tape, encoded.z, rng)? {
                b_var = Some(b);
                kinds.b = Some(kind);
            }
        }
        (None, _) => unreachable!("check_encoder rejects a missing encoder"),
    }

    let recon = models.decoder.forward(tape, decoder_in)?;
    let c_var = obj.likelihood.mean_log_prob(xv, recon)?;
    kinds.c = Some(EstimatorKind::MonteCarlo);
    let d_out = term_d(obj, models, tape, xv, recon, latent_dim, rng)?;
    if d_out.is_some() {
        kinds.d = Some(EstimatorKind::DensityRatio);
    }

    let w = spec.weights;
    let mut total = c_var.scale(-w.beta * w.w_c);
    if let Some(a) = a_var {
        total = total.add(a.scale(w.w_a))?;
    }
    if let Some(b) = b_var {
        let sign = if spec.composition == Composition::AddB { 1.0 } else { -1.0 };
        total = total.add(b.scale(sign * w.w_b))?;
    }
    if let Some((d, _)) = d_out {
        total = total.add(d.scale(w.beta * w.w_d))?;
    }

    let report = LossReport {
        a: a_var.map_or(0.0, |v| v.item()),
        b: b_var.map_or(0.0, |v| v.item()),
        c: c_var.item(),
        d: d_out.map_or(0.0, |(v, _)| v.item()),
        total: total.item(),
        kinds,
    };
    Ok(LossOutput {
        report,
        total,
        latents: decoder_in.value(),
        generated: d_out.map(|(_, g)| g.value()),
    })
}

/// Supervised bottleneck: `w_a·A ∓ w_b·B − β·w_c·E log p(c|z)`, i.e. term A
/// plus β times the classifier cross-entropy. Labels are 0-based.
pub fn supervised_ib_loss<'t, R: Rng + ?Sized>(
    tape: &'t Tape,
    x: &Tensor,
    labels: &[usize],
    models: &Models,
    obj: &Objective,
    rng: &mut R,
) -> Result<LossOutput<'t>> {
    obj.validate()?;
    let spec = &obj.spec;
    let classifier = models
        .classifier
        .as_ref()
        .ok_or_else(|| Error::BindingMismatch("supervised loss needs a classifier".into()))?;
    let classes = classifier.out_dim();
    if labels.len() != x.rows() {
        return Err(Error::LengthMismatch(labels.len(), x.rows()));
    }
    if let Some(&bad) = labels.iter().find(|&&c| c >= classes) {
        return Err(Error::LabelOutOfRange { label: bad, classes });
    }
    check_encoder(spec, models)?;
    let enc = models
        .encoder
        .as_ref()
        .ok_or_else(|| Error::BindingMismatch("supervised loss needs an encoder".into()))?;
    let n = x.rows();
    let encoded = enc.encode(tape, tape.constant(x.clone()), rng)?;
    let mut kinds = TermKinds::default();
    let a_var = match (spec.bindings.term_a, encoded.posterior) {
        (TermA::ClosedFormGaussian, Some(p)) => {
            kinds.a = Some(EstimatorKind::ClosedForm);
            Some(p.mean_kl_to_std_normal()?)
        }
        _ => None,
    };
    let b_var = term_b(obj, models, tape, encoded.z, rng)?.map(|(b, k)| {
        kinds.b = Some(k);
        b
    });

    let mut onehot = Tensor::zeros(&[n, classes]);
    for (i, &c) in labels.iter().enumerate() {
        onehot.data_mut()[i * classes + c] = 1.0;
    }
    let log_probs = classifier.forward(tape, encoded.z)?.log_softmax_rows()?;
    let c_var = log_probs.mul(tape.constant(onehot))?.sum().scale(1.0 / n as f64);
    kinds.c = Some(EstimatorKind::MonteCarlo);

    let w = spec.weights;
    let mut total = c_var.scale(-w.beta * w.w_c);
    if let Some(a) = a_var {
        total = total.add(a.scale(w.w_a))?;
    }
    if let Some(b) = b_var {
        let sign = if spec.composition == Composition::AddB { 1.0 } else { -1.0 };
        total = total.add(b.scale(sign * w.w_b))?;
    }
    let report = LossReport {
        a: a_var.map_or(0.0, |v| v.item()),
        b: b_var.map_or(0.0, |v| v.item()),
        c: c_var.item(),
        d: 0.0,
        total: total.item(),
        kinds,
    };
    Ok(LossOutput {
        report,
        total,
        latents: encoded.z.value(),
        generated: None,
    })
}

/// Generator objective `D + λ·E‖x − g(z)‖₁` with `z ~ N(0, I)` paired with
/// the batch at random. The report carries `c = −E‖x − g(z)‖₁`.
pub fn gan_generator_loss<'t, R: Rng + ?Sized>(
    tape: &'t Tape,
    x: &Tensor,
    models: &Models,
    lambda: f64,
    rng: &mut R,
) -> Result<LossOutput<'t>> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("lambda must be >= 0, got {lambda}")));
    }
    let disc = models
        .disc_x
        .as_ref()
        .ok_or_else(|| Error::BindingMismatch("generator loss needs a data discriminator".into()))?;
    let n = x.rows();
    let z = tape.constant(standard_normal(&[n, models.decoder.in_dim()], rng));
    let xv = tape.constant(x.clone());
    let g = models.decoder.forward(tape, z)?;
    let l1 = xv.sub(g)?.abs().sum().scale(1.0 / n as f64);
    let d = kl_lower_bound_var(disc, tape, xv, g)?;
    let total = d.add(l1.scale(lambda))?;
    let report = LossReport {
        a: 0.0,
        b: 0.0,
        c: -l1.item(),
        d: d.item(),
        total: total.item(),
        kinds: TermKinds {
            a: None,
            b: None,
            c: Some(EstimatorKind::MonteCarlo),
            d: Some(EstimatorKind::DensityRatio),
        },
    };
    Ok(LossOutput {
        report,
        total,
        latents: z.value(),
        generated: Some(g.value()),
    })
}

/// Terms A and B of a discrete world by exact enumeration. There is no
/// decoder, so C and D are reported as inactive zeros.
pub fn discrete_terms(w: &DiscreteWorld, spec: &PresetSpec) -> Result<LossReport> {
    let dec = decompose_first_term(w)?;
    Ok(LossReport {
        a: dec.term_a,
        b: dec.term_b,
        c: 0.0,
        d: 0.0,
        total: LossReport::compose(spec, dec.term_a, dec.term_b, 0.0, 0.0),
        kinds: TermKinds {
            a: Some(EstimatorKind::Enumeration),
            b: Some(EstimatorKind::Enumeration),
            c: None,
            d: None,
        },
    })
}
