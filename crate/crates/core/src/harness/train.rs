use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::eval::linear_gaussian_oracle;
use super::metrics::{MetricLog, MetricRecord};
use crate::distributions::standard_normal;
use crate::error::{Error, Result};
use crate::estimators::{discriminator_step, mmd_unbiased, RbfKernel};
use crate::objectives::{bib_loss, supervised_ib_loss, EncoderRequirement, LossOutput, Objective, TermB, TermC, TermD};
use crate::models::Models;
use crate::optim::{Adam, AdamConfig};
use crate::tensor::{Tape, Tensor};

fn default_steps() -> usize {
    1000
}

fn default_batch() -> usize {
    128
}

fn default_lr() -> f64 {
    1e-3
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_eps() -> f64 {
    1e-8
}

fn default_disc_steps() -> usize {
    3
}

fn default_eval_every() -> usize {
    100
}

fn default_eval_size() -> usize {
    256
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    /// Discriminator learning rate; defaults to `learning_rate`.
    #[serde(default)]
    pub disc_learning_rate: Option<f64>,
    #[serde(default = "default_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "default_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "default_eps")]
    pub adam_eps: f64,
    /// Discriminator updates before each model update.
    #[serde(default = "default_disc_steps")]
    pub disc_steps_per_gen_step: usize,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    /// Held-out rows used for diagnostics.
    #[serde(default = "default_eval_size")]
    pub eval_size: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: default_steps(),
            batch_size: default_batch(),
            learning_rate: default_lr(),
            disc_learning_rate: None,
            adam_beta1: default_beta1(),
            adam_beta2: default_beta2(),
            adam_eps: default_eps(),
            disc_steps_per_gen_step: default_disc_steps(),
            eval_every: default_eval_every(),
            eval_size: default_eval_size(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn disc_adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.disc_learning_rate.unwrap_or(self.learning_rate),
            ..self.adam()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.eval_every == 0 || self.eval_size == 0 {
            return Err(Error::invalid("batch_size, eval_every and eval_size must be positive"));
        }
        self.adam().validate()?;
        self.disc_adam().validate()
    }
}

pub(crate) fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

/// The loss the objective calls for: supervised when term C is the
/// classifier log-likelihood, the autoencoder Lagrangian otherwise.
pub fn batch_loss<'t, R: Rng + ?Sized>(
    tape: &'t Tape,
    x: &Tensor,
    labels: Option<&[usize]>,
    models: &Models,
    obj: &Objective,
    rng: &mut R,
) -> Result<LossOutput<'t>> {
    if obj.spec.bindings.term_c == TermC::ClassifierLoglik {
        let labels = labels.ok_or_else(|| Error::invalid("the supervised objective needs labeled data"))?;
        supervised_ib_loss(tape, x, labels, models, obj, rng)
    } else {
        bib_loss(tape, x, models, obj, rng)
    }
}

fn labels_at(labels: Option<&Vec<usize>>, idx: &[usize]) -> Option<Vec<usize>> {
    labels.map(|l| idx.iter().map(|&i| l[i]).collect())
}

/// Diagnostics on the first `eval_size` held-out rows with a fixed noise stream.
fn evaluate(models: &Models, obj: &Objective, data: &Dataset, cfg: &TrainConfig, rec: &mut MetricRecord) -> Result<()> {
    let n = cfg.eval_size.min(data.test.rows());
    let idx: Vec<usize> = (0..n).collect();
    let x = data.test.select_rows(&idx)?;
    let labels = labels_at(data.test_labels.as_ref(), &idx);
    let mut rng = stream(cfg.seed, 1);
    let tape = Tape::new();
    let out = batch_loss(&tape, &x, labels.as_deref(), models, obj, &mut rng)?;
    let prior = standard_normal(&[n, out.latents.cols()], &mut rng);
    if let (Some(d), Some(g)) = (&models.disc_x, &out.generated) {
        rec.disc_acc = Some(d.accuracy(&x, g)?);
    } else if let Some(d) = &models.disc_z {
        rec.disc_acc = Some(d.accuracy(&out.latents, &prior)?);
    }
    if obj.spec.encoder != EncoderRequirement::None && n >= 2 {
        let k = obj
            .kernel
            .clone()
            .unwrap_or_else(|| RbfKernel::median_heuristic(&out.latents, &prior));
        rec.mmd = Some(mmd_unbiased(&out.latents, &prior, &k)?);
    }
    if let Some(o) = linear_gaussian_oracle(models, data)? {
        rec.oracle.insert("a_exact".into(), o.a_exact);
        rec.oracle.insert("b_exact".into(), o.b_exact);
        rec.oracle.insert("mi_exact".into(), o.mi_exact);
    }
    Ok(())
}

/// Adam on encoder, decoder and classifier against the objective. Active
/// density-ratio terms first get `disc_steps_per_gen_step` discriminator
/// updates on fresh batches; discriminators are constants inside the model
/// loss, so neither side's step touches the other's parameters.
///
/// Records the training-batch loss every `eval_every` steps and at the last
/// step, with held-out diagnostics taken before that step's update. A non-finite term aborts with [`Error::Divergence`].
pub fn train(models: &mut Models, obj: &Objective, data: &Dataset, cfg: &TrainConfig) -> Result<MetricLog> {
    cfg.validate()?;
    obj.validate()?;
    let mut log = MetricLog::new();
    let mut rng = stream(cfg.seed, 0);
    let mut opt = Adam::new(cfg.adam())?;
    let mut opt_z = Adam::new(cfg.disc_adam())?;
    let mut opt_x = Adam::new(cfg.disc_adam())?;
    let fit_z = obj.spec.bindings.term_b == TermB::DensityRatio;
    let fit_x = obj.spec.bindings.term_d == TermD::DensityRatio;
    let n = data.train.rows();
    let bs = cfg.batch_size;
    let labels = data.train_labels.as_ref();
    let draw = |rng: &mut ChaCha8Rng| -> Result<(Tensor, Option<Vec<usize>>)> {
        let idx: Vec<usize> = (0..bs).map(|_| rng.random_range(0..n)).collect();
        Ok((data.train.select_rows(&idx)?, labels_at(labels, &idx)))
    };

    for step in 0..cfg.steps {
        if fit_z || fit_x {
            for _ in 0..cfg.disc_steps_per_gen_step {
                let (x, y) = draw(&mut rng)?;
                let (latents, generated) = {
                    let tape = Tape::new();
                    let out = batch_loss(&tape, &x, y.as_deref(), models, obj, &mut rng)?;
                    (out.latents, out.generated)
                };
                if let (true, Some(d)) = (fit_z, models.disc_z.as_mut()) {
                    let prior = standard_normal(&[latents.rows(), latents.cols()], &mut rng);
                    discriminator_step(d, &latents, &prior, &mut opt_z)?;
                }
                if let (Some(d), Some(g)) = (models.disc_x.as_mut().filter(|_| fit_x), generated) {
                    discriminator_step(d, &x, &g, &mut opt_x)?;
                }
            }
        }

        let (x, y) = draw(&mut rng)?;
        let (report, grads) = {
            let tape = Tape::new();
            let out = batch_loss(&tape, &x, y.as_deref(), models, obj, &mut rng)?;
            if let Some(term) = out.report.non_finite_term() {
                return Err(Error::Divergence { step, term });
            }
            (out.report, tape.backward(out.total)?)
        };
        if step % cfg.eval_every == 0 || step + 1 == cfg.steps {
            let mut rec = MetricRecord::from_report(step, &report);
            evaluate(models, obj, data, cfg, &mut rec)?;
            log.push(rec)?;
        }

        for p in models.model_params_mut() {
            p.accumulate(&grads)?;
        }
        opt.step(models.model_params_mut());
        if models.model_params().iter().any(|p| !p.value.is_finite()) {
            return Err(Error::Divergence { step, term: "parameters" });
        }
    }
    Ok(log)
}
