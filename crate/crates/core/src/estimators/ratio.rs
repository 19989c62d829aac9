use rand::Rng;

use crate::error::{Error, Result};
use crate::models::{Activation, Mlp};
use crate::optim::Adam;
use crate::tensor::{Module, Parameter, Tape, Tensor, Var};

/// Bound applied to discriminator logits before they enter a KL estimate.
pub const LOGIT_CLAMP: f64 = 10.0;

/// Binary classifier producing one logit per sample. Trained with label 1
/// for samples of `P` and 0 for samples of `Q`, so that its logit
/// approximates `log p/q`.
#[derive(Clone, Debug)]
pub struct Discriminator {
    net: Mlp,
    steps_trained: u64,
}

impl Discriminator {
    /// The final layer starts at zero, so an untrained discriminator outputs logit 0.
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        input_dim: usize,
        hidden: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut widths = vec![input_dim];
        widths.extend_from_slice(hidden);
        widths.push(1);
        let mut net = Mlp::new(name, &widths, activation, rng)?;
        net.zero_last_layer();
        Ok(Self { net, steps_trained: 0 })
    }

    pub fn from_mlp(net: Mlp, steps_trained: u64) -> Result<Self> {
        if net.out_dim() != 1 {
            return Err(Error::shape("discriminator", &net.widths(), &[1]));
        }
        Ok(Self { net, steps_trained })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn input_dim(&self) -> usize {
        self.net.in_dim()
    }

    pub fn steps_trained(&self) -> u64 {
        self.steps_trained
    }

    pub(crate) fn set_steps_trained(&mut self, steps: u64) {
        self.steps_trained = steps;
    }

    /// Logits `(n, 1)` on a tape. With `frozen` the parameters are constants.
    pub fn logits_on<'t>(&self, tape: &'t Tape, x: Var<'t>, frozen: bool) -> Result<Var<'t>> {
        self.net.forward_on(tape, x, frozen)
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.net.eval(x)
    }

    /// Fraction of `p` rows with positive logit and `q` rows with non-positive logit.
    pub fn accuracy(&self, p: &Tensor, q: &Tensor) -> Result<f64> {
        let lp = self.logits(p)?;
        let lq = self.logits(q)?;
        let hits = lp.data().iter().filter(|&&l| l > 0.0).count() + lq.data().iter().filter(|&&l| l <= 0.0).count();
        Ok(hits as f64 / (lp.numel() + lq.numel()) as f64)
    }
}

impl Module for Discriminator {
    fn parameters(&self) -> Vec<&Parameter> {
        self.net.parameters()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        self.net.parameters_mut()
    }
}

/// Balanced binary cross-entropy `½ (mean_P softplus(−l) + mean_Q softplus(l))`.
/// At `P = Q` the optimum is `ln 2`.
pub fn bce_loss<'t>(d: &Discriminator, tape: &'t Tape, p: Var<'t>, q: Var<'t>, frozen: bool) -> Result<Var<'t>> {
    let lp = d.logits_on(tape, p, frozen)?;
    let lq = d.logits_on(tape, q, frozen)?;
    Ok(lp.neg().softplus().mean().add(lq.softplus().mean())?.scale(0.5))
}

/// One Adam step on [`bce_loss`]; samples enter as constants. Returns the
/// loss before the update.
pub fn discriminator_step(d: &mut Discriminator, p: &Tensor, q: &Tensor, opt: &mut Adam) -> Result<f64> {
    if p.rows() == 0 || q.rows() == 0 {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let tape = Tape::new();
    let loss = bce_loss(d, &tape, tape.constant(p.clone()), tape.constant(q.clone()), false)?;
    let grads = tape.backward(loss)?;
    d.accumulate_grads(&grads)?;
    opt.step(d.parameters_mut());
    d.steps_trained += 1;
    Ok(loss.item())
}

/// `E_P[clamp(logit)]`, the density-ratio estimate of `KL(P ‖ Q)`.
pub fn kl_from_ratio(d: &Discriminator, samples_p: &Tensor) -> Result<f64> {
    let l = d.logits(samples_p)?;
    Ok(l.map(|v| v.clamp(-LOGIT_CLAMP, LOGIT_CLAMP)).mean())
}

/// Differentiable [`kl_from_ratio`] with the discriminator frozen; the
/// gradient flows into `samples_p` only.
pub fn kl_from_ratio_var<'t>(d: &Discriminator, tape: &'t Tape, samples_p: Var<'t>) -> Result<Var<'t>> {
    Ok(d.logits_on(tape, samples_p, true)?
        .clamp(-LOGIT_CLAMP, LOGIT_CLAMP)
        .mean())
}

/// `E_P[l] + 1 − E_Q[exp(l)]` with clamped logits `l`: the f-divergence
/// lower bound on `KL(P ‖ Q)`, tight when `l = log p/q`. Unlike
/// [`kl_from_ratio_var`] it also depends on the `Q` samples, which is what
/// lets a generator producing `Q` receive gradient.
pub fn kl_lower_bound_var<'t>(
    d: &Discriminator,
    tape: &'t Tape,
    samples_p: Var<'t>,
    samples_q: Var<'t>,
) -> Result<Var<'t>> {
    let lp = kl_from_ratio_var(d, tape, samples_p)?;
    let lq = d
        .logits_on(tape, samples_q, true)?
        .clamp(-LOGIT_CLAMP, LOGIT_CLAMP)
        .exp()
        .mean();
    lp.sub(lq)?.add(tape.constant(Tensor::scalar(1.0)))
}

/// `−mean log q(x)` over the rows of `samples_p`.
pub fn mc_cross_entropy(log_q: impl Fn(&[f64]) -> f64, samples_p: &Tensor) -> Result<f64> {
    let mut acc = 0.0;
    for i in 0..samples_p.rows() {
        let v = log_q(samples_p.row_slice(i));
        if !v.is_finite() {
            return Err(Error::Domain {
                op: "mc_cross_entropy",
                detail: format!("log density is {v} at sample {i}"),
            });
        }
        acc += v;
    }
    Ok(-acc / samples_p.rows() as f64)
}
