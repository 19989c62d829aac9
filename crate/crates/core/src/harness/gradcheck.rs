use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::train::batch_loss;
use crate::distributions::{
    standard_normal, GaussianLikelihood, GaussianPosterior, LaplacianLikelihood, Likelihood,
};
use crate::error::Result;
use crate::estimators::{Discriminator, RbfKernel};
use crate::models::{Activation, Encoder, EncoderKind, Mlp, Models};
use crate::objectives::{preset, Objective, Preset, TermB, TermC};
use crate::tensor::{finite_diff_grad, max_relative_error, Module, Parameter, Tape, Tensor, Var};

/// Tolerance for single ops.
pub const OP_TOL: f64 = 1e-5;
/// Tolerance for whole objectives.
pub const COMPOSITE_TOL: f64 = 1e-4;
const H: f64 = 1e-5;
/// Inputs to `relu`, `abs` and `clamp` stay this far from their kinks.
const KINK_MARGIN: f64 = 1e-3;

/// Largest relative error seen for one op or objective.
#[derive(Clone, Debug, Serialize)]
pub struct GradcheckEntry {
    pub name: String,
    pub max_rel_err: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub configs: usize,
    pub op_max_rel_err: f64,
    pub composite_max_rel_err: f64,
    pub ops: Vec<GradcheckEntry>,
    pub composites: Vec<GradcheckEntry>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.op_max_rel_err < OP_TOL && self.composite_max_rel_err < COMPOSITE_TOL
    }
}

type UnaryOp = for<'t> fn(Var<'t>) -> Result<Var<'t>>;
type BinaryOp = for<'t> fn(Var<'t>, Var<'t>) -> Result<Var<'t>>;

#[derive(Clone, Copy)]
enum Domain {
    Any,
    Positive,
    AwayFromZero,
    AwayFromClamp,
}

const CLAMP: (f64, f64) = (-0.7, 0.9);

fn unary_ops() -> Vec<(&'static str, Domain, UnaryOp)> {
    vec![
        ("exp", Domain::Any, |v| Ok(v.exp())),
        ("log", Domain::Positive, |v| v.log()),
        ("tanh", Domain::Any, |v| Ok(v.tanh())),
        ("relu", Domain::AwayFromZero, |v| Ok(v.relu())),
        ("softplus", Domain::Any, |v| Ok(v.softplus())),
        ("sigmoid", Domain::Any, |v| Ok(v.sigmoid())),
        ("neg", Domain::Any, |v| Ok(v.neg())),
        ("scale", Domain::Any, |v| Ok(v.scale(-1.7))),
        ("abs", Domain::AwayFromZero, |v| Ok(v.abs())),
        ("clamp", Domain::AwayFromClamp, |v| Ok(v.clamp(CLAMP.0, CLAMP.1))),
        ("square", Domain::Any, |v| Ok(v.square())),
        ("transpose", Domain::Any, |v| v.transpose()),
        ("slice_cols", Domain::Any, |v| {
            let c = v.shape()[1];
            v.slice_cols(c / 2, c)
        }),
        ("log_softmax_rows", Domain::Any, |v| v.log_softmax_rows()),
        ("sum", Domain::Any, |v| Ok(v.sum())),
        ("mean", Domain::Any, |v| Ok(v.mean())),
        ("sum_rows", Domain::Any, |v| v.sum_rows()),
        ("gaussian_kl", Domain::Any, |v| {
            let c = v.shape()[1];
            GaussianPosterior {
                mu: v.slice_cols(0, c / 2)?,
                log_sigma: v.slice_cols(c / 2, c)?,
            }
            .mean_kl_to_std_normal()
        }),
        ("laplacian_loglik", Domain::AwayFromZero, |v| {
            let zero = v.tape().constant(Tensor::zeros(&v.shape()));
            Likelihood::Laplacian(LaplacianLikelihood::new(1.3)?).mean_log_prob(v, zero)
        }),
    ]
}

fn binary_ops() -> Vec<(&'static str, BinaryOp)> {
    vec![
        ("add", |a, b| a.add(b)),
        ("sub", |a, b| a.sub(b)),
        ("mul", |a, b| a.mul(b)),
        ("matmul", |a, b| a.matmul(b.transpose()?)),
        ("add_row", |a, b| a.add_row(b.transpose()?.sum_rows()?.transpose()?)),
        ("add_col", |a, b| a.add_col(b.sum_rows()?)),
    ]
}

fn sample_input(shape: &[usize], domain: Domain, rng: &mut ChaCha8Rng) -> Tensor {
    let mut t = standard_normal(shape, rng);
    for v in t.data_mut() {
        *v = match domain {
            Domain::Any => *v,
            Domain::Positive => 0.2 + v.abs(),
            Domain::AwayFromZero => v.signum() * (v.abs() + 10.0 * KINK_MARGIN),
            Domain::AwayFromClamp => {
                let near = |b: f64| (*v - b).abs() < 10.0 * KINK_MARGIN;
                if near(CLAMP.0) || near(CLAMP.1) {
                    *v + 0.1
                } else {
                    *v
                }
            }
        };
    }
    t
}

/// Contracts an op output with fixed random weights so every output
/// coordinate reaches the scalar being differentiated.
fn contract<'t>(out: Var<'t>, weights: &Tensor) -> Result<Var<'t>> {
    if out.shape().is_empty() {
        return Ok(out);
    }
    let shape = out.shape();
    let n: usize = shape.iter().product();
    let w = Tensor::new(shape, weights.data()[..n].to_vec())?;
    out.mul(out.tape().constant(w)).map(|v| v.sum())
}

fn check_params<F>(params: &[Parameter], analytic: &[Tensor], mut f: F) -> Result<f64>
where
    F: FnMut(&[Parameter]) -> Result<f64>,
{
    let mut worst = 0.0f64;
    for (k, p) in params.iter().enumerate() {
        let num = finite_diff_grad(
            |probe| {
                let mut ps = params.to_vec();
                ps[k] = probe.clone();
                f(&ps)
            },
            p,
            H,
        )?;
        worst = worst.max(max_relative_error(&analytic[k], &num)?);
    }
    Ok(worst)
}

fn op_error(
    params: &[Parameter],
    weights: &Tensor,
    apply: &dyn for<'t> Fn(&[Var<'t>]) -> Result<Var<'t>>,
) -> Result<f64> {
    let tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p)).collect();
    let loss = contract(apply(&vars)?, weights)?;
    let g = tape.backward(loss)?;
    let analytic: Vec<Tensor> = params
        .iter()
        .map(|p| g.for_param(p.id()).cloned().unwrap_or_else(|| Tensor::zeros(p.value.shape())))
        .collect();
    check_params(params, &analytic, |ps| {
        let tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p)).collect();
        Ok(contract(apply(&vars)?, weights)?.item())
    })
}

fn check_ops(rng: &mut ChaCha8Rng, worst: &mut [f64], binary_worst: &mut [f64]) -> Result<()> {
    let rows = rng.random_range(1..=4);
    let cols = 2 * rng.random_range(1..=2);
    let shape = [rows, cols];
    let weights = standard_normal(&[rows * cols], rng);
    for (i, (_, domain, op)) in unary_ops().into_iter().enumerate() {
        let p = Parameter::new("x", sample_input(&shape, domain, rng));
        let err = op_error(&[p], &weights, &|v| op(v[0]))?;
        worst[i] = worst[i].max(err);
    }
    for (i, (_, op)) in binary_ops().into_iter().enumerate() {
        let a = Parameter::new("a", sample_input(&shape, Domain::Any, rng));
        let b = Parameter::new("b", sample_input(&shape, Domain::Any, rng));
        let w = standard_normal(&[rows * rows.max(cols)], rng);
        let err = op_error(&[a, b], &w, &|v| op(v[0], v[1]))?;
        binary_worst[i] = binary_worst[i].max(err);
    }
    Ok(())
}

/// Presets whose objective is differentiable end to end. The codebook
/// presets are excluded: their rate term is a count over hard assignments.
const COMPOSITE_PRESETS: [Preset; 7] = [
    Preset::BetaVae,
    Preset::Aae,
    Preset::InfoVae,
    Preset::Gan,
    Preset::VaeGan,
    Preset::SupervisedIb,
    Preset::Bibae,
];

fn random_disc(name: &str, dim: usize, rng: &mut ChaCha8Rng) -> Result<Discriminator> {
    let mut d = Discriminator::new(name, dim, &[4], Activation::Tanh, rng)?;
    for p in d.parameters_mut() {
        p.value = standard_normal(p.value.shape(), rng).scale(0.5);
    }
    Ok(d)
}

fn check_composite(preset_id: Preset, rng: &mut ChaCha8Rng) -> Result<f64> {
    let (nx, nz, n) = (rng.random_range(2..=3), 2, rng.random_range(3..=6));
    let mut spec = preset(preset_id).with_beta(rng.random_range(0.5..2.0))?;
    // Gaussian likelihood keeps the check off the ℓ1 kink.
    spec.bindings.term_c = match spec.bindings.term_c {
        TermC::ClassifierLoglik => TermC::ClassifierLoglik,
        _ => TermC::GaussianLoglik,
    };
    let use_mmd = preset_id == Preset::InfoVae && rng.random::<bool>();
    if use_mmd {
        spec.bindings.term_b = TermB::Mmd;
    }
    let mut obj = Objective::new(spec)?;
    obj.likelihood = Likelihood::Gaussian(GaussianLikelihood::new(rng.random_range(0.5..1.5))?);
    if use_mmd {
        obj.kernel = Some(RbfKernel::new(vec![0.5, 1.0, 2.0])?);
    }

    let kind = if spec.bindings.term_b == TermB::DensityRatio && preset_id == Preset::Aae {
        EncoderKind::Deterministic
    } else {
        EncoderKind::GaussianHead
    };
    let encoder = match preset_id {
        Preset::Gan => None,
        _ => Some(Encoder::new(kind, nx, &[4], nz, Activation::Tanh, 2, 0.3, rng)?),
    };
    let decoder = Mlp::new("decoder", &[nz, 4, nx], Activation::Tanh, rng)?;
    let mut m = Models::new(encoder, decoder);
    m.disc_z = Some(random_disc("disc_z", nz, rng)?);
    m.disc_x = Some(random_disc("disc_x", nx, rng)?);
    let n_classes = 3;
    if spec.bindings.term_c == TermC::ClassifierLoglik {
        m.classifier = Some(Mlp::new("classifier", &[nz, n_classes], Activation::Tanh, rng)?);
    }
    let x = standard_normal(&[n, nx], rng);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..n_classes)).collect();
    let noise_seed: u64 = rng.random();

    let loss_of = |mm: &Models| -> Result<f64> {
        let tape = Tape::new();
        let mut r = ChaCha8Rng::seed_from_u64(noise_seed);
        Ok(batch_loss(&tape, &x, Some(&labels), mm, &obj, &mut r)?.report.total)
    };
    let tape = Tape::new();
    let mut r = ChaCha8Rng::seed_from_u64(noise_seed);
    let out = batch_loss(&tape, &x, Some(&labels), &m, &obj, &mut r)?;
    let g = tape.backward(out.total)?;
    let params: Vec<Parameter> = m.model_params().into_iter().cloned().collect();
    let analytic: Vec<Tensor> = params
        .iter()
        .map(|p| g.for_param(p.id()).cloned().unwrap_or_else(|| Tensor::zeros(p.value.shape())))
        .collect();
    check_params(&params, &analytic, |ps| {
        let mut mm = m.clone();
        for (dst, src) in mm.model_params_mut().into_iter().zip(ps) {
            *dst = src.clone();
        }
        loss_of(&mm)
    })
}

/// Autodiff against central differences (`h = 1e-5`) on `configs` random
/// configurations. Each configuration checks every op on fresh inputs and
/// one composite objective, cycling through the differentiable presets.
/// Discriminators stay frozen inside the objectives.
pub fn run_gradcheck(seed: u64, configs: usize) -> Result<GradcheckReport> {
    let unary = unary_ops();
    let binary = binary_ops();
    let mut unary_worst = vec![0.0; unary.len()];
    let mut binary_worst = vec![0.0; binary.len()];
    let mut comp_worst = vec![0.0; COMPOSITE_PRESETS.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..configs {
        check_ops(&mut rng, &mut unary_worst, &mut binary_worst)?;
        let k = i % COMPOSITE_PRESETS.len();
        comp_worst[k] = f64::max(comp_worst[k], check_composite(COMPOSITE_PRESETS[k], &mut rng)?);
    }
    let ops: Vec<GradcheckEntry> = unary
        .iter()
        .map(|(n, _, _)| *n)
        .zip(&unary_worst)
        .chain(binary.iter().map(|(n, _)| *n).zip(&binary_worst))
        .map(|(name, &e)| GradcheckEntry {
            name: name.to_string(),
            max_rel_err: e,
        })
        .collect();
    let composites: Vec<GradcheckEntry> = COMPOSITE_PRESETS
        .iter()
        .zip(&comp_worst)
        .map(|(p, &e)| GradcheckEntry {
            name: p.name().to_string(),
            max_rel_err: e,
        })
        .collect();
    Ok(GradcheckReport {
        seed,
        configs,
        op_max_rel_err: ops.iter().map(|e| e.max_rel_err).fold(0.0, f64::max),
        composite_max_rel_err: composites.iter().map(|e| e.max_rel_err).fold(0.0, f64::max),
        ops,
        composites,
    })
}
