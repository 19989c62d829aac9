use serde::Serialize;

use super::data::{Dataset, DatasetKind};
use super::setup::analytic_linear_gaussian;
use super::train::{batch_loss, stream};
use crate::distributions::standard_normal;
use crate::error::{Error, Result};
use crate::estimators::{kl_from_ratio, mmd_unbiased, EstimatorKind, RbfKernel};
use crate::models::Models;
use crate::objectives::{discrete_terms, LossReport, Objective, TermB};
use crate::oracle::{exact_mi, gaussian_kl_to_std_normal, lg_exact_mi, LinearGaussianModel, MiPair};
use crate::tensor::{Tape, Tensor};

/// Largest sample the quadratic-cost MMD estimate uses during evaluation.
const MMD_EVAL_CAP: usize = 2000;

/// Exact values of the first-term quantities next to the estimates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OracleComparison {
    pub mode: &'static str,
    pub a_exact: f64,
    pub b_exact: f64,
    pub mi_exact: f64,
    /// Estimate minus exact value.
    pub a_gap: f64,
    pub b_gap: f64,
    pub mi_gap: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Decomposition {
    pub report: LossReport,
    /// Held-out rows used; 0 for exact enumeration.
    pub n_eval: usize,
    pub oracle: Option<OracleComparison>,
}

/// `KL(N(m̂, Σ̂) ‖ N(0, I))` with the sample mean and unbiased covariance.
#[allow(clippy::needless_range_loop)]
pub fn gaussian_fit_kl(z: &Tensor) -> Result<f64> {
    let (n, d) = (z.rows(), z.cols());
    if n <= d {
        return Err(Error::InsufficientSamples { needed: d + 1, got: n });
    }
    let mean = z.col_means();
    let mut cov = vec![vec![0.0; d]; d];
    for i in 0..n {
        let r = z.row_slice(i);
        for a in 0..d {
            for b in 0..=a {
                cov[a][b] += (r[a] - mean[a]) * (r[b] - mean[b]);
            }
        }
    }
    for a in 0..d {
        for b in 0..=a {
            cov[a][b] /= (n - 1) as f64;
            cov[b][a] = cov[a][b];
        }
    }
    gaussian_kl_to_std_normal(&mean, &cov)
}

/// Exact values for linear-Gaussian data encoded by an analytic
/// one-layer Gaussian head; `None` outside that setting.
pub fn linear_gaussian_oracle(models: &Models, data: &Dataset) -> Result<Option<OracleComparison>> {
    if data.spec.kind != DatasetKind::LinearGaussian {
        return Ok(None);
    }
    let Some((a, bias, noise)) = models.encoder.as_ref().and_then(analytic_linear_gaussian) else {
        return Ok(None);
    };
    let nz = noise.len();
    let noise_cov: Vec<Vec<f64>> = (0..nz)
        .map(|i| (0..nz).map(|j| if i == j { noise[i] } else { 0.0 }).collect())
        .collect();
    let m = LinearGaussianModel::new(&data.spec.data_cov(), &a, &noise_cov)?;
    let mi = lg_exact_mi(&m)?;
    let b = gaussian_kl_to_std_normal(&bias, &m.marginal_cov())?;
    Ok(Some(OracleComparison {
        mode: "linear-gaussian",
        a_exact: mi + b,
        b_exact: b,
        mi_exact: mi,
        a_gap: 0.0,
        b_gap: 0.0,
        mi_gap: 0.0,
    }))
}

fn with_gaps(mut o: OracleComparison, r: &LossReport) -> OracleComparison {
    o.a_gap = r.a - o.a_exact;
    o.b_gap = r.b - o.b_exact;
    o.mi_gap = (r.a - r.b) - o.mi_exact;
    o
}

/// Estimates all four terms on the first `n_eval` held-out rows.
///
/// Term B is estimated outside the graph with the configured binding
/// (`gaussian-fit` included; MMD on at most 2000 rows). On a discrete-world
/// dataset terms A and B come from exact enumeration of the world instead.
pub fn decompose(models: &Models, obj: &Objective, data: &Dataset, n_eval: usize, seed: u64) -> Result<Decomposition> {
    if let Some(w) = data.world() {
        let report = discrete_terms(w, &obj.spec)?;
        let mi = exact_mi(w, MiPair::XZ)?;
        let o = OracleComparison {
            mode: "discrete",
            a_exact: report.a,
            b_exact: report.b,
            mi_exact: mi,
            a_gap: 0.0,
            b_gap: 0.0,
            mi_gap: 0.0,
        };
        return Ok(Decomposition {
            report,
            n_eval: 0,
            oracle: Some(with_gaps(o, &report)),
        });
    }
    if n_eval == 0 || n_eval > data.test.rows() {
        return Err(Error::InsufficientSamples {
            needed: n_eval.max(1),
            got: data.test.rows(),
        });
    }
    let idx: Vec<usize> = (0..n_eval).collect();
    let x = data.test.select_rows(&idx)?;
    let labels: Option<Vec<usize>> = data.test_labels.as_ref().map(|l| l[..n_eval].to_vec());
    let mut rng = stream(seed, 0);

    let mut no_b = obj.clone();
    no_b.spec.bindings.term_b = TermB::Off;
    no_b.spec.weights.w_b = 0.0;
    let (mut report, latents) = {
        let tape = Tape::new();
        let out = batch_loss(&tape, &x, labels.as_deref(), models, &no_b, &mut rng)?;
        (out.report, out.latents)
    };
    let (b, kind) = match obj.spec.bindings.term_b {
        TermB::Off => (0.0, None),
        TermB::Enumeration => {
            return Err(Error::BindingMismatch(
                "term B enumeration needs a discrete-world dataset".into(),
            ))
        }
        TermB::GaussianFit => (gaussian_fit_kl(&latents)?, Some(EstimatorKind::ClosedForm)),
        TermB::DensityRatio => {
            let d = models
                .disc_z
                .as_ref()
                .ok_or_else(|| Error::BindingMismatch("term B density-ratio needs a latent discriminator".into()))?;
            (kl_from_ratio(d, &latents)?, Some(EstimatorKind::DensityRatio))
        }
        TermB::Mmd => {
            let m = latents.rows().min(MMD_EVAL_CAP);
            let p = latents.select_rows(&(0..m).collect::<Vec<_>>())?;
            let q = standard_normal(&[m, latents.cols()], &mut rng);
            let k = obj.kernel.clone().unwrap_or_else(|| RbfKernel::median_heuristic(&p, &q));
            (mmd_unbiased(&p, &q, &k)?, Some(EstimatorKind::Mmd))
        }
    };
    report.b = b;
    report.kinds.b = kind;
    report.total = LossReport::compose(&obj.spec, report.a, report.b, report.c, report.d);
    let oracle = linear_gaussian_oracle(models, data)?.map(|o| with_gaps(o, &report));
    Ok(Decomposition { report, n_eval, oracle })
}
