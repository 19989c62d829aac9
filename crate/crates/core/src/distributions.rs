//! Parametric densities: diagonal Gaussian posteriors, the standard-normal
//! latent prior, Laplacian/Gaussian decoder likelihoods and the discrete
//! codebook prior.
//!
//! Every log-density is fully normalized. The Laplacian likelihood carries
//! the `(λ/2)^n` factor, so reconstruction log-likelihoods are comparable
//! across `λ`.

use std::f64::consts::{LN_2, PI};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tensor, Var};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// `N(mu, diag(exp(log_sigma)^2))`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagGaussian {
    mu: Vec<f64>,
    log_sigma: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mu: Vec<f64>, log_sigma: Vec<f64>) -> Result<Self> {
        if mu.len() != log_sigma.len() {
            return Err(Error::LengthMismatch(mu.len(), log_sigma.len()));
        }
        if mu.is_empty() {
            return Err(Error::invalid("DiagGaussian needs at least one dimension"));
        }
        Ok(Self { mu, log_sigma })
    }

    pub fn standard(dim: usize) -> Result<Self> {
        Self::new(vec![0.0; dim], vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn log_sigma(&self) -> &[f64] {
        &self.log_sigma
    }

    /// `mu + sigma ⊙ eps`.
    pub fn sample_reparam(&self, eps: &[f64]) -> Result<Vec<f64>> {
        if eps.len() != self.dim() {
            return Err(Error::LengthMismatch(self.dim(), eps.len()));
        }
        Ok(self
            .mu
            .iter()
            .zip(&self.log_sigma)
            .zip(eps)
            .map(|((m, ls), e)| m + ls.exp() * e)
            .collect())
    }

    /// `KL(self ‖ N(0, I)) = ½ Σ (σ² + μ² − 1 − 2 log σ)`.
    pub fn kl_to_std_normal(&self) -> f64 {
        0.5 * self
            .mu
            .iter()
            .zip(&self.log_sigma)
            .map(|(m, ls)| (2.0 * ls).exp() + m * m - 1.0 - 2.0 * ls)
            .sum::<f64>()
    }

    pub fn log_prob(&self, v: &[f64]) -> Result<f64> {
        if v.len() != self.dim() {
            return Err(Error::LengthMismatch(self.dim(), v.len()));
        }
        Ok(self
            .mu
            .iter()
            .zip(&self.log_sigma)
            .zip(v)
            .map(|((m, ls), x)| {
                let u = (x - m) * (-ls).exp();
                -0.5 * LN_2PI - ls - 0.5 * u * u
            })
            .sum())
    }
}

/// `p(z) = N(0, I_dim)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StandardNormalPrior {
    dim: usize,
}

impl StandardNormalPrior {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("prior dimension must be >= 1"));
        }
        Ok(Self { dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn log_prob(&self, v: &[f64]) -> Result<f64> {
        if v.len() != self.dim {
            return Err(Error::LengthMismatch(self.dim, v.len()));
        }
        Ok(v.iter().map(|x| -0.5 * LN_2PI - 0.5 * x * x).sum())
    }

    /// `(n, dim)` matrix of independent draws.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Tensor {
        standard_normal(&[n, self.dim], rng)
    }
}

/// Standard-normal noise of the given shape.
pub fn standard_normal<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    let numel = shape.iter().product();
    let data = (0..numel).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

/// `p(x|z) = (λ/2)^n exp(−λ ‖x − g(z)‖₁)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaplacianLikelihood {
    scale_lambda: f64,
}

impl LaplacianLikelihood {
    pub fn new(scale_lambda: f64) -> Result<Self> {
        if !(scale_lambda > 0.0 && scale_lambda.is_finite()) {
            return Err(Error::invalid(format!("laplacian scale must be > 0, got {scale_lambda}")));
        }
        Ok(Self { scale_lambda })
    }

    pub fn lambda(&self) -> f64 {
        self.scale_lambda
    }

    pub fn log_prob(&self, x: &[f64], g: &[f64]) -> Result<f64> {
        if x.len() != g.len() {
            return Err(Error::LengthMismatch(x.len(), g.len()));
        }
        let l1: f64 = x.iter().zip(g).map(|(a, b)| (a - b).abs()).sum();
        Ok(x.len() as f64 * (self.scale_lambda.ln() - LN_2) - self.scale_lambda * l1)
    }
}

/// `p(x|z) = N(g(z), sigma² I)`, the ℓ2 alternative for the reconstruction term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianLikelihood {
    sigma: f64,
}

impl GaussianLikelihood {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::invalid(format!("gaussian likelihood sigma must be > 0, got {sigma}")));
        }
        Ok(Self { sigma })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn log_prob(&self, x: &[f64], g: &[f64]) -> Result<f64> {
        if x.len() != g.len() {
            return Err(Error::LengthMismatch(x.len(), g.len()));
        }
        let sq: f64 = x.iter().zip(g).map(|(a, b)| (a - b) * (a - b)).sum();
        let n = x.len() as f64;
        Ok(-0.5 * n * (LN_2PI + 2.0 * self.sigma.ln()) - 0.5 * sq / (self.sigma * self.sigma))
    }
}

/// Decoder likelihood used for the reconstruction term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Likelihood {
    Laplacian(LaplacianLikelihood),
    Gaussian(GaussianLikelihood),
}

impl Likelihood {
    pub fn log_prob(&self, x: &[f64], g: &[f64]) -> Result<f64> {
        match self {
            Likelihood::Laplacian(l) => l.log_prob(x, g),
            Likelihood::Gaussian(l) => l.log_prob(x, g),
        }
    }

    /// Batch mean of `log p(x_i | z_i)` for `(n, d)` matrices `x` and `g`.
    pub fn mean_log_prob<'t>(&self, x: Var<'t>, g: Var<'t>) -> Result<Var<'t>> {
        let shape = x.shape();
        if shape.len() != 2 {
            return Err(Error::shape("mean_log_prob", &shape, &g.shape()));
        }
        let (n, d) = (shape[0] as f64, shape[1] as f64);
        let tape = x.tape();
        let resid = x.sub(g)?;
        let (norm_const, per_sample) = match self {
            Likelihood::Laplacian(l) => (
                d * (l.lambda().ln() - LN_2),
                resid.abs().sum().scale(-l.lambda() / n),
            ),
            Likelihood::Gaussian(l) => {
                let s = l.sigma();
                (
                    -0.5 * d * (LN_2PI + 2.0 * s.ln()),
                    resid.square().sum().scale(-0.5 / (s * s * n)),
                )
            }
        };
        per_sample.add(tape.constant(Tensor::scalar(norm_const)))
    }
}

/// Batch of diagonal Gaussians held on a tape, one row per sample.
#[derive(Clone, Copy, Debug)]
pub struct GaussianPosterior<'t> {
    pub mu: Var<'t>,
    pub log_sigma: Var<'t>,
}

impl<'t> GaussianPosterior<'t> {
    /// `mu + exp(log_sigma) ⊙ eps`, differentiable in both parameters.
    pub fn sample_reparam(&self, eps: &Tensor) -> Result<Var<'t>> {
        let eps = self.mu.tape().constant(eps.clone());
        self.log_sigma.exp().mul(eps)?.add(self.mu)
    }

    /// Batch mean of `KL(q(z|x_i) ‖ N(0, I))`.
    pub fn mean_kl_to_std_normal(&self) -> Result<Var<'t>> {
        let n = self.mu.shape()[0] as f64;
        let var = self.log_sigma.scale(2.0).exp();
        let per = var
            .add(self.mu.square())?
            .sub(self.log_sigma.scale(2.0))?
            .sum();
        let d = self.mu.value().numel() as f64;
        per.add(self.mu.tape().constant(Tensor::scalar(-d)))
            .map(|v| v.scale(0.5 / n))
    }

    /// Per-row posteriors as value objects.
    pub fn rows(&self) -> Result<Vec<DiagGaussian>> {
        let (mu, ls) = (self.mu.value(), self.log_sigma.value());
        (0..mu.rows())
            .map(|i| DiagGaussian::new(mu.row_slice(i).to_vec(), ls.row_slice(i).to_vec()))
            .collect()
    }
}

/// `p(ẑ) = Σ_j p_j δ(ẑ − c_j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CodebookPrior {
    centroids: Vec<Vec<f64>>,
    probs: Vec<f64>,
    cumulative: Vec<f64>,
}

impl CodebookPrior {
    pub fn new(centroids: Vec<Vec<f64>>, probs: Vec<f64>) -> Result<Self> {
        if centroids.is_empty() {
            return Err(Error::EmptyCodebook);
        }
        if centroids.len() != probs.len() {
            return Err(Error::LengthMismatch(centroids.len(), probs.len()));
        }
        let d = centroids[0].len();
        if let Some(c) = centroids.iter().find(|c| c.len() != d) {
            return Err(Error::LengthMismatch(d, c.len()));
        }
        if probs.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::invalid("codebook probabilities must be non-negative"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("codebook probabilities sum to {total}, expected 1")));
        }
        let cumulative = probs
            .iter()
            .scan(0.0, |acc, p| {
                *acc += p;
                Some(*acc)
            })
            .collect();
        Ok(Self {
            centroids,
            probs,
            cumulative,
        })
    }

    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn centroid(&self, j: usize) -> &[f64] {
        &self.centroids[j]
    }

    /// Draws an index with probability `p_j` and returns it with its centroid.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, &[f64]) {
        let u: f64 = rng.random::<f64>() * self.cumulative[self.cumulative.len() - 1];
        // First index whose cumulative mass exceeds u; zero-weight atoms are never hit.
        let j = self
            .cumulative
            .iter()
            .zip(&self.probs)
            .position(|(c, p)| *p > 0.0 && u < *c)
            .unwrap_or_else(|| self.probs.iter().rposition(|p| *p > 0.0).unwrap_or(0));
        (j, &self.centroids[j])
    }
}

/// Differential entropy of `N(0, 1)`: `½(1 + log 2π)`.
pub fn std_normal_entropy() -> f64 {
    0.5 * (1.0 + (2.0 * PI).ln())
}
