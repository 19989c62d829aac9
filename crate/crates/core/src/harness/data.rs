use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::DiscreteWorld;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    /// Equal-weight isotropic Gaussian mixture in the plane.
    Gmm2d,
    /// Uniform angle on a circle with Gaussian radial noise.
    Ring2d,
    /// `x ~ N(0, cov)`.
    LinearGaussian,
    /// Gaussian mixture whose labels are the generating components.
    LabeledGmm,
    /// One-hot symbols drawn from a discrete world's `px` (labels from its
    /// joint `p(c, x)` when present).
    DiscreteWorldSamples,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Gmm2d => "gmm2d",
            DatasetKind::Ring2d => "ring2d",
            DatasetKind::LinearGaussian => "linear-gaussian",
            DatasetKind::LabeledGmm => "labeled-gmm",
            DatasetKind::DiscreteWorldSamples => "discrete-world-samples",
        }
    }
}

fn default_n() -> usize {
    1000
}

fn default_std() -> f64 {
    0.3
}

fn default_radius() -> f64 {
    2.0
}

fn default_noise() -> f64 {
    0.1
}

fn default_dim() -> usize {
    2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_n")]
    pub n_train: usize,
    #[serde(default = "default_n")]
    pub n_test: usize,
    /// Mixture component means; defaults to four modes at distance 3 on the axes.
    #[serde(default)]
    pub means: Option<Vec<Vec<f64>>>,
    /// Per-coordinate standard deviation of each mixture component.
    #[serde(default = "default_std")]
    pub std: f64,
    #[serde(default = "default_radius")]
    pub radius: f64,
    /// Radial standard deviation of the ring.
    #[serde(default = "default_noise")]
    pub noise: f64,
    /// Covariance of the linear-Gaussian data; defaults to `I_dim`.
    #[serde(default)]
    pub cov: Option<Vec<Vec<f64>>>,
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// Path of a world table for `discrete-world-samples`, resolved by the
    /// caller into `world`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub world_file: Option<String>,
    /// World sampled by `discrete-world-samples`.
    #[serde(skip)]
    pub world: Option<DiscreteWorld>,
}

impl DatasetSpec {
    pub fn new(kind: DatasetKind, seed: u64, n_train: usize, n_test: usize) -> Self {
        Self {
            kind,
            seed,
            n_train,
            n_test,
            means: None,
            std: default_std(),
            radius: default_radius(),
            noise: default_noise(),
            cov: None,
            dim: default_dim(),
            world_file: None,
            world: None,
        }
    }

    pub fn mixture_means(&self) -> Vec<Vec<f64>> {
        self.means
            .clone()
            .unwrap_or_else(|| vec![vec![3.0, 0.0], vec![-3.0, 0.0], vec![0.0, 3.0], vec![0.0, -3.0]])
    }

    pub fn data_cov(&self) -> Vec<Vec<f64>> {
        self.cov.clone().unwrap_or_else(|| {
            (0..self.dim)
                .map(|i| (0..self.dim).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                .collect()
        })
    }

    /// Width of one sample.
    pub fn dim(&self) -> Result<usize> {
        self.validate()?;
        Ok(match self.kind {
            DatasetKind::Gmm2d | DatasetKind::Ring2d => 2,
            DatasetKind::LabeledGmm => self.mixture_means()[0].len(),
            DatasetKind::LinearGaussian => self.data_cov().len(),
            DatasetKind::DiscreteWorldSamples => self.world.as_ref().map_or(0, |w| w.nx()),
        })
    }

    /// Number of label classes, for labeled kinds.
    pub fn n_classes(&self) -> Option<usize> {
        match self.kind {
            DatasetKind::LabeledGmm => Some(self.mixture_means().len()),
            DatasetKind::DiscreteWorldSamples => self.world.as_ref().and_then(|w| w.nc()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_test == 0 {
            return Err(Error::invalid("n_train and n_test must be positive"));
        }
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be positive, got {v}")))
            }
        };
        match self.kind {
            DatasetKind::Gmm2d | DatasetKind::LabeledGmm => {
                positive("std", self.std)?;
                let means = self.mixture_means();
                let d = means.first().map_or(0, |m| m.len());
                if d == 0 || means.iter().any(|m| m.len() != d || m.iter().any(|v| !v.is_finite())) {
                    return Err(Error::invalid("means must be a non-empty list of equal-length finite vectors"));
                }
                if self.kind == DatasetKind::Gmm2d && d != 2 {
                    return Err(Error::invalid(format!("gmm2d means must be 2-dimensional, got {d}")));
                }
            }
            DatasetKind::Ring2d => {
                positive("radius", self.radius)?;
                if !(self.noise >= 0.0 && self.noise.is_finite()) {
                    return Err(Error::invalid(format!("noise must be >= 0, got {}", self.noise)));
                }
            }
            DatasetKind::LinearGaussian => {
                let cov = self.data_cov();
                if cov.is_empty() {
                    return Err(Error::invalid("linear-gaussian data needs dim >= 1"));
                }
                cholesky(&cov)?;
            }
            DatasetKind::DiscreteWorldSamples => match &self.world {
                Some(w) => w.validate()?,
                None => return Err(Error::MissingTable("world")),
            },
        }
        Ok(())
    }
}

/// Lower Cholesky factor as rows.
fn cholesky(cov: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = cov.len();
    if cov.iter().any(|r| r.len() != n) {
        return Err(Error::invalid("cov must be square"));
    }
    let m = nalgebra::DMatrix::from_fn(n, n, |i, j| cov[i][j]);
    if (0..n).any(|i| (0..n).any(|j| (m[(i, j)] - m[(j, i)]).abs() > 1e-12)) {
        return Err(Error::NotSpd("cov"));
    }
    let l = m.cholesky().ok_or(Error::NotSpd("cov"))?.l();
    Ok((0..n).map(|i| (0..n).map(|j| l[(i, j)]).collect()).collect())
}

/// Train and test samples. Labels are 0-based class indices.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub train: Tensor,
    pub test: Tensor,
    pub train_labels: Option<Vec<usize>>,
    pub test_labels: Option<Vec<usize>>,
}

impl Dataset {
    pub fn dim(&self) -> usize {
        self.train.cols()
    }

    pub fn world(&self) -> Option<&DiscreteWorld> {
        self.spec.world.as_ref()
    }

    pub fn n_classes(&self) -> Option<usize> {
        self.spec.n_classes()
    }
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

fn categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

fn sample<R: Rng + ?Sized>(spec: &DatasetSpec, n: usize, rng: &mut R) -> Result<(Tensor, Option<Vec<usize>>)> {
    let dim = spec.dim()?;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    match spec.kind {
        DatasetKind::Gmm2d | DatasetKind::LabeledGmm => {
            let means = spec.mixture_means();
            for _ in 0..n {
                let k = rng.random_range(0..means.len());
                labels.push(k);
                data.extend(means[k].iter().map(|m| m + spec.std * normal(rng)));
            }
        }
        DatasetKind::Ring2d => {
            for _ in 0..n {
                let theta = rng.random::<f64>() * std::f64::consts::TAU;
                let r = spec.radius + spec.noise * normal(rng);
                data.extend([r * theta.cos(), r * theta.sin()]);
            }
        }
        DatasetKind::LinearGaussian => {
            let l = cholesky(&spec.data_cov())?;
            for _ in 0..n {
                let e: Vec<f64> = (0..dim).map(|_| normal(rng)).collect();
                data.extend(l.iter().map(|row| row.iter().zip(&e).map(|(a, b)| a * b).sum::<f64>()));
            }
        }
        DatasetKind::DiscreteWorldSamples => {
            let w = spec.world.as_ref().ok_or(Error::MissingTable("world"))?;
            let joint: Option<Vec<f64>> = w.labels.as_ref().map(|l| l.iter().flatten().copied().collect());
            for _ in 0..n {
                let x = match &joint {
                    Some(j) => {
                        let cell = categorical(j, rng);
                        labels.push(cell / w.nx());
                        cell % w.nx()
                    }
                    None => categorical(&w.px, rng),
                };
                data.extend((0..dim).map(|i| if i == x { 1.0 } else { 0.0 }));
            }
        }
    }
    let labels = spec.n_classes().map(|_| labels);
    Ok((Tensor::new(vec![n, dim], data)?, labels))
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

/// Samples train and test sets from two streams of the same seed.
pub fn generate(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let (train, train_labels) = sample(spec, spec.n_train, &mut stream(spec.seed, 0))?;
    let (test, test_labels) = sample(spec, spec.n_test, &mut stream(spec.seed, 1))?;
    Ok(Dataset {
        spec: spec.clone(),
        train,
        test,
        train_labels,
        test_labels,
    })
}

/// Fresh in-distribution samples pushed `sigmas` component standard
/// deviations away along a uniformly random direction. Mixture kinds only.
pub fn shifted_outliers(spec: &DatasetSpec, n: usize, sigmas: f64, seed: u64) -> Result<Tensor> {
    if !matches!(spec.kind, DatasetKind::Gmm2d | DatasetKind::LabeledGmm) {
        return Err(Error::invalid(format!("outliers need a mixture dataset, got {}", spec.kind.name())));
    }
    let mut rng = stream(seed, 2);
    let (mut x, _) = sample(spec, n, &mut rng)?;
    let dim = x.cols();
    for i in 0..n {
        let dir: Vec<f64> = (0..dim).map(|_| normal(&mut rng)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        for (j, d) in dir.iter().enumerate() {
            x.data_mut()[i * dim + j] += sigmas * spec.std * d / norm;
        }
    }
    Ok(x)
}
