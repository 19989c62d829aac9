//! Exact ground truth at desk scale.
//!
//! Everything here is computed by enumeration over [`DiscreteWorld`] tables
//! or in closed form for linear-Gaussian encoders; nothing is estimated.
//! All quantities are in nats. KL against a zero-probability atom is an
//! error rather than `+∞`.

mod suite;
mod world;

use nalgebra::DMatrix;
use serde::Serialize;

pub use suite::{check_world, run_suite, SuiteReport, Violation};
pub use world::{
    random_deterministic_world, random_labeled_world, random_simplex, random_world, DiscreteWorld, Table, MAX_C,
    MAX_X, MAX_Z,
};

use crate::error::{Error, Result};

/// Which mutual information to enumerate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MiPair {
    XZ,
    ZC,
}

fn plogq(p: f64, q: f64) -> f64 {
    if p > 0.0 {
        p * q.ln()
    } else {
        0.0
    }
}

/// Shannon entropy `−Σ p log p`.
pub fn entropy(p: &[f64]) -> f64 {
    // `0.0 - x` rather than `-x` so a point mass gives +0, not -0.
    0.0 - p.iter().map(|&v| plogq(v, v)).sum::<f64>()
}

/// `Σ p log(p/q)`; errors if `q` is zero where `p` is positive.
pub fn exact_kl(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch(p.len(), q.len()));
    }
    let mut acc = 0.0;
    for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi > 0.0 {
            if qi <= 0.0 {
                return Err(Error::KlUndefined { index: i, p_val: pi });
            }
            acc += pi * (pi / qi).ln();
        }
    }
    Ok(acc)
}

/// Mutual information of a joint table by double summation.
fn mi_of_joint(joint: &Table) -> f64 {
    let rows: Vec<f64> = joint.iter().map(|r| r.iter().sum()).collect();
    let ncols = joint.first().map_or(0, |r| r.len());
    let cols: Vec<f64> = (0..ncols).map(|j| joint.iter().map(|r| r[j]).sum()).collect();
    let mut acc = 0.0;
    for (i, r) in joint.iter().enumerate() {
        for (j, &p) in r.iter().enumerate() {
            if p > 0.0 {
                acc += p * (p / (rows[i] * cols[j])).ln();
            }
        }
    }
    acc
}

/// Exact mutual information in nats.
pub fn exact_mi(w: &DiscreteWorld, pair: MiPair) -> Result<f64> {
    let joint = match pair {
        MiPair::XZ => w
            .px
            .iter()
            .zip(&w.enc)
            .map(|(p, row)| row.iter().map(|e| p * e).collect())
            .collect(),
        MiPair::ZC => w.joint_cz()?,
    };
    Ok(mi_of_joint(&joint).max(0.0))
}

/// `H(Z)` under the aggregated posterior.
pub fn entropy_z(w: &DiscreteWorld) -> f64 {
    entropy(&w.marginal_z())
}

/// `H(Z|X) = Σ_x p(x) H(q(·|x))`.
pub fn conditional_entropy_zx(w: &DiscreteWorld) -> f64 {
    w.px.iter().zip(&w.enc).map(|(p, row)| p * entropy(row)).sum()
}

/// Terms of `I(X;Z) = A − B` evaluated exactly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FirstTermDecomposition {
    pub term_a: f64,
    pub term_b: f64,
    pub mi: f64,
}

/// `A = E_x KL(q(z|x) ‖ p(z))`, `B = KL(q(z) ‖ p(z))` and the exact MI.
pub fn decompose_first_term(w: &DiscreteWorld) -> Result<FirstTermDecomposition> {
    let mut term_a = 0.0;
    for (p, row) in w.px.iter().zip(&w.enc) {
        if *p > 0.0 {
            term_a += p * exact_kl(row, &w.prior)?;
        }
    }
    let term_b = exact_kl(&w.marginal_z(), &w.prior)?;
    Ok(FirstTermDecomposition {
        term_a,
        term_b,
        mi: exact_mi(w, MiPair::XZ)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SupervisedBound {
    pub exact_izc: f64,
    /// `H(C) − H_θ(C|Z)` with the variational classifier.
    pub bound: f64,
    pub h_c: f64,
    /// Variational conditional entropy `−E_{p(c,x)} E_{q(z|x)} log p_θ(c|z)`.
    pub cross_entropy: f64,
}

/// Variational lower bound on `I(Z;C)` from a classifier table.
///
/// The bound does not involve the latent prior: the gap to the exact value is
/// `E_{q(z)} KL(p(c|z) ‖ p_θ(c|z))`, weighted by the encoder marginal.
pub fn supervised_bound(w: &DiscreteWorld) -> Result<SupervisedBound> {
    let labels = w.labels.as_ref().ok_or(Error::MissingTable("labels"))?;
    let cls = w.classifier.as_ref().ok_or(Error::MissingTable("classifier"))?;
    let pc: Vec<f64> = labels.iter().map(|r| r.iter().sum()).collect();
    let h_c = entropy(&pc);
    let mut cross_entropy = 0.0;
    for (c, pcx) in labels.iter().enumerate() {
        for (x, &p) in pcx.iter().enumerate() {
            if p <= 0.0 {
                continue;
            }
            for (z, &q) in w.enc[x].iter().enumerate() {
                if q > 0.0 {
                    let t = cls[z][c];
                    cross_entropy -= if t > 0.0 { p * q * t.ln() } else { f64::NEG_INFINITY };
                }
            }
        }
    }
    Ok(SupervisedBound {
        exact_izc: exact_mi(w, MiPair::ZC)?,
        bound: h_c - cross_entropy,
        h_c,
        cross_entropy,
    })
}

/// `E_{q(z)} KL(p(c|z) ‖ p_θ(c|z))`, the slack of [`supervised_bound`].
pub fn supervised_gap(w: &DiscreteWorld) -> Result<f64> {
    let cls = w.classifier.as_ref().ok_or(Error::MissingTable("classifier"))?;
    let truth = w.true_classifier()?;
    let qz = w.marginal_z();
    let mut acc = 0.0;
    for z in 0..w.nz() {
        if qz[z] > 0.0 {
            acc += qz[z] * exact_kl(&truth[z], &cls[z])?;
        }
    }
    Ok(acc)
}

fn to_matrix(name: &'static str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, |v| v.len());
    if r == 0 || c == 0 || rows.iter().any(|v| v.len() != c) {
        return Err(Error::InvalidTable {
            table: name.into(),
            detail: "ragged or empty matrix".into(),
        });
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn check_spd(name: &'static str, m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::NotSpd(name));
    }
    let asym = (m - m.transpose()).abs().max();
    if asym > 1e-12 * m.abs().max().max(1.0) {
        return Err(Error::NotSpd(name));
    }
    let min_eig = m.clone().symmetric_eigen().eigenvalues.min();
    if !(min_eig > 1e-10) {
        return Err(Error::NotSpd(name));
    }
    Ok(())
}

fn log_det_spd(name: &'static str, m: &DMatrix<f64>) -> Result<f64> {
    let chol = m.clone().cholesky().ok_or(Error::NotSpd(name))?;
    Ok(2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

/// `x ~ N(0, Σx)`, `z = A x + n`, `n ~ N(0, Σn)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearGaussianModel {
    prior_cov: DMatrix<f64>,
    enc_matrix: DMatrix<f64>,
    enc_noise_cov: DMatrix<f64>,
}

impl LinearGaussianModel {
    pub fn new(prior_cov: &[Vec<f64>], enc_matrix: &[Vec<f64>], enc_noise_cov: &[Vec<f64>]) -> Result<Self> {
        let prior_cov = to_matrix("prior_cov", prior_cov)?;
        let enc_matrix = to_matrix("enc_matrix", enc_matrix)?;
        let enc_noise_cov = to_matrix("enc_noise_cov", enc_noise_cov)?;
        check_spd("prior_cov", &prior_cov)?;
        check_spd("enc_noise_cov", &enc_noise_cov)?;
        if enc_matrix.ncols() != prior_cov.nrows() || enc_matrix.nrows() != enc_noise_cov.nrows() {
            return Err(Error::InvalidTable {
                table: "enc_matrix".into(),
                detail: format!(
                    "{}x{} does not map a {}-dim x to a {}-dim z",
                    enc_matrix.nrows(),
                    enc_matrix.ncols(),
                    prior_cov.nrows(),
                    enc_noise_cov.nrows()
                ),
            });
        }
        Ok(Self {
            prior_cov,
            enc_matrix,
            enc_noise_cov,
        })
    }

    /// Covariance of the aggregated posterior, `A Σx Aᵀ + Σn`.
    pub fn marginal_cov(&self) -> Vec<Vec<f64>> {
        let m = &self.enc_matrix * &self.prior_cov * self.enc_matrix.transpose() + &self.enc_noise_cov;
        (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
    }
}

/// `I(X;Z) = ½ log det(A Σx Aᵀ + Σn) − ½ log det Σn`.
pub fn lg_exact_mi(m: &LinearGaussianModel) -> Result<f64> {
    let marginal = &m.enc_matrix * &m.prior_cov * m.enc_matrix.transpose() + &m.enc_noise_cov;
    Ok(0.5 * (log_det_spd("marginal_cov", &marginal)? - log_det_spd("enc_noise_cov", &m.enc_noise_cov)?))
}

/// `KL(N(mean, cov) ‖ N(0, I)) = ½ (tr Σ + |m|² − k − log det Σ)`.
pub fn gaussian_kl_to_std_normal(mean: &[f64], cov: &[Vec<f64>]) -> Result<f64> {
    let s = to_matrix("cov", cov)?;
    if s.nrows() != mean.len() {
        return Err(Error::LengthMismatch(s.nrows(), mean.len()));
    }
    check_spd("cov", &s)?;
    let k = mean.len() as f64;
    let m2: f64 = mean.iter().map(|v| v * v).sum();
    Ok(0.5 * (s.trace() + m2 - k - log_det_spd("cov", &s)?))
}
