//! Sample-based divergence estimators: unbiased MMD² and the density-ratio
//! (binary classifier) estimate of KL.
//!
//! Logits are clamped to `±LOGIT_CLAMP` before entering a KL estimate, which
//! keeps the estimate finite on disjoint supports at the cost of bias.

mod mmd;
mod ratio;

use std::fmt;

use serde::Serialize;

pub use mmd::{mmd_permutation_test, mmd_unbiased, mmd_unbiased_var, MmdTest, RbfKernel, DEFAULT_BANDWIDTH_SCALES};
pub use ratio::{
    bce_loss, discriminator_step, kl_from_ratio, kl_from_ratio_var, kl_lower_bound_var, mc_cross_entropy,
    Discriminator, LOGIT_CLAMP,
};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    ClosedForm,
    Mmd,
    DensityRatio,
    Enumeration,
    MonteCarlo,
}

impl EstimatorKind {
    pub fn is_sample_based(self) -> bool {
        matches!(self, EstimatorKind::Mmd | EstimatorKind::DensityRatio | EstimatorKind::MonteCarlo)
    }

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::ClosedForm => "closed-form",
            EstimatorKind::Mmd => "mmd",
            EstimatorKind::DensityRatio => "density-ratio",
            EstimatorKind::Enumeration => "enumeration",
            EstimatorKind::MonteCarlo => "monte-carlo",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DivergenceEstimate {
    pub value: f64,
    pub kind: EstimatorKind,
    pub sample_sizes: (usize, usize),
}

impl DivergenceEstimate {
    pub fn new(value: f64, kind: EstimatorKind, sample_sizes: (usize, usize)) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::Domain {
                op: "divergence estimate",
                detail: format!("{kind} value is {value}"),
            });
        }
        if kind.is_sample_based() && (sample_sizes.0 == 0 || sample_sizes.1 == 0) {
            return Err(Error::InsufficientSamples {
                needed: 1,
                got: sample_sizes.0.min(sample_sizes.1),
            });
        }
        Ok(Self {
            value,
            kind,
            sample_sizes,
        })
    }
}
