use std::sync::atomic::{AtomicU64, Ordering};

use super::dense::Tensor;
use super::tape::Gradients;
use crate::error::Result;

static NEXT_PARAM_ID: AtomicU64 = AtomicU64::new(0);

/// Process-unique identity of a [`Parameter`]; clones share it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(u64);

/// A named trainable tensor together with its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Parameter {
    id: ParamId,
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self {
            id: ParamId(NEXT_PARAM_ID.fetch_add(1, Ordering::Relaxed)),
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn id(&self) -> ParamId {
        self.id
    }

    pub fn zero_grad(&mut self) {
        self.grad = Tensor::zeros(self.value.shape());
    }

    /// Adds this parameter's gradient from `grads`; returns whether one was present.
    pub fn accumulate(&mut self, grads: &Gradients) -> Result<bool> {
        match grads.for_param(self.id) {
            Some(g) => {
                self.grad.add_assign(g)?;
                Ok(true)
            }
            None => Ok(false),
        }
    }
}

/// Anything that owns a collection of parameters.
pub trait Module {
    fn parameters(&self) -> Vec<&Parameter>;
    fn parameters_mut(&mut self) -> Vec<&mut Parameter>;

    fn zero_grad(&mut self) {
        for p in self.parameters_mut() {
            p.zero_grad();
        }
    }

    fn accumulate_grads(&mut self, grads: &Gradients) -> Result<()> {
        for p in self.parameters_mut() {
            p.accumulate(grads)?;
        }
        Ok(())
    }

    fn num_parameters(&self) -> usize {
        self.parameters().iter().map(|p| p.value.numel()).sum()
    }
}
